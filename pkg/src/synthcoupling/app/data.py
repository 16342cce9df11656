"""Dataset ingestion and atomic output writing."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import InvalidInputError
from .config import Columns

# Column layout of the public NSW / PSID text files.
DW_RAW_COLUMNS = ("treat", "age", "educ", "black", "hisp", "married", "nodegree", "re74", "re75", "re78")
DW_COVARIATES = ("age", "educ", "black", "hisp", "married", "nodegree", "re74", "re75", "u74", "u75")


@dataclass(frozen=True)
class Dataset:
    ids: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple

    def __post_init__(self):
        n = self.ids.size
        if not (self.treatment.size == self.outcome.size == self.covariates.shape[0] == n):
            raise InvalidInputError("dataset columns have different lengths")
        if not np.all((self.treatment == 0) | (self.treatment == 1)):
            raise InvalidInputError("treatment column must be binary 0/1")
        if self.treatment.sum() == 0 or self.treatment.sum() == n:
            raise InvalidInputError("dataset needs at least one treated and one control unit")
        if len(set(self.ids.tolist())) != n:
            raise InvalidInputError("unit ids must be unique")

    @property
    def treated(self) -> np.ndarray:
        return np.flatnonzero(self.treatment == 1)

    @property
    def control(self) -> np.ndarray:
        return np.flatnonzero(self.treatment == 0)

    def columns_of(self, names) -> np.ndarray:
        """Covariate matrix restricted to ``names`` (all covariates when None)."""
        if names is None:
            return self.covariates
        missing = [c for c in names if c not in self.covariate_names]
        if missing:
            raise InvalidInputError(f"unknown covariate columns {missing}")
        return self.covariates[:, [self.covariate_names.index(c) for c in names]]


def from_frame(df: pd.DataFrame, columns: Columns) -> Dataset:
    """Build a dataset from a frame using the configured column roles."""
    required = [columns.treatment, columns.outcome] + ([columns.id] if columns.id else [])
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise InvalidInputError(f"data is missing columns {missing}; found {list(df.columns)}")
    if columns.covariates is None:
        cov = [c for c in df.columns if c not in required]
    else:
        cov = list(columns.covariates)
        absent = [c for c in cov if c not in df.columns]
        if absent:
            raise InvalidInputError(f"covariate columns {absent} not in data")
    used = required + cov
    bad_rows = np.flatnonzero(df[used].isna().any(axis=1).to_numpy())
    if bad_rows.size:
        raise InvalidInputError(f"missing values in rows {bad_rows[:20].tolist()} (0-based, header excluded)")
    numeric = [columns.treatment, columns.outcome] + cov
    try:
        values = df[numeric].astype(float)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"non-numeric values in data: {exc}") from exc
    ids = df[columns.id].astype(str).to_numpy() if columns.id else np.arange(len(df)).astype(str)
    return Dataset(
        ids=ids,
        treatment=values[columns.treatment].to_numpy(),
        outcome=values[columns.outcome].to_numpy(),
        covariates=values[cov].to_numpy().reshape(len(df), len(cov)),
        covariate_names=tuple(cov),
    )


def load_csv(path: str | Path, columns: Columns) -> Dataset:
    try:
        df = pd.read_csv(path, comment="#", skipinitialspace=True)
    except FileNotFoundError as exc:
        raise InvalidInputError(f"data file not found: {path}") from exc
    except pd.errors.ParserError as exc:
        raise InvalidInputError(f"could not parse {path}: {exc}") from exc
    return from_frame(df, columns)


def read_dw_text(path: str | Path) -> pd.DataFrame:
    """One of the whitespace-separated NSW / PSID files, with zero-earnings indicators added.

    ``u74`` and ``u75`` are 1 when earnings in 1974 and 1975 are zero.
    """
    df = pd.read_csv(path, sep=r"\s+", header=None, engine="python")
    if df.shape[1] == len(DW_RAW_COLUMNS) - 1:
        # Files without 1974 earnings cannot supply the full covariate set.
        raise InvalidInputError(f"{path} has no 1974 earnings column; use the re74 subset files")
    if df.shape[1] != len(DW_RAW_COLUMNS):
        raise InvalidInputError(f"{path}: expected {len(DW_RAW_COLUMNS)} columns, found {df.shape[1]}")
    df.columns = DW_RAW_COLUMNS
    df["u74"] = (df["re74"] == 0).astype(float)
    df["u75"] = (df["re75"] == 0).astype(float)
    return df


def combine_dw(treated_path, control_path, control_treat_value: int = 0) -> pd.DataFrame:
    """Stack treated and control files into one frame with an ``id`` column."""
    treated = read_dw_text(treated_path)
    control = read_dw_text(control_path)
    if not (treated["treat"] == 1).all():
        raise InvalidInputError(f"{treated_path} contains non-treated rows")
    control = control.assign(treat=control_treat_value)
    df = pd.concat([treated, control], ignore_index=True)
    df.insert(0, "id", [f"t{i}" for i in range(len(treated))] + [f"c{i}" for i in range(len(control))])
    return df[["id", "treat", "re78", *DW_COVARIATES]]


DW_COLUMNS = Columns(id="id", treatment="treat", outcome="re78", covariates=DW_COVARIATES)


# ---------------------------------------------------------------- output


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write ``text`` to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=False, allow_nan=True) + "\n")


def frame_to_csv(df: pd.DataFrame, header_lines=(), footer_lines=()) -> str:
    """CSV text with full float precision and optional ``#`` comment lines around it."""
    parts = [f"# {line}\n" for line in header_lines]
    parts.append(df.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
    parts.extend(f"# {line}\n" for line in footer_lines)
    return "".join(parts)


def write_csv(path, df: pd.DataFrame, header_lines=(), footer_lines=()) -> Path:
    return atomic_write_text(path, frame_to_csv(df, header_lines, footer_lines))


def coupling_frame(matrix, control_ids, treated_ids) -> pd.DataFrame:
    df = pd.DataFrame(np.asarray(matrix), columns=[str(t) for t in treated_ids])
    df.insert(0, "control_id", [str(c) for c in control_ids])
    return df


def read_coupling(path) -> tuple[np.ndarray, list, list]:
    """Matrix, control ids and treated ids from a ``coupling.csv``."""
    df = pd.read_csv(path, comment="#", dtype={"control_id": str}, float_precision="round_trip")
    return df.drop(columns="control_id").to_numpy(dtype=float), df["control_id"].tolist(), list(df.columns[1:])


def read_comment_block(path) -> dict:
    """``key=value`` pairs from the ``#`` comment lines of an output CSV."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") and "=" in line:
                key, value = line[1:].strip().split("=", 1)
                out[key.strip()] = value.strip()
    return out
