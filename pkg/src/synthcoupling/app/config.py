"""Run configuration parsed from a JSON file.

Every setting has a default, so ``{}`` is a valid configuration. Unknown keys
are rejected to catch typos, and the parsed form is echoed into each report.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..errors import InvalidInputError
from ..kernels import KernelSpec
from ..solver import SolveConfig

WEIGHT_MODES = ("uniform", "ipw_att", "ipw_ate")
DEFAULT_SEED = 20240101


def _reject_unknown(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise InvalidInputError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass(frozen=True)
class Columns:
    """Roles of the CSV columns. ``covariates=None`` means every remaining column."""

    id: str | None = "id"
    treatment: str = "treat"
    outcome: str = "outcome"
    covariates: tuple | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "Columns":
        _reject_unknown(d, ("id", "treatment", "outcome", "covariates"), "columns")
        cov = d.get("covariates")
        return cls(
            id=d.get("id", "id"),
            treatment=d.get("treatment", "treat"),
            outcome=d.get("outcome", "outcome"),
            covariates=None if cov is None else tuple(cov),
        )


@dataclass(frozen=True)
class WeightSettings:
    mode: str = "uniform"
    propensity_covariates: tuple | None = None
    ridge: float = 0.0
    trim: tuple | None = None

    def __post_init__(self):
        if self.mode not in WEIGHT_MODES:
            raise InvalidInputError(f"weights.mode must be one of {WEIGHT_MODES}, got {self.mode!r}")
        if self.trim is not None:
            lo, hi = self.trim
            if not 0 < lo < hi < 1:
                raise InvalidInputError(f"trim bounds must satisfy 0 < lo < hi < 1, got {self.trim}")

    @property
    def needs_propensity(self) -> bool:
        return self.mode != "uniform" or self.trim is not None

    @classmethod
    def from_dict(cls, d: dict) -> "WeightSettings":
        _reject_unknown(d, ("mode", "propensity_covariates", "ridge", "trim"), "weights")
        cov = d.get("propensity_covariates")
        trim = d.get("trim")
        return cls(
            mode=d.get("mode", "uniform"),
            propensity_covariates=None if cov is None else tuple(cov),
            ridge=float(d.get("ridge", 0.0)),
            trim=None if trim is None else (float(trim[0]), float(trim[1])),
        )


@dataclass(frozen=True)
class InferenceSettings:
    alpha: float = 0.05
    rho: float | str = "cv"
    folds: int = 5
    grid: tuple | None = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.rho != "cv" and not (isinstance(self.rho, (int, float)) and self.rho > 0):
            raise InvalidInputError(f"inference.rho must be 'cv' or a positive number, got {self.rho!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceSettings":
        _reject_unknown(d, ("alpha", "rho", "folds", "grid"), "inference")
        grid = d.get("grid")
        rho = d.get("rho", "cv")
        return cls(
            alpha=float(d.get("alpha", 0.05)),
            rho=rho if rho == "cv" else float(rho),
            folds=int(d.get("folds", 5)),
            grid=None if grid is None else tuple(float(g) for g in grid),
        )


@dataclass(frozen=True)
class BenchSettings:
    k: tuple = (5, 10)
    regression: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSettings":
        _reject_unknown(d, ("k", "regression"), "bench")
        k = d.get("k", (5, 10))
        k = (k,) if isinstance(k, int) else tuple(int(x) for x in k)
        if any(x < 1 for x in k):
            raise InvalidInputError("bench.k values must be positive")
        return cls(k=k, regression=bool(d.get("regression", True)))


@dataclass(frozen=True)
class SimulationSettings:
    """Fixed-design simulation: ``N`` equally spaced points on [0, 1], ``f0 = k(0.5, .)``."""

    n: int = 500
    n_treated: int = 200
    gamma: float = 2.5
    sigma0: tuple = (0.1, 1.0, 3.0)
    lambdas: tuple = (0.1, 0.01, 0.001)
    replications: int = 1000
    alpha: float = 0.05
    folds: int = 5
    max_outer: int = 10_000
    tol_outer: float = 1e-7
    warm_start: bool = True
    workers: int = 1
    chunk: int = 100

    def __post_init__(self):
        if not 2 <= self.n_treated < self.n - 1:
            raise InvalidInputError("simulation needs 2 <= N_t < N - 1")
        if self.replications < 1 or self.workers < 1 or self.chunk < 1:
            raise InvalidInputError("replications, workers and chunk must be positive")
        if not self.sigma0 or any(s < 0 for s in self.sigma0):
            raise InvalidInputError("sigma0 must be a nonempty list of nonnegative values")
        if not self.lambdas or any(not lam > 0 for lam in self.lambdas):
            raise InvalidInputError("simulation lambdas must be a nonempty list of positive values")
        if self.gamma <= 0 or not 0 < self.alpha < 1:
            raise InvalidInputError("need gamma > 0 and 0 < alpha < 1")
        if self.n - self.n_treated < self.folds:
            raise InvalidInputError("fewer controls than cross-validation folds")

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationSettings":
        names = cls.__dataclass_fields__
        aliases = {"N": "n", "N_t": "n_treated", "lambda": "lambdas", "R": "replications"}
        d = {aliases.get(k, k): v for k, v in d.items()}
        _reject_unknown(d, names, "simulation")
        for key in ("sigma0", "lambdas"):
            if key in d:
                d[key] = tuple(float(x) for x in (d[key] if isinstance(d[key], (list, tuple)) else [d[key]]))
        return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    columns: Columns = field(default_factory=Columns)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    standardize: bool = False
    lam: float | str = 0.01
    weights: WeightSettings = field(default_factory=WeightSettings)
    solver: dict = field(default_factory=dict)
    inference: InferenceSettings = field(default_factory=InferenceSettings)
    bench: BenchSettings = field(default_factory=BenchSettings)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.lam != "auto" and not (isinstance(self.lam, (int, float)) and self.lam >= 0):
            raise InvalidInputError(f"lambda must be 'auto' or a nonnegative number, got {self.lam!r}")
        if self.seed < 0:
            raise InvalidInputError("seed must be nonnegative")
        # Validate solver settings now rather than at solve time.
        self.solve_config(1.0)

    def solve_config(self, lam: float) -> SolveConfig:
        return SolveConfig.from_dict({**self.solver, "lam": lam})

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _reject_unknown(
            d,
            ("columns", "kernel", "standardize", "lambda", "weights", "solver", "inference", "bench",
             "simulation", "seed"),
            "config",
        )
        solver = dict(d.get("solver", {}))
        if "lam" in solver or "lambda" in solver:
            raise InvalidInputError("set lambda at the top level, not under solver")
        lam = d.get("lambda", 0.01)
        return cls(
            columns=Columns.from_dict(d.get("columns", {})),
            kernel=KernelSpec.from_dict(d.get("kernel", {})),
            standardize=bool(d.get("standardize", False)),
            lam=lam if lam == "auto" else float(lam),
            weights=WeightSettings.from_dict(d.get("weights", {})),
            solver=solver,
            inference=InferenceSettings.from_dict(d.get("inference", {})),
            bench=BenchSettings.from_dict(d.get("bench", {})),
            simulation=SimulationSettings.from_dict(d.get("simulation", {})),
            seed=int(d.get("seed", DEFAULT_SEED)),
        )

    def to_dict(self) -> dict:
        out = {
            "columns": asdict(self.columns),
            "kernel": self.kernel.to_dict(),
            "standardize": self.standardize,
            "lambda": self.lam,
            "weights": asdict(self.weights),
            "solver": asdict(self.solve_config(1.0)),
            "inference": asdict(self.inference),
            "bench": asdict(self.bench),
            "simulation": asdict(self.simulation),
            "seed": self.seed,
        }
        out["solver"].pop("lam")
        return json.loads(json.dumps(out))


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    """Read a JSON config (or defaults when ``path`` is None); ``seed`` overrides the file."""
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise InvalidInputError("config must be a JSON object")
    if seed is not None:
        d = {**d, "seed": seed}
    return RunConfig.from_dict(d)
