"""Command-line front end: data ingestion, configuration, pipelines, simulation and benchmarks."""

from .cli import main

__all__ = ["main"]
