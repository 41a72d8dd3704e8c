"""Benchmark harness: desk-scale tasks, oracles, and the command line."""

from .config import BenchConfig, DataConfig, load_config, dump_config
from .report import RunReport, emit_report

__all__ = ["BenchConfig", "DataConfig", "load_config", "dump_config", "RunReport", "emit_report"]
