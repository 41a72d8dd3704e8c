"""Run reports: one JSON document per run plus a flat CSV of loss traces."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

__all__ = ["RunReport", "emit_report"]


@dataclass
class RunReport:
    """Self-describing record of one benchmark run.

    ``config`` holds the fully-resolved settings (defaults applied), so a
    report alone reproduces its run. Metric keys are stable across versions.
    """

    task: str
    seed: int
    config: dict[str, Any]
    loss_traces: dict[str, list[float]] = field(default_factory=dict)
    metrics: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    wall_time_s: float = 0.0
    peak_alloc_bytes: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def comparable_dict(self) -> dict[str, Any]:
        """The report minus its wall-time field, for determinism checks."""
        out = self.to_dict()
        out.pop("wall_time_s")
        return out


def emit_report(report: RunReport, path: str | Path) -> Path:
    """Write ``<path>`` as pretty JSON and a loss-trace CSV alongside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    csv_path = path.with_suffix(".csv")
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["problem", "step", "loss"])
        for name in report.loss_traces:
            for i, value in enumerate(report.loss_traces[name]):
                writer.writerow([name, i, repr(value)])
    return path
