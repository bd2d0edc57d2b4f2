"""Run reports and their append-safe CSV serialization."""

from __future__ import annotations

import os
from dataclasses import dataclass

CSV_HEADER = "pipeline,k,l,delta,eps,iterations,probes,cost,oracle,gap,resid_row,resid_col,ms,seed"


@dataclass
class SolveReport:
    """One pipeline run: parameters in, achieved quality out."""

    pipeline: str
    k: int
    l: int
    delta: float | None
    eps: float | None
    iterations: int
    probes: int
    cost: float
    oracle_cost: float | None
    gap: float | None
    resid_row: float
    resid_col: float
    wall_ms: float
    seed: int | None

    def csv_row(self) -> str:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        return ",".join(
            fmt(v)
            for v in (
                self.pipeline,
                self.k,
                self.l,
                self.delta,
                self.eps,
                self.iterations,
                self.probes,
                self.cost,
                self.oracle_cost,
                self.gap,
                self.resid_row,
                self.resid_col,
                self.wall_ms,
                self.seed,
            )
        )


def append_report(path: str, report: SolveReport) -> None:
    """Append one CSV row, writing the header only on first creation."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8") as fh:
        if new:
            fh.write(CSV_HEADER + "\n")
        fh.write(report.csv_row() + "\n")
