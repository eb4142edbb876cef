"""Convergence reports: per-iteration records, termination reason, serialization."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__

CONVERGED = "converged"
MAX_ITERS = "max_iters"
DIVERGED = "diverged"


@dataclass
class IterationRecord:
    iter: int
    train_err: float
    test_err: float | None = None
    seconds: float = 0.0
    flags: list = field(default_factory=list)
    ops: dict = field(default_factory=dict)


@dataclass
class ConvergenceReport:
    algorithm: str
    config: dict
    records: list = field(default_factory=list)
    termination: str | None = None
    metadata: dict = field(default_factory=dict)
    version: str = __version__

    def add(self, record: IterationRecord) -> None:
        self.records.append(record)

    @property
    def iterations(self) -> int:
        return self.records[-1].iter if self.records else 0

    @property
    def final_train_error(self) -> float:
        return self.records[-1].train_err if self.records else math.nan

    @property
    def final_test_error(self):
        return self.records[-1].test_err if self.records else None

    @property
    def converged(self) -> bool:
        return self.termination == CONVERGED

    @property
    def wall_time(self) -> float:
        return sum(r.seconds for r in self.records)

    def summary(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "version": self.version,
            "termination": self.termination,
            "iterations": self.iterations,
            "final_train_err": self.final_train_error,
            "final_test_err": self.final_test_error,
            "wall_time": self.wall_time,
            "config": self.config,
            "metadata": self.metadata,
        }

    def deterministic_view(self) -> dict:
        """Report content without wall-clock timings and worker count, for reproducibility checks."""
        recs = [{k: v for k, v in asdict(r).items() if k != "seconds"} for r in self.records]
        summ = {k: v for k, v in self.summary().items() if k != "wall_time"}
        summ["config"] = {k: v for k, v in self.config.items() if k != "threads"}
        return {"summary": summ, "records": recs}

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    def write(self, out_dir, prefix: str = "report", csv_too: bool = False) -> dict:
        """Write ``<prefix>.jsonl`` and ``<prefix>_summary.json`` (and ``.csv``); returns the paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"jsonl": out_dir / f"{prefix}.jsonl", "summary": out_dir / f"{prefix}_summary.json"}
        paths["jsonl"].write_text(self.to_jsonl())
        paths["summary"].write_text(json.dumps(self.summary(), indent=2) + "\n")
        if csv_too:
            paths["csv"] = out_dir / f"{prefix}.csv"
            with open(paths["csv"], "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "train", "test", "seconds"])
                for r in self.records:
                    w.writerow([r.iter, repr(r.train_err), "" if r.test_err is None else repr(r.test_err), repr(r.seconds)])
        return paths
