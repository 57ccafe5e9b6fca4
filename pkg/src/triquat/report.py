"""Check records and report emission shared by the CLI subcommands.

Every record carries its measured values, the tolerance it was judged
against, a digest of its inputs, and an explicit verdict.  Reports are
written as JSON; tabular payloads additionally go to CSV.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__


def digest(*parts) -> str:
    """Short stable digest of arrays, dicts, and scalars."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(np.ascontiguousarray(part).tobytes())
            h.update(str(part.shape).encode())
        elif isinstance(part, (dict, list, tuple)):
            h.update(json.dumps(part, sort_keys=True, default=str).encode())
        else:
            h.update(str(part).encode())
    return h.hexdigest()[:16]


@dataclass
class CheckRecord:
    name: str
    values: dict
    tolerance: float
    passed: bool
    inputs_digest: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "values": _plain(self.values),
                "tolerance": self.tolerance, "passed": bool(self.passed),
                "inputs_digest": self.inputs_digest}


def _plain(obj: Any):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


@dataclass
class Report:
    command: str
    records: list[CheckRecord] = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    started: float = field(default_factory=time.time)

    def add(self, name: str, values: dict, tolerance: float, passed: bool,
            inputs_digest: str = "") -> CheckRecord:
        rec = CheckRecord(name=name, values=values, tolerance=float(tolerance),
                          passed=bool(passed), inputs_digest=inputs_digest)
        self.records.append(rec)
        return rec

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "toolkit_version": __version__,
            "wall_time_s": time.time() - self.started,
            "passed": self.passed,
            "records": [r.as_dict() for r in self.records],
            "tables": _plain(self.tables),
        }

    def write(self, out_dir: Path, stem: str) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{stem}.json"
        path.write_text(json.dumps(self.as_dict(), indent=2))
        for table_name, rows in self.tables.items():
            if not rows:
                continue
            tpath = out_dir / f"{stem}_{table_name}.csv"
            with open(tpath, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
                writer.writeheader()
                for row in rows:
                    writer.writerow(_plain(row))
        return path

    def print_summary(self) -> None:
        for rec in self.records:
            verdict = "PASS" if rec.passed else "FAIL"
            print(f"[{verdict}] {rec.name} (tol {rec.tolerance:g})")
            if not rec.passed:
                print(f"       values: {_plain(rec.values)}")
        print(f"{'ALL PASS' if self.passed else 'FAILURES PRESENT'} "
              f"({len(self.records)} checks)")
