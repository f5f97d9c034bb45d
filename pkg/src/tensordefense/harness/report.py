"""Sweep/bench reports and their CSV / JSON serialization.

CSV column order is fixed (``COLUMNS``); extra columns, when a run produces
them, follow in first-seen order. Floats are written with ``repr`` so a
rerun with identical inputs yields identical bytes. Missing values are
empty cells in CSV and ``null`` in JSON.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import InvalidArgumentError

COLUMNS = (
    "axis", "value", "method", "rank", "alpha", "layers",
    "clean_r1", "clean_r5", "clean_r10",
    "adv_r1", "adv_r5", "adv_r10",
    "def_r1", "def_r5", "def_r10",
    "mean_sim_clean", "mean_sim_adv", "mean_sim_def",
    "ms_per_batch", "images_per_s", "overhead",
)
TIMING_COLUMNS = ("ms_per_batch", "images_per_s", "overhead")


@dataclass
class SweepReport:
    rows: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        cols = list(COLUMNS)
        for row in self.rows:
            cols += [k for k in row if k not in cols]
        return cols

    def column(self, name: str) -> list:
        return [row.get(name) for row in self.rows]

    def without_timing(self) -> "SweepReport":
        rows = [{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in self.rows]
        meta = {k: v for k, v in self.metadata.items() if k != "timestamp"}
        return SweepReport(rows, meta)

    def to_csv(self, include_timing: bool = True) -> str:
        cols = [c for c in self.columns if include_timing or c not in TIMING_COLUMNS]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for row in self.rows:
            writer.writerow([_cell(row.get(c)) for c in cols])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"columns": self.columns, "rows": self.rows, "metadata": self.metadata}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SweepReport":
        doc = json.loads(text)
        return cls(doc["rows"], doc.get("metadata", {}))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(str(v) for v in value)
    return str(value)


def emit_report(report: SweepReport, fmt: str, path) -> None:
    fmt = fmt.lower()
    if fmt == "csv":
        text = report.to_csv()
    elif fmt == "json":
        text = report.to_json()
    else:
        raise InvalidArgumentError(f"unknown report format {fmt!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def load_report(path) -> SweepReport:
    return SweepReport.from_json(Path(path).read_text())
