"""Throughput / overhead benchmark of defended inference.

Every configuration encodes the same batch. Timed repetitions are
interleaved round-robin across configurations (with a rotating start) so
slow drift of the machine affects all rows alike; the reported statistic is
the median over ``bench_batches`` timed repetitions after
``bench_warmup`` untimed ones.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..config import ExperimentConfig
from ..defense import build_registry
from ..model import last_norm_layers
from .corpus import build_corpus
from .report import SweepReport
from .sweep import _metadata, get_model


@dataclass(frozen=True)
class BenchEntry:
    """``method=None`` is the undefended baseline."""

    method: str | None
    layers: int
    rank: int = 64

    @property
    def label(self) -> str:
        if self.method is None:
            return "none"
        return f"{self.method}x{self.layers}"

    def to_dict(self) -> dict:
        return {"method": self.method, "layers": self.layers, "rank": self.rank}


DEFAULT_ENTRIES = (
    BenchEntry(None, 0, 0),
    BenchEntry("cp", 1),
    BenchEntry("tucker", 1),
    BenchEntry("tt", 1),
    BenchEntry("cp", 2),
    BenchEntry("tt", 2),
    BenchEntry("tt", 5),
)


def run_bench(entries=DEFAULT_ENTRIES, base: ExperimentConfig = ExperimentConfig(),
              model=None) -> SweepReport:
    """Time/batch, images/s and overhead vs. the undefended model.

    Defended entries use ``base.defense`` with method, rank and the last
    ``layers`` block norm layers taken from the entry. The baseline row is
    always measured, even when ``entries`` omits it.
    """
    entries = list(entries)
    if not any(e.method is None for e in entries):
        entries.insert(0, BenchEntry(None, 0, 0))
    h = base.harness
    model = model or get_model(base.model)
    images = build_corpus(model, h.bench_batch_size, h.corpus_seed, h.noise_std).images

    registries, defenses = [], []
    for e in entries:
        if e.method is None:
            registries.append(None)
            defenses.append(None)
            continue
        d = base.defense.replace(
            method=e.method, rank=e.rank,
            target_layers=tuple(last_norm_layers(base.model.depth, e.layers)),
        )
        defenses.append(d)
        registries.append(build_registry(d.target_layers, d, model.layer_names))

    n = len(entries)
    times = [[] for _ in range(n)]
    for rep in range(h.bench_warmup + h.bench_batches):
        for j in range(n):
            idx = (rep + j) % n
            t0 = time.perf_counter()
            model.encode_image(images, hooks=registries[idx])
            elapsed = time.perf_counter() - t0
            if rep >= h.bench_warmup:
                times[idx].append(elapsed)

    medians = [float(np.median(t)) * 1e3 for t in times]
    base_ms = medians[next(i for i, e in enumerate(entries) if e.method is None)]
    rows = []
    for e, d, ms in zip(entries, defenses, medians):
        rows.append({
            "axis": "bench",
            "value": e.label,
            "method": e.method or "none",
            "rank": e.rank,
            "alpha": d.alpha if d else None,
            "layers": list(d.target_layers) if d else [],
            "ms_per_batch": ms,
            "images_per_s": len(images) / (ms / 1e3),
            "overhead": ms / base_ms,
        })
    meta = _metadata("bench", base, entries=[e.to_dict() for e in entries])
    return SweepReport(rows, meta)
