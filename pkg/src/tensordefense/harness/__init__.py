"""Retrieval evaluation, parameter sweeps and the overhead benchmark."""

from .bench import DEFAULT_ENTRIES, BenchEntry, run_bench
from .corpus import RetrievalCorpus, build_corpus, load_corpus, save_corpus
from .report import COLUMNS, SweepReport, emit_report, load_report
from .retrieval import recall_at_k, recall_table
from .sweep import Axis, prepare, run_sweep
from ..config import ExperimentConfig


def rerun_report(report: SweepReport) -> SweepReport:
    """Re-run a sweep or bench from the metadata embedded in ``report``."""
    meta = report.metadata
    cfg = ExperimentConfig.from_dict(meta["config"])
    if meta.get("kind") == "bench":
        entries = [BenchEntry(**e) for e in meta["entries"]]
        return run_bench(entries, cfg)
    return run_sweep(meta["axis"], meta["values"], cfg)
