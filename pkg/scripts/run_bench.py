"""Time defended inference against the undefended model.

    python3 scripts/run_bench.py --out results/ [--rank 64] [--batches 20]

Runs pinned to one BLAS thread; writes ``bench.csv`` and ``bench.json``.
"""

import argparse
from pathlib import Path

from threadpoolctl import threadpool_limits

from tensordefense.config import ExperimentConfig, HarnessConfig, load_config
from tensordefense.harness import DEFAULT_ENTRIES, BenchEntry, emit_report, run_bench


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--config")
    p.add_argument("--rank", type=int, default=64)
    p.add_argument("--batches", type=int)
    p.add_argument("--batch-size", type=int)
    args = p.parse_args()

    cfg = load_config(args.config)
    h = cfg.harness.to_dict()
    if args.batches:
        h["bench_batches"] = args.batches
    if args.batch_size:
        h["bench_batch_size"] = args.batch_size
    cfg = ExperimentConfig(cfg.model, cfg.attack, cfg.defense, HarnessConfig(**h))
    entries = [e if e.method is None else BenchEntry(e.method, e.layers, args.rank)
               for e in DEFAULT_ENTRIES]
    with threadpool_limits(limits=1):
        report = run_bench(entries, cfg)
    out = Path(args.out)
    emit_report(report, "csv", out / "bench.csv")
    emit_report(report, "json", out / "bench.json")
    for row in report.rows:
        print(f"{row['value']:>10}  {row['ms_per_batch']:8.2f} ms/batch  "
              f"{row['images_per_s']:8.1f} img/s  {row['overhead']:.2f}x")


if __name__ == "__main__":
    main()
