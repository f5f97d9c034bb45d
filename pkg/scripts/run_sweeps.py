"""Run the five parameter sweeps on the seeded toy setup and write reports.

    python3 scripts/run_sweeps.py --out results/ [--seed N] [--corpus-size 200]

Each sweep writes ``<axis>.csv`` and ``<axis>.json`` (the JSON can be
re-run with ``tensordefense sweep --rerun``). The attacked corpus is built
once and shared by every sweep.
"""

import argparse
from pathlib import Path

from tensordefense.config import ExperimentConfig, HarnessConfig, load_config
from tensordefense.harness import emit_report, prepare, run_sweep
from tensordefense.model import last_norm_layers


def sweeps(cfg: ExperimentConfig):
    depth = cfg.model.depth
    d = cfg.defense
    last5 = tuple(last_norm_layers(depth, min(5, depth)))
    return [
        # name, axis, values, defense held fixed
        ("alpha_rank32", "alpha", [0.1, 0.2, 0.3, 0.5, 0.7, 0.9],
         d.replace(method="tt", rank=32, target_layers=("final_norm",))),
        ("alpha_rank8", "alpha", [0.1, 0.2, 0.3, 0.5, 0.7, 0.9],
         d.replace(method="tt", rank=8, target_layers=("final_norm",))),
        ("rank", "rank", [2, 4, 8, 16, 32, 64, 128, 256, 512],
         d.replace(method="tt", alpha=0.2, target_layers=("final_norm",))),
        ("method_last5", "method", ["cp", "tucker", "tt"],
         d.replace(rank=8, alpha=0.2, target_layers=last5)),
        ("method_final", "method", ["cp", "tucker", "tt"],
         d.replace(rank=8, alpha=0.2, target_layers=("final_norm",))),
        ("layer", "layer", ["final_norm"] + [f"block{i}.{k}" for i in range(depth)
                                             for k in ("norm2", "attn_out", "mlp_out")],
         d.replace(method="tt", rank=8, alpha=0.2)),
        ("multilayer", "multilayer", list(range(1, depth + 1)),
         d.replace(method="tt", rank=8, alpha=0.2)),
    ]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--corpus-size", type=int)
    args = p.parse_args()

    cfg = load_config(args.config, seed=args.seed)
    if args.corpus_size:
        h = cfg.harness.to_dict() | {"corpus_size": args.corpus_size}
        cfg = ExperimentConfig(cfg.model, cfg.attack, cfg.defense, HarnessConfig(**h))
    out = Path(args.out)
    ev = prepare(cfg)
    for name, axis, values, defense in sweeps(cfg):
        run_cfg = ExperimentConfig(cfg.model, cfg.attack, defense, cfg.harness)
        report = run_sweep(axis, values, run_cfg, ev)
        emit_report(report, "csv", out / f"{name}.csv")
        emit_report(report, "json", out / f"{name}.json")
        print(f"== {name}")
        for row in report.rows:
            print(f"  {str(row['value']):>16}  clean {row['clean_r1']:.3f}  "
                  f"adv {row['adv_r1']:.3f}  def {row['def_r1']:.3f}  "
                  f"def-clean {row['def_clean_r1']:.3f}")


if __name__ == "__main__":
    main()
