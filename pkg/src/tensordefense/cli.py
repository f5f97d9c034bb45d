"""Command-line entry point: ``tensordefense <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 numerical failure, 3 I/O
failure. Trailing ``section.key=value`` arguments override the JSON config.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import tdf
from .attack import perturbation_stats, pgd_attack
from .config import load_config
from .decomp import DecompSettings, decompose, reconstruct, save_factors
from .defense import apply_defense, build_registry
from .errors import (
    ConfigurationError,
    FormatError,
    InvalidArgumentError,
    NumericalFailureError,
)
from .harness import (
    BenchEntry,
    DEFAULT_ENTRIES,
    build_corpus,
    emit_report,
    load_report,
    recall_table,
    rerun_report,
    run_bench,
    run_sweep,
    save_corpus,
)
from .harness.corpus import load_captions, load_manifest
from .harness.sweep import get_model
from .tensor import frobenius_norm

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--config", help="JSON config with model/attack/defense/harness sections")
    p.add_argument("--out", required=True, help=out_help)
    p.add_argument("--seed", type=int, help="master seed; fans out to every component")
    p.add_argument("--threads", type=int, help="BLAS thread limit")
    p.add_argument("overrides", nargs="*", metavar="section.key=value",
                   help="config overrides, e.g. defense.alpha=0.2")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tensordefense",
                     description="Tensor-decomposition defense experiments on the toy encoder.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="subcommand")
    sub.required = True

    p = sub.add_parser("gen-corpus", help="write a seeded synthetic corpus directory")
    _common(p, "output directory")

    p = sub.add_parser("attack", help="PGD-attack every image in a manifest")
    _common(p, "output directory for adversarial TDF1 images")
    p.add_argument("--manifest", required=True, help="JSON array of {image, caption_id}")
    p.add_argument("--captions", help="captions.json (default: next to the manifest)")

    p = sub.add_parser("defend", help="defend a stored activation or run defended retrieval")
    _common(p, "output TDF1 tensor (activation input) or JSON summary (manifest input)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="TDF1 activation tensor to filter")
    src.add_argument("--manifest", help="manifest of images to encode with defense hooks")
    p.add_argument("--captions", help="captions.json (default: next to the manifest)")

    p = sub.add_parser("sweep", help="run a parameter sweep and write a report")
    _common(p, "report path; .json writes JSON, anything else CSV")
    p.add_argument("--axis", choices=["alpha", "rank", "method", "layer", "multilayer"])
    p.add_argument("--values", help="comma-separated values for the axis")
    p.add_argument("--rerun", help="JSON report whose metadata defines the run")

    p = sub.add_parser("bench", help="time defended inference against the baseline")
    _common(p, "report path; .json writes JSON, anything else CSV")
    p.add_argument("--entries", help="comma list of method:layers, e.g. none,tt:1,tt:5")
    p.add_argument("--rank", type=int, default=64, help="decomposition rank (default 64)")

    p = sub.add_parser("decompose", help="decompose one TDF1 tensor and report the error")
    p.add_argument("--input", required=True, help="TDF1 tensor")
    p.add_argument("--out", help="optional TDFC container for the factors")
    p.add_argument("--method", choices=["cp", "tucker", "tt"], default="tt")
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, help="BLAS thread limit")
    return parser


def _parse_values(axis: str, text: str) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if axis in ("alpha",):
            out.append(float(item))
        elif axis in ("rank", "multilayer"):
            out.append(int(item))
        else:
            out.append(item)
    if not out:
        raise UsageError("--values is empty")
    return out


def _parse_entries(text: str | None, rank: int) -> list[BenchEntry]:
    if text is None:
        return [e if e.method is None else BenchEntry(e.method, e.layers, rank)
                for e in DEFAULT_ENTRIES]
    entries = []
    for item in text.split(","):
        item = item.strip()
        if item == "none":
            entries.append(BenchEntry(None, 0, 0))
            continue
        method, _, layers = item.partition(":")
        try:
            entries.append(BenchEntry(method, int(layers or 1), rank))
        except ValueError:
            raise UsageError(f"bad bench entry {item!r}") from None
    return entries


def _write_report(report, out: str) -> None:
    emit_report(report, "json" if out.endswith(".json") else "csv", out)


def _load_pairs(manifest_path, captions_path):
    manifest = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    captions = load_captions(captions_path or base / "captions.json")
    images = np.stack([tdf.load_tensor(base / e["image"]) for e in manifest])
    try:
        tokens = np.array([captions[int(e["caption_id"])] for e in manifest])
    except KeyError as exc:
        raise ConfigurationError(f"caption id {exc} missing from captions") from None
    return manifest, images, tokens


def cmd_gen_corpus(args, cfg) -> None:
    model = get_model(cfg.model)
    h = cfg.harness
    corpus = build_corpus(model, h.corpus_size, h.corpus_seed, h.noise_std)
    save_corpus(corpus, args.out, cfg.model, h.noise_std)
    print(f"wrote {len(corpus)} pairs to {args.out}")


def cmd_attack(args, cfg) -> None:
    model = get_model(cfg.model)
    manifest, images, tokens = _load_pairs(args.manifest, args.captions)
    text = model.encode_text(tokens)
    bs = cfg.harness.batch_size
    adv = np.concatenate([
        pgd_attack(model, images[s:s + bs], text[s:s + bs], cfg.attack)
        for s in range(0, len(images), bs)
    ])
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    new_manifest, stats = [], []
    for entry, x, xa in zip(manifest, images, adv):
        rel = f"images/{Path(entry['image']).stem}.adv.tdf"
        tdf.save_tensor(out / rel, xa)
        new_manifest.append({"image": rel, "caption_id": int(entry["caption_id"])})
        linf, l2, frac = perturbation_stats(x, xa)
        stats.append({"caption_id": int(entry["caption_id"]), "linf": linf, "l2": l2,
                      "changed_fraction": frac})
    (out / "manifest.json").write_text(json.dumps(new_manifest, indent=1) + "\n")
    (out / "captions.json").write_text(json.dumps(
        {str(int(e["caption_id"])): [int(t) for t in tok] for e, tok in zip(manifest, tokens)},
        indent=1, sort_keys=True) + "\n")
    clean_sim = float(np.mean(np.sum(model.encode_image(images) * text, 1)))
    adv_sim = float(np.mean(np.sum(model.encode_image(adv) * text, 1)))
    summary = {"attack": cfg.attack.to_dict(), "mean_sim_clean": clean_sim,
               "mean_sim_adv": adv_sim, "pairs": stats}
    (out / "attack.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"attacked {len(adv)} images: mean similarity {clean_sim:.4f} -> {adv_sim:.4f}")


def cmd_defend(args, cfg) -> None:
    if args.input:
        t = tdf.load_tensor(args.input)
        out = apply_defense(t, cfg.defense, layer="<stored>")
        tdf.save_tensor(args.out, out)
        rel = frobenius_norm(out - t) / max(frobenius_norm(t), np.finfo(float).tiny)
        print(f"defended tensor {t.shape}: relative change {rel:.6g}")
        return
    model = get_model(cfg.model)
    _, images, tokens = _load_pairs(args.manifest, args.captions)
    text = model.encode_text(tokens)
    registry = build_registry(cfg.defense.target_layers, cfg.defense, model.layer_names)
    bs = cfg.harness.batch_size
    plain = np.concatenate([model.encode_image(images[s:s + bs]) for s in range(0, len(images), bs)])
    defended = np.concatenate([
        model.encode_image(images[s:s + bs], hooks=registry) for s in range(0, len(images), bs)
    ])
    summary = {
        "defense": cfg.defense.to_dict(),
        "undefended": {f"r{k}": v for k, v in recall_table(plain, text).items()},
        "defended": {f"r{k}": v for k, v in recall_table(defended, text).items()},
        "mean_sim_undefended": float(np.mean(np.sum(plain * text, 1))),
        "mean_sim_defended": float(np.mean(np.sum(defended * text, 1))),
    }
    Path(args.out).write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"Recall@1 {summary['undefended']['r1']:.3f} -> {summary['defended']['r1']:.3f}")


def cmd_sweep(args, cfg) -> None:
    if args.rerun:
        report = rerun_report(load_report(args.rerun))
    else:
        if not args.axis or not args.values:
            raise UsageError("sweep needs --axis and --values (or --rerun)")
        report = run_sweep(args.axis, _parse_values(args.axis, args.values), cfg)
    _write_report(report, args.out)
    for row in report.rows:
        print(f"{row['axis']}={row['value']}: clean {row['clean_r1']:.3f} "
              f"adv {row['adv_r1']:.3f} defended {row['def_r1']:.3f}")


def cmd_bench(args, cfg) -> None:
    report = run_bench(_parse_entries(args.entries, args.rank), cfg)
    _write_report(report, args.out)
    for row in report.rows:
        print(f"{row['value']:>10}: {row['ms_per_batch']:8.2f} ms/batch "
              f"{row['images_per_s']:8.1f} img/s {row['overhead']:.2f}x")


def cmd_decompose(args) -> None:
    t = tdf.load_tensor(args.input)
    settings = DecompSettings(args.method, args.rank, args.max_iters, args.tolerance, args.seed)
    t0 = time.perf_counter()
    factors = decompose(t, settings)
    approx = reconstruct(factors)
    elapsed = time.perf_counter() - t0
    norm = frobenius_norm(t)
    err = frobenius_norm(t - approx) / norm if norm > 0 else frobenius_norm(approx)
    ranks = [factors.rank] if hasattr(factors, "rank") else list(factors.ranks)
    if args.out:
        save_factors(args.out, factors)
    print(json.dumps({"method": args.method, "ranks": ranks, "relative_error": err,
                      "seconds": elapsed, "shape": list(t.shape)}))


def _threads(n):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads
    if args.command == "bench" and threads is None:
        threads = 1
    try:
        with _threads(threads):
            if args.command == "decompose":
                cmd_decompose(args)
                return EXIT_OK
            cfg = load_config(args.config, args.overrides, args.seed)
            {
                "gen-corpus": cmd_gen_corpus,
                "attack": cmd_attack,
                "defend": cmd_defend,
                "sweep": cmd_sweep,
                "bench": cmd_bench,
            }[args.command](args, cfg)
    except (UsageError, ConfigurationError, InvalidArgumentError) as exc:
        print(f"tensordefense: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailureError as exc:
        print(f"tensordefense: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, FormatError) as exc:
        print(f"tensordefense: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
