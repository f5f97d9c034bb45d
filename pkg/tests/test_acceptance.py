"""Acceptance gates, one test per criterion.

Each check returns ``(ok, detail)``; the test records a PASS/FAIL line
(printed in the pytest terminal summary, or directly when this file is run
as a script) and then asserts. Tolerances and thresholds are pinned here.
"""

import sys
import time

import numpy as np
import pytest

from tensordefense.attack import AttackConfig, pgd_attack
from tensordefense.config import ExperimentConfig
from tensordefense.decomp import DecompSettings, Method, decompose, reconstruct
from tensordefense.defense import DefenseConfig, apply_defense
from tensordefense.harness import SweepReport, prepare, rerun_report, run_bench, run_sweep
from tensordefense.harness.bench import BenchEntry
from tensordefense.harness.corpus import build_corpus
from tensordefense.harness.sweep import get_model
from tensordefense.model import ToyEncoderConfig
from tensordefense.tensor import fold, frobenius_norm, mode_n_product, svd, unfold

RESULTS: dict[int, str] = {}

PROPERTY_CASES = 250  # per property family, >= 200 required
COMMUTE_TOL = 1e-10
SVD_TOL = 1e-8
CP_EXACT_TOL = 1e-6
MONOTONE_SLACK = 1e-10
RANK_SLACK = 1e-9
TT_IDENTITY_RTOL = 1e-6
FULL_RANK_TOL = 1e-8
FD_STEP = 1e-4
FD_RTOL = 1e-3
FD_COORDS = 128
PGD_BATCH = 32
PGD_MIN_DROP = 0.05
BENCH_RANK = 64
BENCH_SEPARATION = 1.10

# toy-scaled alpha sweep rank; the width-64 toy leaves rank 32 nearly lossless
ALPHA_SWEEP_RANKS = (8, 32)
LOW_ALPHAS = (0.1, 0.2, 0.3)
HIGH_ALPHAS = (0.7, 0.8, 0.9)
LOW_RANKS = (8, 16, 32)
RANK_SWEEP = (8, 16, 32, 64, 128, 256)


def record(n, ok, detail, elapsed, budget):
    within = elapsed < budget
    status = "PASS" if ok and within else "FAIL"
    line = f"criterion {n}: {status}  {detail}  [{elapsed:.1f}s / {budget:.0f}s]"
    RESULTS[n] = line
    return ok and within, line


# ---------------------------------------------------------------- 1


def check_tensor_core():
    r = np.random.default_rng(101)
    fails = []
    for _ in range(PROPERTY_CASES):
        shape = tuple(r.integers(1, 5, size=r.integers(1, 6)))
        t = r.normal(size=shape)
        for mode in range(len(shape)):
            if not np.array_equal(fold(unfold(t, mode), mode, shape), t):
                fails.append(("fold", shape, mode))
    worst_commute = 0.0
    for _ in range(PROPERTY_CASES):
        shape = tuple(r.integers(1, 6, size=r.integers(2, 5)))
        i, j = r.choice(len(shape), size=2, replace=False)
        t = r.normal(size=shape)
        a = r.normal(size=(r.integers(1, 6), shape[i]))
        b = r.normal(size=(r.integers(1, 6), shape[j]))
        one = mode_n_product(mode_n_product(t, a, i), b, j)
        two = mode_n_product(mode_n_product(t, b, j), a, i)
        worst_commute = max(worst_commute, frobenius_norm(one - two) / frobenius_norm(one))
    worst_rec = worst_orth = 0.0
    for case in range(PROPERTY_CASES):
        m = r.normal(size=tuple(r.integers(1, 65, size=2)))
        method = "jacobi" if case % 2 else "lapack"
        u, s, v = svd(m, method=method)
        k = s.size
        worst_rec = max(worst_rec, np.linalg.norm(m - (u * s) @ v.T) / np.linalg.norm(m))
        worst_orth = max(worst_orth, np.abs(u.T @ u - np.eye(k)).max(),
                         np.abs(v.T @ v - np.eye(k)).max())
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            fails.append(("svd order", m.shape))
    ok = (not fails and worst_commute <= COMMUTE_TOL and worst_rec <= SVD_TOL
          and worst_orth <= SVD_TOL)
    detail = (f"{3 * PROPERTY_CASES} cases; fold exact failures={len(fails)}, "
              f"commute={worst_commute:.1e}, svd rec={worst_rec:.1e}, orth={worst_orth:.1e}")
    return ok, detail


# ---------------------------------------------------------------- 2


def _outer(vs):
    out = vs[0]
    for v in vs[1:]:
        out = np.multiply.outer(out, v)
    return out


def check_decomp():
    r = np.random.default_rng(202)
    problems = []
    worst_cp = 0.0
    for _ in range(20):
        shape = tuple(r.integers(2, 7, size=r.integers(2, 5)))
        t = _outer([r.normal(size=n) for n in shape])
        f = decompose(t, DecompSettings(Method.CP, 1, seed=int(r.integers(1 << 31))))
        worst_cp = max(worst_cp, frobenius_norm(t - reconstruct(f)) / frobenius_norm(t))
    if worst_cp > CP_EXACT_TOL:
        problems.append(f"cp exact {worst_cp:.1e}")

    for case in range(30):
        t = r.normal(size=tuple(r.integers(2, 7, size=3)))
        for method in (Method.CP, Method.TUCKER):
            errs = decompose(t, DecompSettings(method, int(r.integers(1, 5)), seed=case)).errors
            if any(b > a + MONOTONE_SLACK for a, b in zip(errs, errs[1:])):
                problems.append(f"{method.value} monotonicity case {case}")

    for case in range(6):
        t = r.normal(size=(4, 5, 6))
        for method in Method:
            prev = np.inf
            for rank in range(1, 8):
                f = decompose(t, DecompSettings(method, rank, seed=case))
                e = frobenius_norm(t - reconstruct(f))
                if e > prev + RANK_SLACK:
                    problems.append(f"{method.value} rank monotonicity r={rank} case {case}")
                prev = e

    worst_tt = 0.0
    for _ in range(40):
        t = r.normal(size=tuple(r.integers(1, 6, size=r.integers(2, 6))))
        f = decompose(t, DecompSettings(Method.TT, int(r.integers(1, 5))))
        measured = frobenius_norm(t - reconstruct(f))
        if measured > 1e-12:
            worst_tt = max(worst_tt, abs(f.truncation_error - measured) / measured)
    if worst_tt > TT_IDENTITY_RTOL:
        problems.append(f"tt identity {worst_tt:.1e}")

    worst_full = 0.0
    for _ in range(10):
        t = r.normal(size=tuple(r.integers(1, 7, size=r.integers(2, 5))))
        for method in (Method.TUCKER, Method.TT):
            f = decompose(t, DecompSettings(method, 1000))
            worst_full = max(worst_full, frobenius_norm(t - reconstruct(f)) / frobenius_norm(t))
    if worst_full > FULL_RANK_TOL:
        problems.append(f"full rank {worst_full:.1e}")

    t = r.normal(size=(5, 6, 7))
    for method in Method:
        s = DecompSettings(method, 3, seed=17)
        if not np.array_equal(reconstruct(decompose(t, s)), reconstruct(decompose(t, s))):
            problems.append(f"{method.value} determinism")

    detail = (f"cp exact={worst_cp:.1e}, tt identity={worst_tt:.1e}, "
              f"full-rank={worst_full:.1e}, issues={problems or 'none'}")
    return not problems, detail


# ---------------------------------------------------------------- 3


def check_gradient(model):
    r = np.random.default_rng(303)
    x = r.uniform(0.05, 0.95, size=model.config.image_shape)
    t = model.encode_text(r.integers(0, model.config.vocab_size, size=model.config.caption_length))
    g = model.grad_wrt_image(x, t)
    flat = r.choice(x.size, size=FD_COORDS, replace=False)
    worst = 0.0
    for i in flat:
        idx = np.unravel_index(i, x.shape)
        xp, xm = x.copy(), x.copy()
        xp[idx] += FD_STEP
        xm[idx] -= FD_STEP
        fd = (model.adversarial_loss(xp, t) - model.adversarial_loss(xm, t)) / (2 * FD_STEP)
        worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-8))
    return worst <= FD_RTOL, f"{FD_COORDS} coords, max rel err={worst:.2e} (tol {FD_RTOL})"


# ---------------------------------------------------------------- 4


def check_pgd(model):
    corpus = build_corpus(model, PGD_BATCH, seed=404)
    x = corpus.images
    t = model.encode_text(corpus.captions)
    cfg = AttackConfig()
    worst = [0.0]
    in_range = [True]

    def watch(step, x_adv):
        worst[0] = max(worst[0], float(np.abs(x_adv - x).max()))
        in_range[0] &= bool(x_adv.min() >= cfg.clamp_min and x_adv.max() <= cfg.clamp_max)

    adv = pgd_attack(model, x, t, cfg, callback=watch)
    clean = float(np.mean(np.sum(model.encode_image(x) * t, 1)))
    attacked = float(np.mean(np.sum(model.encode_image(adv) * t, 1)))
    drop = clean - attacked
    ok = worst[0] <= cfg.epsilon + 1e-12 and in_range[0] and drop >= PGD_MIN_DROP
    return ok, (f"max|dx|={worst[0]:.6f} (eps {cfg.epsilon:.6f}), clamped={in_range[0]}, "
                f"mean sim {clean:.4f}->{attacked:.4f} (drop {drop:.4f} >= {PGD_MIN_DROP})")


# ---------------------------------------------------------------- 5


def check_defense():
    r = np.random.default_rng(505)
    identity = True
    for method in Method:
        t = r.normal(size=(4, 16, 64))
        identity &= np.array_equal(apply_defense(t, DefenseConfig(method=method, rank=1, alpha=1.0)), t)
    worst_full = 0.0
    for _ in range(5):
        t = r.normal(size=(4, 16, 64))
        out = apply_defense(t, DefenseConfig(rank=1024, alpha=0.0))
        worst_full = max(worst_full, frobenius_norm(out - t) / frobenius_norm(t))
    ratios = []
    for _ in range(10):
        shape = (4, 16, 64)
        clean = sum(_outer([r.normal(size=n) for n in shape]) for _ in range(2))
        noise = r.normal(size=shape)
        noise *= 0.5 * frobenius_norm(clean) / frobenius_norm(noise)
        t = clean + noise
        out = apply_defense(t, DefenseConfig(rank=2, alpha=0.2))
        ratios.append(frobenius_norm(out - clean) / frobenius_norm(t - clean))
    ok = identity and worst_full <= FULL_RANK_TOL and max(ratios) < 1.0
    return ok, (f"alpha=1 bit-exact={identity}, full-rank err={worst_full:.1e}, "
                f"filtered/unfiltered distance max={max(ratios):.3f}")


# ---------------------------------------------------------------- 6


def check_trends(evaluation, base):
    parts, ok = [], True
    rows = []
    for rank in ALPHA_SWEEP_RANKS:
        cfg = ExperimentConfig(base.model, base.attack, base.defense.replace(rank=rank),
                               base.harness)
        rep = run_sweep("alpha", LOW_ALPHAS + HIGH_ALPHAS, cfg, evaluation)
        rows += rep.rows
        r1 = dict(zip(rep.column("value"), rep.column("def_r1")))
        low, high = min(r1[a] for a in LOW_ALPHAS), max(r1[a] for a in HIGH_ALPHAS)
        ok &= low >= high
        parts.append(f"(a) rank {rank}: min R@1 a<=0.3 {low:.3f} >= max a>=0.7 {high:.3f}")
    rep = run_sweep("rank", RANK_SWEEP, base, evaluation)
    rows += rep.rows
    r1 = dict(zip(rep.column("value"), rep.column("def_r1")))
    top = r1[max(RANK_SWEEP)]
    low = min(r1[k] for k in LOW_RANKS)
    ok &= low >= top
    parts.append(f"(b) min R@1 ranks {LOW_RANKS} {low:.3f} >= rank {max(RANK_SWEEP)} {top:.3f}")
    clean, adv = rows[0]["clean_r1"], rows[0]["adv_r1"]
    best = max(row["def_r1"] for row in rows)
    ok &= adv < clean and best > adv
    parts.append(f"(c) clean {clean:.3f} > attacked {adv:.3f}; best defended {best:.3f}")
    return ok, "; ".join(parts)


# ---------------------------------------------------------------- 7


def check_bench(base):
    entries = [BenchEntry(None, 0, 0), BenchEntry("tucker", 1, BENCH_RANK),
               BenchEntry("tt", 1, BENCH_RANK), BenchEntry("tt", 2, BENCH_RANK),
               BenchEntry("tt", 5, BENCH_RANK)]
    rep = run_bench(entries, base)
    ms = dict(zip(rep.column("value"), rep.column("ms_per_batch")))
    over = dict(zip(rep.column("value"), rep.column("overhead")))
    checks = {
        "tucker1/tt1": ms["tuckerx1"] / ms["ttx1"],
        "tt2/tt1": ms["ttx2"] / ms["ttx1"],
        "tt5/tt2": ms["ttx5"] / ms["ttx2"],
    }
    ok = over["none"] == 1.0 and all(v >= BENCH_SEPARATION for v in checks.values())
    ratios = ", ".join(f"{k}={v:.2f}" for k, v in checks.items())
    overheads = ", ".join(f"{k}={v:.2f}x" for k, v in over.items())
    return ok, (f"medians of {base.harness.bench_batches} batches; ratios {ratios} "
                f"(need >= {BENCH_SEPARATION}); overhead {overheads}")


# ---------------------------------------------------------------- 8


def check_reproducible(base):
    from tensordefense.config import HarnessConfig

    small = ExperimentConfig(base.model, base.attack, base.defense.replace(rank=8),
                             HarnessConfig(corpus_size=40, batch_size=20, bench_batch_size=16,
                                           bench_batches=3, bench_warmup=1))
    sweep = run_sweep("alpha", [0.1, 0.5, 0.9], small)
    bench = run_bench([BenchEntry(None, 0, 0), BenchEntry("tt", 2, 8)], small)
    same = []
    for rep in (sweep, bench):
        stored = SweepReport.from_json(rep.to_json())
        again = rerun_report(stored)
        same.append(again.to_csv(include_timing=False) == rep.to_csv(include_timing=False)
                    and again.without_timing().to_json() == rep.without_timing().to_json())
    return all(same), f"sweep identical={same[0]}, bench identical={same[1]}"


# ---------------------------------------------------------------- pytest


@pytest.fixture(scope="module")
def base():
    return ExperimentConfig()


@pytest.fixture(scope="module")
def encoder(base):
    return get_model(base.model)


@pytest.fixture(scope="module")
def evaluation(base, encoder):
    return prepare(base, encoder)


def _gate(n, budget, fn, *args):
    t0 = time.perf_counter()
    ok, detail = fn(*args)
    ok, line = record(n, ok, detail, time.perf_counter() - t0, budget)
    print(line)
    assert ok, line


def test_criterion_1_tensor_core():
    _gate(1, 30, check_tensor_core)


def test_criterion_2_decompositions():
    _gate(2, 120, check_decomp)


def test_criterion_3_gradient_check(encoder):
    _gate(3, 60, check_gradient, encoder)


def test_criterion_4_pgd_contract(encoder):
    _gate(4, 60, check_pgd, encoder)


def test_criterion_5_defense_identity_and_filtering():
    _gate(5, 60, check_defense)


def test_criterion_6_trend_replication(evaluation, base):
    _gate(6, 600, check_trends, evaluation, base)


def test_criterion_7_bench_directionality(base, encoder):
    _gate(7, 300, check_bench, base)


def test_criterion_8_reproducibility(base):
    _gate(8, 600, check_reproducible, base)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
