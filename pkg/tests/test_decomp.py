import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensordefense.decomp import (
    CPFactors,
    DecompSettings,
    Method,
    TTCores,
    cp_decompose,
    decompose,
    load_factors,
    reconstruct,
    save_factors,
    tt_decompose,
    tucker_decompose,
)
from tensordefense.errors import InvalidArgumentError

MONOTONE_SLACK = 1e-10


def rel_err(t, approx):
    return np.linalg.norm(t - approx) / np.linalg.norm(t)


def outer(*vectors):
    out = vectors[0]
    for v in vectors[1:]:
        out = np.multiply.outer(out, v)
    return out


def best_rank1_oracle(t, starts=200, iters=200, seed=7):
    """Best rank-(1,1,1) fit by higher-order power iteration from many random starts."""
    r = np.random.default_rng(seed)
    best = np.inf
    for _ in range(starts):
        b, c = r.normal(size=t.shape[1]), r.normal(size=t.shape[2])
        for _ in range(iters):
            a = np.einsum("ijk,j,k->i", t, b, c)
            a /= np.linalg.norm(a)
            b = np.einsum("ijk,i,k->j", t, a, c)
            b /= np.linalg.norm(b)
            c = np.einsum("ijk,i,j->k", t, a, b)
            c /= np.linalg.norm(c)
        lam = np.einsum("ijk,i,j,k->", t, a, b, c)
        best = min(best, np.linalg.norm(t - lam * outer(a, b, c)) ** 2)
    return best


class TestSettings:
    @pytest.mark.parametrize("kw", [{"rank": 0}, {"max_iters": 0}, {"tolerance": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgumentError):
            DecompSettings(**kw)

    def test_defaults(self):
        s = DecompSettings()
        assert (s.max_iters, s.tolerance) == (50, 1e-4)

    def test_method_parse(self):
        assert Method.parse("TT") is Method.TT
        with pytest.raises(InvalidArgumentError):
            Method.parse("svd")

    def test_order_one_rejected(self):
        with pytest.raises(InvalidArgumentError):
            tt_decompose(np.arange(4.0), DecompSettings(Method.TT, 2))


class TestCP:
    def test_exact_rank_one(self, rng):
        t = outer(rng.normal(size=4), rng.normal(size=5), rng.normal(size=3))
        f = cp_decompose(t, DecompSettings(Method.CP, 1))
        assert rel_err(t, reconstruct(f)) <= 1e-6

    def test_zero_tensor(self):
        f = cp_decompose(np.zeros((3, 3, 3)), DecompSettings(Method.CP, 3))
        assert np.all(f.weights == 0)
        assert np.all(reconstruct(f) == 0)

    def test_rank4_not_worse_than_rank2(self, rng):
        t = rng.normal(size=(4, 4, 4))
        e2 = cp_decompose(t, DecompSettings(Method.CP, 2)).errors[-1]
        e4 = cp_decompose(t, DecompSettings(Method.CP, 4)).errors[-1]
        assert e4 <= e2

    def test_normalized_columns(self, rng):
        f = cp_decompose(rng.normal(size=(4, 5, 6)), DecompSettings(Method.CP, 3))
        for a in f.factors:
            assert a.shape[1] == 3
            assert np.allclose(np.linalg.norm(a, axis=0), 1.0)
        assert np.all(f.weights >= 0)

    def test_collinear_factors_survive(self, rng):
        a = rng.normal(size=5)
        t = outer(a, a, a)
        f = cp_decompose(t, DecompSettings(Method.CP, 6))
        assert rel_err(t, reconstruct(f)) <= 1e-6

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), rank=st.integers(1, 6))
    def test_error_non_increasing(self, seed, rank):
        t = np.random.default_rng(seed).normal(size=(4, 5, 3))
        errs = cp_decompose(t, DecompSettings(Method.CP, rank, seed=seed)).errors
        assert all(b <= a + MONOTONE_SLACK for a, b in zip(errs, errs[1:]))

    def test_stops_at_max_iters(self, rng):
        f = cp_decompose(rng.normal(size=(5, 5, 5)),
                         DecompSettings(Method.CP, 4, max_iters=3, tolerance=1e-15))
        assert len(f.errors) == 3


class TestTucker:
    def test_full_rank(self, rng):
        t = rng.normal(size=(3, 4, 5))
        assert rel_err(t, reconstruct(tucker_decompose(t, DecompSettings(Method.TUCKER, 5)))) <= 1e-8

    def test_superdiagonal(self):
        t = np.zeros((3, 3, 3))
        for i, v in enumerate((5.0, 2.0, 1.0)):
            t[i, i, i] = v
        f = tucker_decompose(t, DecompSettings(Method.TUCKER, 1))
        oracle = best_rank1_oracle(t)
        err2 = np.linalg.norm(t - reconstruct(f)) ** 2
        assert abs(abs(f.core.item()) - 5.0) <= 0.05 * 5.0
        assert abs(err2 - oracle) <= 0.05 * oracle
        assert abs(err2 - 5.0) <= 0.05 * 5.0

    def test_orthonormal_factors(self, rng):
        f = tucker_decompose(rng.normal(size=(6, 5, 4)), DecompSettings(Method.TUCKER, 3))
        for a in f.factors:
            assert np.abs(a.T @ a - np.eye(a.shape[1])).max() <= 1e-8

    def test_ranks_clipped(self, rng):
        f = tucker_decompose(rng.normal(size=(2, 7, 3)), DecompSettings(Method.TUCKER, 5))
        assert f.ranks == (2, 5, 3)

    def test_core_is_projection(self, rng):
        t = rng.normal(size=(4, 5, 6))
        f = tucker_decompose(t, DecompSettings(Method.TUCKER, 2))
        a, b, c = f.factors
        assert np.allclose(f.core, np.einsum("ijk,ia,jb,kc->abc", t, a, b, c), atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), rank=st.integers(1, 4))
    def test_hooi_non_increasing(self, seed, rank):
        t = np.random.default_rng(seed).normal(size=(5, 4, 6))
        errs = tucker_decompose(t, DecompSettings(Method.TUCKER, rank, tolerance=1e-12)).errors
        assert all(b <= a + MONOTONE_SLACK for a, b in zip(errs, errs[1:]))


class TestTT:
    def test_full_rank(self, rng):
        t = rng.normal(size=(3, 4, 5, 2))
        assert rel_err(t, reconstruct(tt_decompose(t, DecompSettings(Method.TT, 100)))) <= 1e-8

    def test_matrix_equals_truncated_svd(self, rng):
        m = rng.normal(size=(7, 5))
        s = np.linalg.svd(m, compute_uv=False)
        for r in range(1, 6):
            f = tt_decompose(m, DecompSettings(Method.TT, r))
            expected = np.sqrt(np.sum(s[r:] ** 2))
            assert abs(np.linalg.norm(m - reconstruct(f)) - expected) <= 1e-8

    def test_cube_cap_one_matches_svd_chain(self):
        t = np.arange(8.0).reshape(2, 2, 2)
        # two-step truncated SVD by hand
        u1, s1, v1 = np.linalg.svd(t.reshape(2, 4), full_matrices=False)
        g1 = u1[:, :1]
        rest = (s1[:1, None] * v1[:1]).reshape(2, 2)
        u2, s2, v2 = np.linalg.svd(rest, full_matrices=False)
        approx = np.einsum("ia,jb,k->ijk", g1, u2[:, :1], s2[0] * v2[0])
        expected = np.linalg.norm(t - approx)
        f = tt_decompose(t, DecompSettings(Method.TT, 1))
        assert abs(np.linalg.norm(t - reconstruct(f)) - expected) <= 1e-10

    def test_rank_one_cores_give_outer_product(self, rng):
        vs = [rng.normal(size=n) for n in (3, 4, 2)]
        cores = [v.reshape(1, -1, 1) for v in vs]
        assert np.allclose(reconstruct(TTCores(cores, 0.0)), outer(*vs), atol=1e-14)

    def test_bond_ranks_bounded(self, rng):
        t = rng.normal(size=(2, 3, 4, 5))
        f = tt_decompose(t, DecompSettings(Method.TT, 4))
        assert f.ranks[0] == f.ranks[-1] == 1
        for k, r in enumerate(f.ranks[1:-1], start=1):
            full = np.linalg.matrix_rank(t.reshape(int(np.prod(t.shape[:k])), -1))
            assert r <= min(4, full)
        for g, h in zip(f.cores, f.cores[1:]):
            assert g.shape[2] == h.shape[0]

    def test_numerical_zero_not_kept(self, rng):
        t = outer(rng.normal(size=4), rng.normal(size=5), rng.normal(size=6))
        assert tt_decompose(t, DecompSettings(Method.TT, 10)).ranks == (1, 1, 1, 1)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), rank=st.integers(1, 6),
           shape=st.lists(st.integers(1, 5), min_size=2, max_size=5))
    def test_truncation_error_identity(self, seed, rank, shape):
        t = np.random.default_rng(seed).normal(size=shape)
        f = tt_decompose(t, DecompSettings(Method.TT, rank))
        measured = np.linalg.norm(t - reconstruct(f))
        bound = np.sqrt(sum(np.sum(d ** 2) for d in f.discarded))
        assert measured <= bound * (1 + 1e-6) + 1e-12
        assert abs(f.truncation_error - measured) <= 1e-6 * max(measured, 1e-12) + 1e-12


RANK_METHODS = [Method.CP, Method.TUCKER, Method.TT]


@pytest.mark.parametrize("method", RANK_METHODS)
def test_rank_monotone(method, rng):
    t = rng.normal(size=(4, 5, 6))
    errs = []
    for r in range(1, 7):
        f = decompose(t, DecompSettings(method, r, max_iters=200, tolerance=1e-10, seed=3))
        errs.append(np.linalg.norm(t - reconstruct(f)))
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:])), errs


@pytest.mark.parametrize("method", RANK_METHODS)
def test_deterministic(method, rng):
    t = rng.normal(size=(4, 5, 6))
    s = DecompSettings(method, 3, seed=11)
    one, two = decompose(t, s), decompose(t, s)
    assert np.array_equal(reconstruct(one), reconstruct(two))
    parts = lambda f: [f.weights, *f.factors] if isinstance(f, CPFactors) else (
        [f.core, *f.factors] if hasattr(f, "core") else f.cores)
    assert all(np.array_equal(a, b) for a, b in zip(parts(one), parts(two)))


@pytest.mark.parametrize("method", RANK_METHODS)
def test_shape_preserved(method, rng):
    t = rng.normal(size=(2, 1, 5))
    assert reconstruct(decompose(t, DecompSettings(method, 2))).shape == t.shape


@pytest.mark.parametrize("method", RANK_METHODS)
def test_factor_file_round_trip(method, rng, tmp_path):
    t = rng.normal(size=(3, 4, 5))
    f = decompose(t, DecompSettings(method, 2))
    save_factors(tmp_path / "f.tdfc", f)
    g = load_factors(tmp_path / "f.tdfc")
    assert type(g) is type(f)
    assert np.array_equal(reconstruct(g), reconstruct(f))
