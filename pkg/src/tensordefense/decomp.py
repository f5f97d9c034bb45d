"""CP (ALS), Tucker (HOSVD + HOOI) and Tensor-Train (TT-SVD) decompositions.

A single integer ``rank`` drives all three methods:

* CP uses it as the number of rank-one components R.
* Tucker uses ``(rank, ..., rank)`` clipped to each mode's extent, and further
  to the product of the other modes' ranks (a mode cannot carry more
  directions than the rest of the core can pair with).
* TT uses it as a cap on every bond rank.

Convergence for the iterative methods is the relative change of the
Frobenius reconstruction error between successive sweeps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import tdf
from .errors import InvalidArgumentError, NumericalFailureError
from .tensor import (
    as_tensor,
    frobenius_norm,
    khatri_rao,
    multi_mode_product,
    svd,
    unfold,
)

CP_RIDGE = 1e-10
TT_RELATIVE_CUTOFF = 1e-12
# Relative error treated as an exact fit; iteration stops there.
EXACT_FIT = 1e-13


class Method(str, enum.Enum):
    CP = "cp"
    TUCKER = "tucker"
    TT = "tt"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidArgumentError(
                f"unknown method {value!r}; expected one of {[m.value for m in cls]}"
            ) from None


@dataclass(frozen=True)
class DecompSettings:
    method: Method = Method.TT
    rank: int = 32
    max_iters: int = 50
    tolerance: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if int(self.rank) < 1:
            raise InvalidArgumentError(f"rank must be >= 1, got {self.rank}")
        if int(self.max_iters) < 1:
            raise InvalidArgumentError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tolerance > 0:
            raise InvalidArgumentError(f"tolerance must be > 0, got {self.tolerance}")


@dataclass
class CPFactors:
    """Normalized CP model: unit-norm factor columns, scale in ``weights``."""

    weights: np.ndarray
    factors: list[np.ndarray]
    errors: list[float] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.weights.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)


@dataclass
class TuckerFactors:
    core: np.ndarray
    factors: list[np.ndarray]
    errors: list[float] = field(default_factory=list)

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.core.shape

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)


@dataclass
class TTCores:
    """TT cores ``G_k`` of shape (r_{k-1}, n_k, r_k) with r_0 = r_d = 1.

    ``truncation_error`` is sqrt of the summed squares of every discarded
    singular value; for TT-SVD it equals the reconstruction error exactly.
    """

    cores: list[np.ndarray]
    truncation_error: float = 0.0
    discarded: list[np.ndarray] = field(default_factory=list)

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(g.shape[2] for g in self.cores)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(g.shape[1] for g in self.cores)


def _check_input(t, s: DecompSettings, method: Method) -> np.ndarray:
    t = as_tensor(t)
    if t.ndim < 2:
        raise InvalidArgumentError(f"decomposition needs order >= 2, got {t.ndim}")
    if s.method is not method:
        raise InvalidArgumentError(f"settings are for {s.method.value}, not {method.value}")
    if not np.all(np.isfinite(t)):
        raise NumericalFailureError("input tensor has non-finite entries")
    return t


def _relative_error(t: np.ndarray, approx: np.ndarray, norm_t: float) -> float:
    return frobenius_norm(t - approx) / norm_t


def _converged(errors: list[float], tol: float) -> bool:
    if len(errors) < 2:
        return False
    prev, cur = errors[-2], errors[-1]
    if cur <= EXACT_FIT:
        return True
    return abs(prev - cur) / prev < tol


def cp_decompose(t, s: DecompSettings) -> CPFactors:
    """CP-ALS with seeded uniform(-1, 1) initialization.

    Each factor update solves the normal equations with a ``CP_RIDGE * I``
    ridge so that collinear columns never make the Gram matrix singular.
    ``errors`` holds the relative reconstruction error after every sweep.
    """
    t = _check_input(t, s, Method.CP)
    d, rank = t.ndim, int(s.rank)
    rng = np.random.default_rng(s.seed)
    factors = [rng.uniform(-1.0, 1.0, size=(n, rank)) for n in t.shape]
    factors = [f / np.linalg.norm(f, axis=0) for f in factors]
    weights = np.ones(rank)

    norm_t = frobenius_norm(t)
    if norm_t == 0.0:
        return CPFactors(np.zeros(rank), factors, [0.0])

    unfolded = [unfold(t, n) for n in range(d)]
    grams = [f.T @ f for f in factors]
    ridge = CP_RIDGE * np.eye(rank)
    errors: list[float] = []
    for _ in range(s.max_iters):
        for n in range(d):
            others = [factors[k] for k in range(d) if k != n]
            gram = np.ones((rank, rank))
            for k in range(d):
                if k != n:
                    gram *= grams[k]
            kr = others[0] if len(others) == 1 else khatri_rao(*others)
            rhs = unfolded[n] @ kr
            f = np.linalg.solve(gram + ridge, rhs.T).T
            if not np.all(np.isfinite(f)):
                raise NumericalFailureError("non-finite values in CP-ALS update")
            norms = np.linalg.norm(f, axis=0)
            live = norms > 0
            f[:, live] /= norms[live]
            # A dead column keeps its previous direction so columns stay unit norm.
            f[:, ~live] = factors[n][:, ~live]
            factors[n] = f
            grams[n] = f.T @ f
            weights = np.where(live, norms, 0.0)
        errors.append(_relative_error(t, _cp_full(weights, factors), norm_t))
        if _converged(errors, s.tolerance):
            break

    order = np.argsort(-weights, kind="stable")
    return CPFactors(weights[order], [f[:, order] for f in factors], errors)


def _tucker_ranks(shape: tuple[int, ...], rank: int) -> list[int]:
    ranks = [min(rank, n) for n in shape]
    changed = True
    while changed:
        changed = False
        for n in range(len(ranks)):
            rest = int(np.prod([r for k, r in enumerate(ranks) if k != n]))
            if ranks[n] > rest:
                ranks[n] = rest
                changed = True
    return ranks


def _leading_left_vectors(m: np.ndarray, r: int) -> np.ndarray:
    u, _, _ = svd(m)
    return u[:, :r]


def tucker_decompose(t, s: DecompSettings) -> TuckerFactors:
    """HOSVD initialization refined by HOOI sweeps.

    ``errors[0]`` is the HOSVD error; each later entry follows one HOOI
    sweep. Iteration stops once a sweep changes the error by less than
    ``s.tolerance`` (relative) or after ``s.max_iters`` sweeps.
    """
    t = _check_input(t, s, Method.TUCKER)
    d = t.ndim
    ranks = _tucker_ranks(t.shape, int(s.rank))
    factors = [_leading_left_vectors(unfold(t, n), ranks[n]) for n in range(d)]
    core = multi_mode_product(t, factors, transpose=True)

    norm_t = frobenius_norm(t)
    if norm_t == 0.0:
        return TuckerFactors(core, factors, [0.0])

    errors = [_relative_error(t, multi_mode_product(core, factors), norm_t)]
    for _ in range(s.max_iters):
        if errors[-1] <= EXACT_FIT:
            break
        for n in range(d):
            y = multi_mode_product(t, factors, transpose=True, skip=n)
            factors[n] = _leading_left_vectors(unfold(y, n), ranks[n])
            if not np.all(np.isfinite(factors[n])):
                raise NumericalFailureError("non-finite values in HOOI update")
        core = multi_mode_product(t, factors, transpose=True)
        errors.append(_relative_error(t, multi_mode_product(core, factors), norm_t))
        if _converged(errors, s.tolerance):
            break
    return TuckerFactors(core, factors, errors)


def tt_decompose(t, s: DecompSettings) -> TTCores:
    """Left-to-right TT-SVD with a uniform bond-rank cap.

    At each step the kept rank is ``min(cap, #{sigma_i > 1e-12 * sigma_1})``
    (at least 1); every dropped singular value is recorded in ``discarded``.
    """
    t = _check_input(t, s, Method.TT)
    cap = int(s.rank)
    cores, discarded = [], []
    rest = t
    r_prev = 1
    for k in range(t.ndim - 1):
        n_k = t.shape[k]
        mat = rest.reshape(r_prev * n_k, -1)
        u, sv, v = svd(mat)
        numeric = int(np.sum(sv > TT_RELATIVE_CUTOFF * sv[0])) if sv[0] > 0 else 1
        r = max(1, min(cap, numeric))
        discarded.append(sv[r:].copy())
        cores.append(np.ascontiguousarray(u[:, :r].reshape(r_prev, n_k, r)))
        rest = sv[:r, None] * v[:, :r].T
        r_prev = r
    cores.append(np.ascontiguousarray(rest.reshape(r_prev, t.shape[-1], 1)))
    if not all(np.all(np.isfinite(g)) for g in cores):
        raise NumericalFailureError("non-finite values in TT-SVD")
    err = float(np.sqrt(sum(float(np.sum(x * x)) for x in discarded)))
    return TTCores(cores, err, discarded)


def _cp_full(weights, factors) -> np.ndarray:
    shape = tuple(f.shape[0] for f in factors)
    head = factors[0] * weights
    tail = factors[1] if len(factors) == 2 else khatri_rao(*factors[1:])
    return (head @ tail.T).reshape(shape)


def _tt_full(cores) -> np.ndarray:
    shape = tuple(g.shape[1] for g in cores)
    out = cores[0].reshape(cores[0].shape[1], -1)
    for g in cores[1:]:
        out = (out @ g.reshape(g.shape[0], -1)).reshape(-1, g.shape[2])
    return out.reshape(shape)


def reconstruct(f: CPFactors | TuckerFactors | TTCores) -> np.ndarray:
    """Dense tensor represented by a decomposition."""
    if isinstance(f, CPFactors):
        return _cp_full(f.weights, f.factors)
    if isinstance(f, TuckerFactors):
        return multi_mode_product(f.core, f.factors)
    if isinstance(f, TTCores):
        return _tt_full(f.cores)
    raise InvalidArgumentError(f"cannot reconstruct {type(f).__name__}")


def decompose(t, s: DecompSettings):
    if s.method is Method.CP:
        return cp_decompose(t, s)
    if s.method is Method.TUCKER:
        return tucker_decompose(t, s)
    return tt_decompose(t, s)


def low_rank_approximation(t, s: DecompSettings) -> np.ndarray:
    return reconstruct(decompose(t, s))


# ---------------------------------------------------------------- storage


def save_factors(path, f: CPFactors | TuckerFactors | TTCores) -> None:
    """Write factors as a TDFC container (header names method and ranks)."""
    if isinstance(f, CPFactors):
        header = {"method": "cp", "ranks": [f.rank]}
        tensors = [f.weights] + list(f.factors)
        names = ["weights"] + [f"factor{k}" for k in range(len(f.factors))]
    elif isinstance(f, TuckerFactors):
        header = {"method": "tucker", "ranks": list(f.ranks)}
        tensors = [f.core] + list(f.factors)
        names = ["core"] + [f"factor{k}" for k in range(len(f.factors))]
    elif isinstance(f, TTCores):
        header = {"method": "tt", "ranks": list(f.ranks),
                  "truncation_error": f.truncation_error}
        tensors = list(f.cores)
        names = [f"core{k}" for k in range(len(f.cores))]
    else:
        raise InvalidArgumentError(f"cannot save {type(f).__name__}")
    header["shape"] = list(f.shape)
    header["names"] = names
    tdf.save_container(path, header, tensors)


def load_factors(path) -> CPFactors | TuckerFactors | TTCores:
    header, tensors = tdf.load_container(path)
    method = Method.parse(header.get("method"))
    if method is Method.CP:
        return CPFactors(tensors[0], tensors[1:])
    if method is Method.TUCKER:
        return TuckerFactors(tensors[0], tensors[1:])
    return TTCores(tensors, float(header.get("truncation_error", 0.0)))
