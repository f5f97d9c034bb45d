"""Dense tensor primitives: matricization, mode products, Khatri-Rao, SVD.

Tensors are plain ``numpy.ndarray`` values in float64, C (row-major) order.
Routines never modify their inputs.

Unfolding convention
--------------------
``unfold(t, n)`` moves mode ``n`` to the front and reshapes in row-major
order. Row ``i`` holds all entries with ``t[..., i (at mode n), ...]``; the
column index enumerates the remaining modes in increasing order with the LAST
remaining mode varying fastest::

    col = sum_k j_k * prod_{l > k, l != n} shape[l]      (k != n)

This is the transpose-free row-major counterpart of the Kolda-Bader
convention (which varies the first remaining mode fastest). With it,

    unfold(sum_r w_r a1_r o ... o ad_r, n)
        == A_n @ diag(w) @ khatri_rao(A_1, ..., A_{n-1}, A_{n+1}, ..., A_d).T
"""

from __future__ import annotations

from functools import reduce
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericalFailureError

# Aliases used in signatures; both are float64 ndarrays.
DenseTensor = np.ndarray
Matrix = np.ndarray

JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-12


def as_tensor(data, shape: Sequence[int] | None = None) -> DenseTensor:
    """Validate and coerce ``data`` into a float64 tensor.

    ``shape`` reinterprets a flat buffer in row-major order. Empty tensors and
    order-0 scalars are rejected.
    """
    arr = np.asarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape) or len(shape) < 1:
            raise InvalidArgumentError(f"extents must be >= 1, got {shape}")
        if arr.size != int(np.prod(shape)):
            raise InvalidArgumentError(
                f"buffer of length {arr.size} does not fit shape {shape}"
            )
        arr = arr.reshape(shape)
    if arr.ndim < 1:
        raise InvalidArgumentError("tensor order must be >= 1")
    if arr.size == 0:
        raise InvalidArgumentError(f"empty tensor of shape {arr.shape}")
    return np.ascontiguousarray(arr)


def as_matrix(data) -> Matrix:
    m = as_tensor(data)
    if m.ndim != 2:
        raise InvalidArgumentError(f"expected a matrix, got order {m.ndim}")
    return m


def _check_mode(ndim: int, mode: int) -> int:
    if not isinstance(mode, (int, np.integer)) or not 0 <= mode < ndim:
        raise InvalidArgumentError(f"mode {mode!r} out of range for order {ndim}")
    return int(mode)


def unfold(t: DenseTensor, mode: int) -> Matrix:
    """Mode-``mode`` matricization (see module docstring for column order)."""
    t = as_tensor(t)
    mode = _check_mode(t.ndim, mode)
    return np.ascontiguousarray(np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1))


def fold(m: Matrix, mode: int, shape: Sequence[int]) -> DenseTensor:
    """Inverse of :func:`unfold`; exact (pure data movement)."""
    m = as_matrix(m)
    shape = tuple(int(s) for s in shape)
    mode = _check_mode(len(shape), mode)
    rest = [s for k, s in enumerate(shape) if k != mode]
    if m.shape != (shape[mode], int(np.prod(rest, dtype=np.int64))):
        raise InvalidArgumentError(
            f"matrix {m.shape} inconsistent with shape {shape} at mode {mode}"
        )
    moved = m.reshape([shape[mode]] + rest)
    return np.ascontiguousarray(np.moveaxis(moved, 0, mode))


def mode_n_product(t: DenseTensor, m: Matrix, mode: int) -> DenseTensor:
    """Multiply ``t`` along ``mode`` by ``m``: result extent at mode is m.rows."""
    t = as_tensor(t)
    m = as_matrix(m)
    mode = _check_mode(t.ndim, mode)
    if m.shape[1] != t.shape[mode]:
        raise InvalidArgumentError(
            f"matrix has {m.shape[1]} columns but mode {mode} has extent {t.shape[mode]}"
        )
    out = np.tensordot(m, t, axes=(1, mode))
    return np.ascontiguousarray(np.moveaxis(out, 0, mode))


def multi_mode_product(
    t: DenseTensor, matrices: Sequence[Matrix], transpose: bool = False, skip=None
) -> DenseTensor:
    """Apply one matrix per mode (optionally transposed), skipping mode ``skip``."""
    out = t
    for k, m in enumerate(matrices):
        if k == skip:
            continue
        out = mode_n_product(out, m.T if transpose else m, k)
    return out


def khatri_rao(a: Matrix, b: Matrix, *more: Matrix) -> Matrix:
    """Column-wise Kronecker product; row index ``i * b.rows + j``."""
    mats = [as_matrix(x) for x in (a, b, *more)]
    r = mats[0].shape[1]
    if any(x.shape[1] != r for x in mats):
        raise InvalidArgumentError(
            f"column counts differ: {[x.shape[1] for x in mats]}"
        )

    def _pair(x, y):
        return (x[:, None, :] * y[None, :, :]).reshape(-1, r)

    return reduce(_pair, mats)


def frobenius_norm(t: DenseTensor) -> float:
    t = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(t * t)))


def _check_finite(m: np.ndarray) -> None:
    if not np.all(np.isfinite(m)):
        raise InvalidArgumentError("input contains non-finite entries")


def svd(m: Matrix, method: str = "lapack") -> tuple[Matrix, np.ndarray, Matrix]:
    """Thin SVD ``m = U @ diag(s) @ V.T`` with ``s`` non-increasing.

    ``method="lapack"`` calls the LAPACK driver through numpy;
    ``method="jacobi"`` uses :func:`jacobi_svd`. Both return ``V`` (not its
    transpose) with ``k = min(rows, cols)`` columns.
    """
    m = as_matrix(m)
    _check_finite(m)
    if method == "jacobi":
        return jacobi_svd(m)
    if method != "lapack":
        raise InvalidArgumentError(f"unknown svd method {method!r}")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"SVD did not converge: {exc}") from exc
    return u, s, vt.T


def _round_robin(n: int):
    """Rounds of disjoint index pairs covering every pair once (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((p, q))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _complete_basis(u: Matrix, keep: np.ndarray) -> Matrix:
    """Replace columns not in ``keep`` by orthonormal completions."""
    m, k = u.shape
    basis = [u[:, j] for j in range(k) if keep[j]]
    out = u.copy()
    candidates = iter(np.eye(m))
    for j in range(k):
        if keep[j]:
            continue
        for e in candidates:
            v = e.copy()
            for _ in range(2):
                for b in basis:
                    v -= (b @ v) * b
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                v /= nv
                basis.append(v)
                out[:, j] = v
                break
    return out


def jacobi_svd(
    m: Matrix, max_sweeps: int = JACOBI_MAX_SWEEPS, tol: float = JACOBI_TOL
) -> tuple[Matrix, np.ndarray, Matrix]:
    """One-sided (Hestenes) Jacobi SVD with round-robin parallel ordering.

    Columns of a working copy are rotated pairwise until every pair is
    orthogonal to relative tolerance ``tol``. Raises
    :class:`NumericalFailureError` after ``max_sweeps`` sweeps.
    """
    m = as_matrix(m)
    _check_finite(m)
    if m.shape[0] < m.shape[1]:
        u, s, v = jacobi_svd(m.T, max_sweeps, tol)
        return v, s, u

    rows, cols = m.shape
    n = cols + (cols % 2)
    a = np.zeros((rows, n))
    a[:, :cols] = m
    v = np.eye(n)
    rounds = _round_robin(n) if n > 1 else []

    for _ in range(max_sweeps):
        off = 0.0
        for p, q in rounds:
            ap, aq = a[:, p], a[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            denom = np.sqrt(alpha * beta)
            active = (denom > 0) & (np.abs(gamma) > tol * denom)
            if not active.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(denom > 0, np.abs(gamma) / denom, 0.0)
            off = max(off, float(ratio.max()))
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            sgn = np.where(zeta >= 0, 1.0, -1.0)
            t = sgn / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            a[:, p], a[:, q] = c * ap - s * aq, s * ap + c * aq
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if off <= tol:
            break
    else:
        raise NumericalFailureError(
            f"Jacobi SVD did not converge in {max_sweeps} sweeps"
        )

    a, v = a[:, :cols], v[:cols, :cols]
    sv = np.linalg.norm(a, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv, a, v = sv[order], a[:, order], v[:, order]
    scale = sv[0] if sv.size and sv[0] > 0 else 1.0
    keep = sv > 1e-14 * scale
    u = np.zeros_like(a)
    u[:, keep] = a[:, keep] / sv[keep]
    if not keep.all():
        u = _complete_basis(u, keep)
    return u, sv, v
