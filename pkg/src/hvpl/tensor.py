"""Dense numeric kernels on plain float64 numpy arrays.

Matrices are 2-D ``np.ndarray`` values and rank-3 tensors are 3-D arrays; all
computation happens in float64. The differentiable versions of these ops live
in :mod:`hvpl.autodiff` and call back into the forward kernels here.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
CONV_KERNEL = 4


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return np.matmul(a, b)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, max-subtracted."""
    z = m - m.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(m: np.ndarray) -> np.ndarray:
    z = m - m.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def layer_norm(x: np.ndarray, gamma=None, beta=None, eps: float = 1e-5) -> np.ndarray:
    """Normalize each row to zero mean and unit variance, then apply the affine map."""
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    y = (x - mu) / np.sqrt(var + eps)
    if gamma is not None:
        y = y * gamma
    if beta is not None:
        y = y + beta
    return y


def dwconv1d(x: np.ndarray, kernel: np.ndarray, bias=None) -> np.ndarray:
    """Depth-wise 1-D convolution along axis 0 with same-padding.

    ``x`` is (N, C) and ``kernel`` is (K, C); output[n] = sum_k x[n + k - K//2'] * kernel[k]
    where the left pad is (K - 1) // 2 and the right pad makes up the rest.
    """
    n, c = x.shape
    k = kernel.shape[0]
    if kernel.shape[1] != c:
        raise ShapeError(f"dwconv1d: kernel {kernel.shape} vs input {x.shape}")
    left = (k - 1) // 2
    xp = np.zeros((n + k - 1, c))
    xp[left:left + n] = x
    out = np.zeros((n, c))
    for i in range(k):
        out += xp[i:i + n] * kernel[i]
    if bias is not None:
        out += bias
    return out


def _round_robin(n: int):
    """Yield n-1 (or n) rounds of disjoint column pairs covering every pair once."""
    idx = list(range(n))
    if n % 2:
        idx.append(-1)
    size = len(idx)
    for _ in range(size - 1):
        half = size // 2
        pairs = [(idx[i], idx[size - 1 - i]) for i in range(half)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            yield np.array(pairs, dtype=np.intp).T
        idx = [idx[0], idx[-1]] + idx[1:-1]


def _jacobi(a: np.ndarray, tol: float, max_sweeps: int):
    """One-sided Jacobi on the columns of a (m >= n). Returns (G, V) with G = a V orthogonal columns."""
    m, n = a.shape
    g = a.copy()
    v = np.eye(n)
    scale = np.linalg.norm(a)
    tiny = (1e-15 * scale) ** 2 if scale > 0 else 0.0
    rounds = list(_round_robin(n))
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for p, q in rounds:
            gp, gq = g[:, p], g[:, q]
            alpha = np.einsum("ij,ij->j", gp, gp)
            beta = np.einsum("ij,ij->j", gq, gq)
            gamma = np.einsum("ij,ij->j", gp, gq)
            need = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (alpha > tiny) & (beta > tiny)
            if not need.any():
                continue
            rotated = True
            p, q = p[need], q[need]
            alpha, beta, gamma = alpha[need], beta[need], gamma[need]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            gp, gq = g[:, p], g[:, q]
            g[:, p] = c * gp - s * gq
            g[:, q] = s * gp + c * gq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            return g, v, sweep
    raise NumericError(f"Jacobi SVD did not converge after {max_sweeps} sweeps")


def orthonormal_complement(q: np.ndarray, total: int | None = None) -> np.ndarray:
    """Columns completing the orthonormal columns of q to an orthonormal basis of R^m."""
    m, r = q.shape
    total = m if total is None else total
    if total <= r:
        return np.zeros((m, 0))
    basis, _ = np.linalg.qr(np.hstack([q, np.eye(m)]), mode="complete")
    comp = basis[:, r:total]
    # one re-orthogonalization pass against q keeps the complement clean to ~1e-16
    comp = comp - q @ (q.T @ comp)
    comp, _ = np.linalg.qr(comp)
    return comp


def svd(m: np.ndarray, full_v: bool = False, tol: float = JACOBI_TOL,
        max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Thin SVD by one-sided Jacobi rotations.

    Returns ``(U, S, V)`` with ``m = U @ diag(S) @ V.T``, singular values in
    descending order and k = min(rows, cols) columns in U and V. With
    ``full_v=True`` V is completed to a square orthonormal matrix; the extra
    columns belong to zero singular values.
    """
    a = as_matrix(m)
    if not np.all(np.isfinite(a)):
        raise NumericError("svd input contains non-finite entries")
    rows, cols = a.shape
    transposed = rows < cols
    work = a.T if transposed else a
    g, v, _ = _jacobi(work, tol, max_sweeps)
    sv = np.linalg.norm(g, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv, g, v = sv[order], g[:, order], v[:, order]
    k = work.shape[1]
    # columns this small were skipped by the rotation test and are treated as exact zeros
    live = sv > 1e-15 * np.linalg.norm(a)
    u = np.zeros_like(g)
    u[:, live] = g[:, live] / sv[live]
    if not live.all():
        u[:, ~live] = orthonormal_complement(u[:, live], k)[:, : int((~live).sum())]
        sv = np.where(live, sv, 0.0)
    if transposed:
        u, v = v, u
    if full_v and v.shape[1] < cols:
        v = np.hstack([v, orthonormal_complement(v)])
    return u, sv, v


def pca_reduce(rows: np.ndarray, k: int):
    """Center the rows and project them onto the top-k principal directions.

    Returns ``(reduced, basis)``; ``basis`` is (cols x k) with orthonormal columns.
    """
    x = as_matrix(rows, "rows")
    if k > x.shape[1] or k < 0:
        raise ShapeError(f"pca_reduce: k={k} exceeds feature dimension {x.shape[1]}")
    if x.shape[0] < 2:
        raise ShapeError("pca_reduce needs at least two rows")
    centered = x - x.mean(axis=0)
    _, _, v = svd(centered, full_v=True)
    basis = v[:, :k]
    return centered @ basis, basis
