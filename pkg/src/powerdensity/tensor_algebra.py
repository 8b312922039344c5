"""Small dense matrix algebra, linear-dependence coefficients and the
generalized cross product on inner-product spaces.

All routines broadcast over leading axes: an array of shape ``(..., n, n)``
is treated as a field of ``n x n`` matrices.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

SYMMETRY_RTOL = 1e-12
DEFAULT_INJECTION_CAP = 4000


def _as_square(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DomainError(f"{name} must have trailing shape (n, n), got {a.shape}")
    if a.shape[-1] < 2:
        raise DomainError(f"{name} dimension must be >= 2, got {a.shape[-1]}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} has non-finite entries")
    return a


def symmetrize(g, rtol=SYMMETRY_RTOL):
    """Return ``(g + g^T)/2``; raise if the asymmetry exceeds ``rtol`` relative."""
    g = _as_square(g)
    gt = np.swapaxes(g, -1, -2)
    scale = np.max(np.abs(g), axis=(-1, -2))
    asym = np.max(np.abs(g - gt), axis=(-1, -2))
    bad = asym > rtol * np.maximum(scale, np.finfo(float).tiny)
    if np.any(bad):
        worst = float(np.max(asym / np.maximum(scale, np.finfo(float).tiny)))
        raise DomainError(f"matrix is not symmetric (relative asymmetry {worst:.3e})")
    return 0.5 * (g + gt)


def _spd_eigh(g):
    g = symmetrize(g)
    w, v = np.linalg.eigh(g)
    wmin = w[..., 0]
    if np.any(wmin <= 0):
        idx = np.unravel_index(np.argmin(wmin), wmin.shape) if wmin.ndim else ()
        raise DomainError(
            f"matrix is not positive definite: smallest eigenvalue {float(wmin[idx]):.6e}"
            + (f" at index {tuple(int(i) for i in idx)}" if idx else "")
        )
    return w, v


def matrix_sqrt(g):
    """Positive square root of a symmetric positive-definite matrix (field)."""
    w, v = _spd_eigh(g)
    return (v * np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def matrix_inv_sqrt(g):
    w, v = _spd_eigh(g)
    return (v / np.sqrt(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


@dataclass(frozen=True)
class TensorDecomposition:
    """``g = tau * gamma_tilde`` with ``det gamma_tilde = 1`` and ``a_tilde**2 = gamma_tilde``."""

    tau: np.ndarray
    gamma_tilde: np.ndarray
    a_tilde: np.ndarray


def decompose(g):
    g = symmetrize(g)
    n = g.shape[-1]
    w, v = _spd_eigh(g)
    # det via eigenvalues keeps the normalization consistent with the square root
    tau = np.exp(np.mean(np.log(w), axis=-1))
    wt = w / tau[..., None]
    vt = np.swapaxes(v, -1, -2)
    gamma_tilde = (v * wt[..., None, :]) @ vt
    a_tilde = (v * np.sqrt(wt)[..., None, :]) @ vt
    assert gamma_tilde.shape[-1] == n
    return TensorDecomposition(tau=tau, gamma_tilde=gamma_tilde, a_tilde=a_tilde)


def frobenius(a, b):
    """Inner product ``<A, B> = sum_ij A_ij B_ij`` on M_n(R)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-2:] != b.shape[-2:]:
        raise DomainError(f"dimension mismatch: {a.shape[-2:]} vs {b.shape[-2:]}")
    return np.sum(a * b, axis=(-1, -2))


def lindep_from_gram(gram):
    """Coefficients ``mu`` of the dependence relation of n+1 vectors in R^n.

    ``gram`` has trailing shape ``(n+1, n+1)`` (pairwise inner products).
    Only the first n rows are used, exactly as in the determinant formulas:
    ``mu_i = (-1)^(i+n+1) det(G[:n, q != i])`` (1-based ``i``) and
    ``mu_{n+1} = det(G[:n, :n])``.
    """
    gram = np.asarray(gram, dtype=float)
    n = gram.shape[-1] - 1
    top = gram[..., :n, :]
    mu = np.empty(gram.shape[:-2] + (n + 1,))
    for i in range(n):
        cols = [q for q in range(n + 1) if q != i]
        mu[..., i] = (-1) ** (i + n) * np.linalg.det(top[..., cols])
    mu[..., n] = np.linalg.det(top[..., :n])
    return mu


def lindep_coefficients(vectors):
    """``mu`` with ``sum_i mu_i V_i = 0`` for ``vectors`` of shape ``(..., n+1, n)``."""
    v = np.asarray(vectors, dtype=float)
    if v.shape[-2] != v.shape[-1] + 1 or v.shape[-1] < 2:
        raise DomainError(f"expected n+1 vectors in R^n with n >= 2, got {v.shape[-2:]}")
    return lindep_from_gram(v @ np.swapaxes(v, -1, -2))


def cross_product(vectors, basis=None):
    """Generalized cross product of N-1 vectors in an N-dimensional space.

    ``vectors`` has trailing shape ``(N-1, N)``: coordinates in the standard
    orthonormal oriented basis.  If ``basis`` is given (rows form an
    orthonormal basis), the determinant is expanded in that basis instead and
    the result is mapped back to standard coordinates; for a basis of the same
    orientation the result is unchanged.
    """
    v = np.asarray(vectors, dtype=float)
    N = v.shape[-1]
    if v.shape[-2] != N - 1:
        raise DomainError(f"need N-1 = {N - 1} vectors of dimension N = {N}, got {v.shape[-2]}")
    if basis is not None:
        basis = np.asarray(basis, dtype=float)
        if basis.shape != (N, N):
            raise DomainError(f"basis must be {N}x{N}, got {basis.shape}")
        coords = v @ basis.T
        return cross_product(coords) @ basis / np.linalg.det(basis)
    out = np.empty(v.shape[:-2] + (N,))
    cols = np.arange(N)
    for k in range(N):
        out[..., k] = (-1) ** (N - 1 + k) * np.linalg.det(v[..., cols != k])
    return out


def vec(m):
    """Coordinates of a matrix in the oriented basis E_11, E_21, ..., E_n1, E_12, ..."""
    m = np.asarray(m, dtype=float)
    n = m.shape[-1]
    return np.swapaxes(m, -1, -2).reshape(m.shape[:-2] + (n * n,))


def unvec(x, n):
    x = np.asarray(x, dtype=float)
    return np.swapaxes(x.reshape(x.shape[:-1] + (n, n)), -1, -2)


def matrix_cross_product(mats):
    """Cross product of ``n^2 - 1`` matrices in M_n(R); ``mats`` is ``(..., n^2-1, n, n)``."""
    mats = np.asarray(mats, dtype=float)
    n = mats.shape[-1]
    if mats.shape[-3] != n * n - 1:
        raise DomainError(f"need n^2-1 = {n * n - 1} matrices, got {mats.shape[-3]}")
    return unvec(cross_product(vec(mats)), n)


def cross_product_pushforward_check(a, matrices):
    """Relative residual of ``N(A M_i) = (det A)^n A^{-T} N(M_i)``."""
    a = _as_square(a, "a")
    matrices = np.asarray(matrices, dtype=float)
    n = a.shape[-1]
    det_a = np.linalg.det(a)
    if abs(det_a) < 1e-14 * np.max(np.abs(a)) ** n:
        raise DomainError("a is singular")
    lhs = matrix_cross_product(a @ matrices)
    rhs = det_a**n * np.linalg.inv(a).T @ matrix_cross_product(matrices)
    denom = np.linalg.norm(lhs)
    if denom == 0.0:
        return float(np.linalg.norm(rhs))
    return float(np.linalg.norm(lhs - rhs) / denom)


def _unrank_combination(rank, M, N):
    """Lexicographic unranking of M-subsets of range(N)."""
    out = []
    start = 0
    for slot in range(M):
        for c in range(start, N):
            count = math.comb(N - c - 1, M - slot - 1)
            if rank < count:
                out.append(c)
                start = c + 1
                break
            rank -= count
    return tuple(out)


def enumerate_injections(M, N, cap=None, seed=None):
    """Increasing injections ``[0, M) -> [0, N)`` as tuples of 0-based indices.

    All ``C(N, M)`` of them in lexicographic order if that count is at most
    ``cap`` (or ``cap`` is None); otherwise ``cap`` distinct ones drawn
    uniformly with ``seed``, returned in lexicographic order.
    """
    if not (1 <= M <= N):
        raise DomainError(f"need 1 <= M <= N, got M={M}, N={N}")
    total = math.comb(N, M)
    if cap is None or total <= cap:
        return list(itertools.combinations(range(N), M))
    rng = np.random.default_rng(seed)
    ranks = np.sort(rng.choice(total, size=int(cap), replace=False))
    return [_unrank_combination(int(r), M, N) for r in ranks]
