"""Rank-maximality functionals that gate the reconstructions.

* determinant functional: sum of principal n x n minors of H;
* support-basis cover: per grid block, the n solutions whose minor is best;
* Z matrices of additional solutions and the matrix family they generate;
* hyperplane functional F built from generalized cross products.

Thresholds default to relative ones: ``det H_I >= c * prod_i H_ii`` and
``F >= c * B`` with ``B`` the Hadamard-type upper bound of ``F`` at the node,
so the defaults do not depend on the units of the data.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError, DomainError
from .tensor_algebra import DEFAULT_INJECTION_CAP, enumerate_injections, matrix_cross_product

log = logging.getLogger(__name__)

DEFAULT_REL_THRESHOLD = 1e-6
DEGENERACY_RTOL = 1e-14


def det_functional(data, m=None):
    """Sum of ``det H_I`` over increasing injections ``I`` of n indices into ``[0, m)``."""
    n = data.grid.dim
    m = data.m if m is None else m
    if m < n:
        raise DomainError(f"need m >= n, got m={m}, n={n}")
    out = np.zeros(data.grid.shape)
    for inj in itertools.combinations(range(m), n):
        out += np.linalg.det(data.H[..., inj, :][..., inj])
    return out


def _hadamard(H, inj):
    return np.prod(np.stack([H[..., i, i] for i in inj], axis=-1), axis=-1)


@dataclass
class SupportBasisCover:
    """Exact tiling of the grid by blocks, each with its own support basis."""

    grid: object
    block_size: int
    blocks: list
    injections: list
    minima: list
    block_id: np.ndarray
    index_field: np.ndarray = field(repr=False)

    @property
    def K(self):
        return len(self.blocks)

    def to_json(self):
        return {
            "block_size": self.block_size,
            "blocks": [
                {
                    "nodes": [[s.start, s.stop] for s in blk],
                    "injection": list(inj),
                    "min_det": float(mn),
                }
                for blk, inj, mn in zip(self.blocks, self.injections, self.minima)
            ],
        }


def _block_slices(shape, size):
    per_axis = [[slice(a, min(a + size, s)) for a in range(0, s, size)] for s in shape]
    return [tuple(b) for b in itertools.product(*per_axis)]


def build_cover(data, m=None, threshold=None, block_size=8):
    """Choose, per block, the injection maximizing the block minimum of ``det H_I``.

    Ties go to the lexicographically smallest injection.  A block is
    admissible if its minimum is at least ``threshold`` (absolute) or, when
    ``threshold`` is None, if ``det H_I >= 1e-6 prod_{i in I} H_ii`` on all its
    nodes.  Raises :class:`AdmissibilityError` naming the first failing block.
    """
    grid = data.grid
    n = grid.dim
    m = data.m if m is None else m
    if m < n:
        raise DomainError(f"need m >= n, got m={m}, n={n}")
    if block_size < 1:
        raise DomainError("block_size must be positive")
    injections = list(itertools.combinations(range(m), n))
    dets = [np.linalg.det(data.H[..., inj, :][..., inj]) for inj in injections]
    if threshold is None:
        ratios = [d / np.maximum(_hadamard(data.H, inj), np.finfo(float).tiny) for d, inj in zip(dets, injections)]
    blocks = _block_slices(grid.shape, block_size)
    block_id = np.empty(grid.shape, dtype=int)
    index_field = np.empty(grid.shape + (n,), dtype=int)
    chosen, minima = [], []
    for k, blk in enumerate(blocks):
        best, best_val = None, -np.inf
        for j, d in enumerate(dets):
            val = float(d[blk].min())
            if val > best_val:
                best, best_val = j, val
        ok = best_val >= threshold if threshold is not None else float(ratios[best][blk].min()) >= DEFAULT_REL_THRESHOLD
        if not ok:
            nodes = [[s.start, s.stop] for s in blk]
            raise AdmissibilityError(
                f"no support basis on block {k} (nodes {nodes}): best injection {injections[best]} "
                f"has min det {best_val:.3e}",
                nodes=nodes,
                block=k,
            )
        block_id[blk] = k
        index_field[blk] = injections[best]
        chosen.append(injections[best])
        minima.append(best_val)
    return SupportBasisCover(grid, block_size, blocks, chosen, minima, block_id, index_field)


def _gather_matrix(M, idx):
    """``M[..., I, I]`` with a nodewise index field ``idx`` (shape grid + (n,))."""
    rows = np.take_along_axis(M, idx[..., :, None], axis=-2)
    return np.take_along_axis(rows, idx[..., None, :], axis=-1)


def basis_block(data, cover):
    """Nodewise ``H_I`` and its gradient ``(grid + (n, n, n))`` for the cover's injection."""
    idx = cover.index_field
    HI = _gather_matrix(data.H, idx)
    g = np.moveaxis(data.grad_H, -1, 0)
    gI = np.stack([_gather_matrix(gp, idx) for gp in g], axis=-1)
    return HI, gI


def z_matrices(data, cover, alpha):
    """Z matrix of additional solution ``alpha``: column i is ``grad c_i``.

    ``c = H_I^{-1} h_alpha`` are the coefficients of ``grad v_alpha`` in the
    support basis (equivalently ``-mu_i / mu`` from the minor formulas).
    The gradient is taken by the chain rule on ``grad H``,
    ``grad c = H_I^{-1} (grad h - grad H_I c)``, which keeps the result
    pointwise across block interfaces.
    """
    idx = cover.index_field
    if np.any(idx == alpha):
        raise DomainError(f"additional solution {alpha} belongs to a support basis")
    HI, gI = basis_block(data, cover)
    h = np.take_along_axis(data.H[..., :, alpha], idx, axis=-1)
    gh = np.take_along_axis(data.grad_H[..., :, alpha, :], idx[..., None], axis=-2)
    n = data.grid.dim
    det = np.linalg.det(HI)
    scale = np.max(np.abs(HI), axis=(-1, -2)) ** n
    bad = np.abs(det) < DEGENERACY_RTOL * scale
    if np.any(bad):
        nodes = np.argwhere(bad)
        raise AdmissibilityError(
            f"support basis degenerate at {len(nodes)} nodes (first {tuple(int(i) for i in nodes[0])})",
            nodes=nodes.tolist(),
            block=int(cover.block_id[tuple(nodes[0])]),
        )
    Hinv = np.linalg.inv(HI)
    c = np.einsum("...ij,...j->...i", Hinv, h)
    rhs = gh - np.einsum("...jkp,...k->...jp", gI, c)
    grad_c = np.einsum("...ij,...jp->...ip", Hinv, rhs)
    return np.swapaxes(grad_c, -1, -2)


def antisymmetric_basis(n):
    out = []
    for p in range(n):
        for q in range(p + 1, n):
            om = np.zeros((n, n))
            om[p, q], om[q, p] = 1.0, -1.0
            out.append(om)
    return out


def m_family(zs, data, cover):
    """Stack ``{Z, Z H_I Omega_pq (p < q)}`` for every Z; shape grid + (count, n, n)."""
    HI, _ = basis_block(data, cover)
    n = data.grid.dim
    mats = []
    for Z in zs:
        mats.append(Z)
        ZH = Z @ HI
        for om in antisymmetric_basis(n):
            mats.append(ZH @ om)
    return np.stack(mats, axis=-3)


def family_count(n, l):  # noqa: E741
    return l * (1 + n * (n - 1) // 2)


@dataclass
class FFunctional:
    """Values of F with the data needed to reuse the same subfamilies.

    ``members`` is the family the injections index into (the matrix family,
    plus the probe matrices in 2D).
    """

    values: np.ndarray
    bound: np.ndarray
    injections: list
    members: np.ndarray = field(repr=False)
    weighted_sum: np.ndarray | None = None
    summands: np.ndarray | None = None
    negative_clamped: int = 0

    def flagged(self, c1=None):
        """Nodes failing ``F >= c1`` (relative to ``bound`` when ``c1`` is None).

        ``F = 0`` is always flagged, also where the bound itself vanishes.
        """
        if c1 is None:
            return ~((self.values >= DEFAULT_REL_THRESHOLD * self.bound) & (self.values > 0))
        return ~(self.values >= c1)


def hyperplane_subfamilies(family, cap=DEFAULT_INJECTION_CAP, seed=0, literal=False):
    """Members and subfamilies entering the cross-product sums.

    For n >= 3: all (or ``cap`` sampled) ``n^2 - 1``-subfamilies of the family.
    For n = 2 the family only ever spans a 2-dimensional space (Z H Omega stays
    in the span of Z), so every 3-subfamily is dependent.  Each pair of family
    members is then completed by one of the four unit matrices of M_2; the
    resulting normals are ``A (a I + b Omega) S`` and still give
    ``N H^{-1} N^T`` proportional to the anisotropic structure.
    ``literal=True`` forces the n >= 3 rule in 2D.
    """
    n = family.shape[-1]
    count = family.shape[-3]
    if n >= 3 or literal:
        nn = n * n - 1
        if count < nn:
            raise AdmissibilityError(f"family has {count} < n^2-1 = {nn} matrices; F vanishes identically")
        return family, enumerate_injections(nn, count, cap=cap, seed=seed)
    if count < 2:
        raise AdmissibilityError("2D family needs at least 2 matrices")
    probes = np.eye(4).reshape(4, 2, 2)
    members = np.concatenate([family, np.broadcast_to(probes, family.shape[:-3] + (4, 2, 2))], axis=-3)
    pairs = enumerate_injections(2, count, cap=cap, seed=seed)
    return members, [(a, b, count + k) for a, b in pairs for k in range(4)]


def cross_products(members, injections):
    """Yield ``N(J)`` for each injection ``J`` into the member axis."""
    for J in injections:
        yield J, matrix_cross_product(members[..., list(J), :, :])


def f_functional(family, H_basis, cap=DEFAULT_INJECTION_CAP, seed=0, accumulate=False, summands=False,
                 roundoff=1e-12, literal=False):
    """``F = sum_J det(N(J) H^{-1} N(J)^T)^{1/n}`` nodewise.

    ``H_basis`` is the nodewise support-basis block ``H_I``.  Determinants
    are nonnegative in exact arithmetic; negative values are clamped to 0 and
    those beyond ``-roundoff * scale`` are counted in ``negative_clamped``.
    With ``accumulate`` the sum of ``N H^{-1} N^T`` is kept as well.
    """
    n = H_basis.shape[-1]
    members, injections = hyperplane_subfamilies(family, cap, seed, literal)
    Hinv = np.linalg.inv(H_basis)
    det_h = np.linalg.det(H_basis)
    norms2 = np.sum(members**2, axis=(-1, -2))
    values = np.zeros(H_basis.shape[:-2])
    bound = np.zeros_like(values)
    wsum = np.zeros(H_basis.shape) if accumulate else None
    per = [] if summands else None
    neg = 0
    for J, N in cross_products(members, injections):
        G = N @ Hinv @ np.swapaxes(N, -1, -2)
        d = np.linalg.det(G)
        scale = np.max(np.abs(G), axis=(-1, -2)) ** n
        neg += int(np.count_nonzero(d < -roundoff * scale))
        term = np.maximum(d, 0.0) ** (1.0 / n)
        values += term
        # |det N|^{2/n} <= |N|^2 / n <= prod |M_j|^2 / n
        bound += np.prod(norms2[..., list(J)], axis=-1) / (n * np.abs(det_h) ** (1.0 / n))
        if accumulate:
            wsum += G
        if summands:
            per.append(term)
    if neg:
        log.warning("clamped %d determinants below -%g * scale", neg, roundoff)
    return FFunctional(
        values=values,
        bound=bound,
        injections=injections,
        members=members,
        weighted_sum=wsum,
        summands=np.stack(per, axis=-1) if summands else None,
        negative_clamped=neg,
    )


def family_rank(family, rtol=1e-8):
    """Numerical rank of the family (as vectors in R^{n^2}) at every node."""
    flat = family.reshape(family.shape[:-2] + (-1,))
    s = np.linalg.svd(flat, compute_uv=False)
    return np.sum(s > rtol * s[..., :1], axis=-1)


def orthogonality_residuals(family, a_tilde, S):
    """``|<A S, M>| / (|A S| |M|)`` for every family member; shape grid + (count,)."""
    AS = a_tilde @ S
    num = np.abs(np.einsum("...ij,...kij->...k", AS, family))
    den = np.linalg.norm(AS, axis=(-1, -2))[..., None] * np.linalg.norm(family, axis=(-1, -2))
    return num / np.maximum(den, np.finfo(float).tiny)


def redundant_density(data, cover, a, b):
    """``h_a^T H_I^{-1} h_b``: mutual density of two additional solutions from basis densities."""
    idx = cover.index_field
    HI, _ = basis_block(data, cover)
    ha = np.take_along_axis(data.H[..., :, a], idx, axis=-1)
    hb = np.take_along_axis(data.H[..., :, b], idx, axis=-1)
    return np.einsum("...i,...ij,...j->...", ha, np.linalg.inv(HI), hb)


@dataclass
class AdmissibilityReport:
    d_inf: float
    d_ratio_inf: float
    f_inf: float | None
    f_ratio_inf: float | None
    flagged: int
    cover: dict
    family_size: int | None = None
    injections_used: int | None = None

    def to_json(self):
        return dict(self.__dict__)


def check(data, block_size=8, c0=None, c1=None, cap=DEFAULT_INJECTION_CAP, seed=0, mask=None):
    """Evaluate D, build a cover and, if there are additional solutions, F.

    ``mask`` restricts the reported infima to a node subset.
    Returns ``(report, cover, zs, family, ffun)``.
    """
    n = data.grid.dim
    mask = np.ones(data.grid.shape, dtype=bool) if mask is None else mask
    D = det_functional(data)
    had = sum(_hadamard(data.H, inj) for inj in itertools.combinations(range(data.m), n))
    cover = build_cover(data, threshold=c0, block_size=block_size)
    zs = family = ffun = None
    f_inf = f_ratio = None
    flagged = 0
    if data.l:
        zs = [z_matrices(data, cover, a) for a in range(data.m, data.count)]
        family = m_family(zs, data, cover)
        HI, _ = basis_block(data, cover)
        ffun = f_functional(family, HI, cap=cap, seed=seed)
        f_inf = float(ffun.values[mask].min())
        f_ratio = float((ffun.values / np.maximum(ffun.bound, np.finfo(float).tiny))[mask].min())
        flagged = int(np.count_nonzero(ffun.flagged(c1) & mask))
        if flagged == int(mask.sum()):
            raise AdmissibilityError(
                f"hyperplane functional below threshold at every node (max F = {float(ffun.values[mask].max()):.3e})",
                nodes=None,
            )
    report = AdmissibilityReport(
        d_inf=float(D[mask].min()),
        d_ratio_inf=float((D / had)[mask].min()),
        f_inf=f_inf,
        f_ratio_inf=f_ratio,
        flagged=flagged,
        cover=cover.to_json(),
        family_size=None if family is None else int(family.shape[-3]),
        injections_used=None if ffun is None else len(ffun.injections),
    )
    return report, cover, zs, family, ffun
