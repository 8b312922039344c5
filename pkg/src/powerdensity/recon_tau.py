"""Reconstruction of the scalar factor when the anisotropic structure is known.

The frame ``S = [S_1 | ... | S_n]``, ``S_i = gamma^{1/2} grad u_i``, obeys a
closed first-order system driven by the power densities.  It is integrated
from an anchor node along a spanning tree of axis-aligned staircase paths;
``log tau`` is then a line integral of its gradient along the same tree.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IntegrationError
from .grid import gradient
from .tensor_algebra import matrix_inv_sqrt, matrix_sqrt

log = logging.getLogger(__name__)


@dataclass
class AnchorData:
    node: tuple
    S: np.ndarray
    log_tau: float

    @property
    def sign(self):
        return int(np.sign(np.linalg.det(self.S)))

    def check(self, H0, rtol=1e-8):
        r = np.linalg.norm(self.S.T @ self.S - H0) / np.linalg.norm(H0)
        if r > rtol:
            raise DomainError(f"anchor frame inconsistent with data: |S^T S - H| / |H| = {r:.3e}")
        return r

    def adapted(self, H0):
        """Same orientation, but ``S^T S = H0`` exactly: ``S -> polar(S) H0^{1/2}``."""
        S = np.asarray(self.S, dtype=float)
        Q = S @ matrix_inv_sqrt(S.T @ S)
        return AnchorData(self.node, Q @ matrix_sqrt(H0), self.log_tau)


def anchor_from_truth(grid, gamma, grad_u, log_tau, node=None):
    """Anchor at ``node`` (default grid center) from ground-truth fields."""
    node = grid.center if node is None else tuple(node)
    A = matrix_sqrt(gamma[node])
    S = A @ np.swapaxes(grad_u[node], -1, -2)
    return AnchorData(node, S, float(log_tau[node]))


def _inv_and_grad(H, dH):
    """``H^{-1}`` and ``d_p H^{-1} = -H^{-1} (d_p H) H^{-1}`` (derivative axis last)."""
    Hinv = np.linalg.inv(H)
    dHinv = -np.einsum("...ij,...jkp,...kl->...ilp", Hinv, dH, Hinv)
    return Hinv, dHinv


def grad_log_tau(S, H, dH, a_tilde):
    """``(1/n) grad log det H + (2/n) (grad H^{jl} . A S_l) A^{-1} S_j`` nodewise."""
    n = H.shape[-1]
    Hinv, dHinv = _inv_and_grad(H, dH)
    Y = a_tilde @ S
    W = np.linalg.solve(a_tilde, S)
    first = np.einsum("...ij,...jip->...p", Hinv, dH)
    coef = np.einsum("...jlp,...pl->...j", dHinv, Y)
    return (first + 2.0 * np.einsum("...j,...qj->...q", coef, W)) / n


def frame_rhs(S, H, dH, a_tilde, d_a_tilde):
    """All partial derivatives ``d_p S_i^q``, returned with shape ``(..., q, i, p)``.

    With ``W = A^{-1} S``, ``Y = A S``, ``F = grad log tau`` and
    ``B_ij,p = W_i . d_p(A^2) W_j``:

        e_ijk = Y_k . (grad H_ij - F H_ij - B_ij)
        R_i[j, k] = (e_ijk + e_ikj - e_jki) / 2
        d_p S_i = (d_p A) W_i + F_p S_i / 2 + A K_i e_p,
        K_i = A^{-1} S H^{-1} R_i H^{-1} S^T A^{-1}.

    ``K_i`` is the symmetric matrix ``sqrt(tau) D^2 u_i``.
    """
    Hinv = np.linalg.inv(H)
    Ainv = np.linalg.inv(a_tilde)
    W = Ainv @ S
    Y = a_tilde @ S
    F = grad_log_tau(S, H, dH, a_tilde)
    dG = np.einsum("...abp,...bc->...acp", d_a_tilde, a_tilde)
    dG = dG + np.swapaxes(dG, -2, -3)
    B = np.einsum("...ai,...abp,...bj->...ijp", W, dG, W)
    E = dH - F[..., None, None, :] * H[..., None] - B
    e = np.einsum("...ijp,...pk->...ijk", E, Y)
    R = 0.5 * (e + np.swapaxes(e, -1, -2) - np.moveaxis(e, -1, -3))
    # R[..., i, j, k] = (e_ijk + e_ikj - e_jki) / 2
    P = Ainv @ S @ Hinv  # (..., a, j)
    K = np.einsum("...aj,...ijk,...bk->...iab", P, R, P)
    dS = np.einsum("...qap,...ai->...qip", d_a_tilde, W)
    dS = dS + 0.5 * S[..., None] * F[..., None, None, :]
    dS = dS + np.einsum("...qa,...iap->...qip", a_tilde, K)
    return dS


@dataclass
class FrameData:
    """Fields the frame system reads: ``H``, ``grad H``, ``A``, ``grad A`` on the grid."""

    H: np.ndarray
    dH: np.ndarray
    a_tilde: np.ndarray
    d_a_tilde: np.ndarray

    @classmethod
    def from_data(cls, data, a_tilde, basis=None, d_a_tilde=None):
        n = data.grid.dim
        basis = list(range(n)) if basis is None else list(basis)
        H = data.H[..., basis, :][..., basis]
        dH = data.grad_H[..., basis, :, :][..., basis, :]
        if d_a_tilde is None:
            d_a_tilde = gradient(data.grid, a_tilde)
        return cls(H, dH, np.asarray(a_tilde, dtype=float), d_a_tilde)

    def fields(self):
        return (self.H, self.dH, self.a_tilde, self.d_a_tilde)


def _line_views(arr, grid, axis, fixed):
    """View of ``arr`` restricted to the slab (unprocessed axes fixed), sweep axis first."""
    sl = [slice(None)] * grid.dim
    for ax in fixed:
        c = grid.center[ax]
        sl[ax] = slice(c, c + 1)
    return np.moveaxis(arr[tuple(sl)], axis, 0)


def tree_integrate(grid, root, init, step, order=None, fields=()):
    """Propagate a state from ``root`` over the whole grid along a spanning tree.

    The tree first sweeps axis ``order[0]`` through the root, then sweeps
    ``order[1]`` from every node reached so far, and so on; each node is the
    end of a unique staircase path from the root.  ``step(state, a, b, h,
    axis)`` advances a batch of states from line position ``a`` to ``b`` with
    signed spacing ``h``, where ``a`` and ``b`` are tuples of the matching
    slices of ``fields``.  Lines are processed as vectorized batches.
    """
    order = list(range(grid.dim)) if order is None else list(order)
    root = tuple(root)
    if tuple(root) != grid.center:
        raise DomainError("tree integration is rooted at the grid center")
    init = np.asarray(init, dtype=float)
    out = np.full(grid.shape + init.shape, np.nan)
    out[root] = init
    for k, axis in enumerate(order):
        fixed = order[k + 1 :]
        sv = _line_views(out, grid, axis, fixed)
        fv = [_line_views(f, grid, axis, fixed) for f in fields]
        c = root[axis]
        h = grid.spacing[axis]
        for i in range(c, grid.shape[axis] - 1):
            sv[i + 1] = step(sv[i], tuple(f[i] for f in fv), tuple(f[i + 1] for f in fv), h, axis)
        for i in range(c, 0, -1):
            sv[i - 1] = step(sv[i], tuple(f[i] for f in fv), tuple(f[i - 1] for f in fv), -h, axis)
    return out


def integrate_gradient_tree(grid, grad_f, f0, order=None):
    """Trapezoidal line integral of a gradient field over the spanning tree."""

    def step(v, a, b, h, axis):
        return v + 0.5 * h * (a[0][..., axis] + b[0][..., axis])

    return tree_integrate(grid, grid.center, f0, step, order, fields=(grad_f,))


def _rk4_step(substeps=2):
    def step(S, a, b, h, axis):
        dt = 1.0 / substeps

        def f(state, t):
            flds = [(1 - t) * x + t * y for x, y in zip(a, b)]
            return h * frame_rhs(state, *flds)[..., axis]

        for s in range(substeps):
            t = s * dt
            k1 = f(S, t)
            k2 = f(S + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = f(S + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = f(S + dt * k3, t + dt)
            S = S + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return S

    return step


def integrate_frame(anchor, path, frame_data, grid, substeps=2):
    """Propagate ``S`` along an explicit staircase path of node indices.

    Returns the frame at the path end and the relative residual
    ``|S^T S - H| / |H|`` there.
    """
    S = np.asarray(anchor.S, dtype=float)
    if tuple(path[0]) != tuple(anchor.node):
        raise DomainError("path must start at the anchor node")
    step = _rk4_step(substeps)
    flds = frame_data.fields()
    for a, b in zip(path[:-1], path[1:]):
        diff = np.subtract(b, a)
        axis = int(np.flatnonzero(diff)[0])
        if np.count_nonzero(diff) != 1 or abs(diff[axis]) != 1:
            raise DomainError(f"path step {a} -> {b} is not a unit axis step")
        h = grid.spacing[axis] * diff[axis]
        S = step(S, tuple(f[tuple(a)] for f in flds), tuple(f[tuple(b)] for f in flds), h, axis)
    end = tuple(path[-1])
    H = frame_data.H[end]
    return S, float(np.linalg.norm(S.T @ S - H) / np.linalg.norm(H))


def propagate_frame(anchor, frame_data, grid, substeps=2, order=None):
    """Frame at every node via the spanning tree."""
    with np.errstate(invalid="ignore", over="ignore"):
        return tree_integrate(grid, anchor.node, anchor.S, _rk4_step(substeps), order, fields=frame_data.fields())


def frame_drift(S, H):
    """Nodewise ``|S^T S - H|_F / |H|_F``; blown-up frames give inf or nan."""
    with np.errstate(over="ignore", invalid="ignore"):
        StS = np.swapaxes(S, -1, -2) @ S
        return np.linalg.norm(StS - H, axis=(-1, -2)) / np.linalg.norm(H, axis=(-1, -2))


@dataclass
class TauReconstruction:
    log_tau: np.ndarray
    grad_log_tau: np.ndarray
    S: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def reconstruct_log_tau(anchor, data, a_tilde, substeps=2, order=None, two_path=True,
                        drift_budget=0.1, d_a_tilde=None, collar=2, basis=None):
    """Frame propagation, then line integration of ``grad log tau``.

    The anchor frame is first made consistent with the (possibly noisy) data
    at the anchor node.  With ``two_path`` the frame is also propagated with
    the reversed axis order and the relative discrepancy is reported.
    """
    grid = data.grid
    fd = FrameData.from_data(data, a_tilde, basis=basis, d_a_tilde=d_a_tilde)
    anchor = anchor.adapted(fd.H[anchor.node])
    order = list(range(grid.dim)) if order is None else list(order)
    S = propagate_frame(anchor, fd, grid, substeps, order)
    drift = frame_drift(S, fd.H)
    # staircase paths to interior nodes stay in the interior, so the budget
    # is enforced there; boundary lines only see one-sided stencils
    interior = grid.interior_mask(collar)
    d_in = np.where(interior, drift, -np.inf)
    d_in[interior & ~np.isfinite(drift)] = np.inf
    worst = np.unravel_index(int(np.argmax(d_in)), grid.shape)
    if not d_in[worst] <= drift_budget:
        raise IntegrationError(
            f"frame drift {drift[worst]:.3e} exceeds budget {drift_budget} at node {tuple(int(i) for i in worst)}",
            node=tuple(int(i) for i in worst),
            residual=float(drift[worst]),
        )
    with np.errstate(invalid="ignore", over="ignore"):
        F = grad_log_tau(S, fd.H, fd.dH, fd.a_tilde)
    log_tau = integrate_gradient_tree(grid, F, anchor.log_tau, order)
    diag = {
        "drift_max": float(np.nanmax(drift)),
        "drift_interior_max": float(drift[interior].max()),
        "nonfinite_boundary_nodes": int(np.count_nonzero(~np.isfinite(drift))),
        "anchor_node": [int(i) for i in anchor.node],
        "substeps": substeps,
    }
    if two_path:
        with np.errstate(invalid="ignore", over="ignore"):
            S2 = propagate_frame(anchor, fd, grid, substeps, order[::-1])
            rel = np.linalg.norm(S - S2, axis=(-1, -2)) / np.linalg.norm(S, axis=(-1, -2))
            F2 = grad_log_tau(S2, fd.H, fd.dH, fd.a_tilde)
        lt2 = integrate_gradient_tree(grid, F2, anchor.log_tau, order[::-1])
        diag["two_path_frame"] = float(rel[interior].max())
        diag["two_path_log_tau"] = float(np.abs(log_tau - lt2)[interior].max())
    return TauReconstruction(log_tau, F, S, diag)


def dual_coframe(S, a_tilde, H):
    """``X_j = det(A^{-1} H^{1/2}) H^{jl} A S_l`` nodewise (columns ``X_j``).

    Uses the full conductivity square root ``A``: pass ``sqrt(tau) * A_tilde``.
    """
    det_fac = np.sqrt(np.linalg.det(H)) / np.linalg.det(a_tilde)
    return det_fac[..., None, None] * (a_tilde @ S @ np.linalg.inv(H))
