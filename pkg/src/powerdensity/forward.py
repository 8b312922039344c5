"""Dirichlet solves of the conductivity equation and power-density synthesis."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, SolverError
from .grid import data_gradient, gradient
from .tensor_algebra import symmetrize

log = logging.getLogger(__name__)


@dataclass
class DirichletProblem:
    """``div(gamma grad u) = source`` in the grid interior, ``u = boundary_values`` on the boundary.

    ``boundary_values`` is a full grid array; only boundary nodes are read.
    ``kappa`` is the declared ellipticity constant (None: only require SPD).
    """

    grid: object
    gamma: np.ndarray
    boundary_values: np.ndarray
    kappa: float | None = None
    source: np.ndarray | None = None


def check_ellipticity(gamma, kappa=None):
    g = symmetrize(gamma)
    w = np.linalg.eigvalsh(g)
    lo, hi = float(w.min()), float(w.max())
    if lo <= 0:
        raise DomainError(f"conductivity is not positive definite (min eigenvalue {lo:.3e})")
    if kappa is not None and (lo < 1.0 / kappa or hi > kappa):
        raise DomainError(
            f"ellipticity violated: eigenvalues in [{lo:.3e}, {hi:.3e}] not within [1/{kappa}, {kappa}]"
        )
    return lo, hi


class DivergenceFormOperator:
    """Second-order finite-difference discretization of ``u -> div(gamma grad u)``.

    Axis terms use half-node arithmetic averages of the diagonal coefficients;
    mixed terms use the symmetric cross-derivative stencil (9 points in 2D,
    19 in 3D).  The assembled interior block is symmetric.
    """

    def __init__(self, grid, gamma, kappa=None):
        gamma = np.asarray(gamma, dtype=float)
        n = grid.dim
        if gamma.shape != grid.shape + (n, n):
            raise DomainError(f"gamma must have shape {grid.shape + (n, n)}, got {gamma.shape}")
        self.ellipticity = check_ellipticity(gamma, kappa)
        self.grid = grid
        gamma = symmetrize(gamma)
        shape = grid.shape
        idx = np.arange(grid.size).reshape(shape)

        def shifted(arr, offset):
            sl = tuple(slice(1 + o, s - 1 + o) for o, s in zip(offset, shape))
            return arr[sl].ravel()

        zero = (0,) * n
        rows = shifted(idx, zero)
        r_all, c_all, v_all = [], [], []

        def add(cols, vals):
            r_all.append(rows)
            c_all.append(cols)
            v_all.append(vals)

        units = [tuple(int(k == i) for k in range(n)) for i in range(n)]
        for i in range(n):
            e = units[i]
            me = tuple(-k for k in e)
            gii = gamma[..., i, i]
            h2 = grid.spacing[i] ** 2
            center = shifted(gii, zero)
            a_plus = 0.5 * (center + shifted(gii, e)) / h2
            a_minus = 0.5 * (center + shifted(gii, me)) / h2
            add(shifted(idx, e), a_plus)
            add(shifted(idx, me), a_minus)
            add(rows, -(a_plus + a_minus))
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                gij = gamma[..., i, j]
                c = 1.0 / (4.0 * grid.spacing[i] * grid.spacing[j])
                ei, ej = np.array(units[i]), np.array(units[j])
                gp = shifted(gij, tuple(ei)) * c
                gm = shifted(gij, tuple(-ei)) * c
                add(shifted(idx, tuple(ei + ej)), gp)
                add(shifted(idx, tuple(ei - ej)), -gp)
                add(shifted(idx, tuple(-ei + ej)), -gm)
                add(shifted(idx, tuple(-ei - ej)), gm)
        L = sp.coo_matrix(
            (np.concatenate(v_all), (np.concatenate(r_all), np.concatenate(c_all))),
            shape=(grid.size, grid.size),
        ).tocsr()
        self.L = L
        bmask = grid.boundary_mask.ravel()
        self.interior = np.flatnonzero(~bmask)
        self.boundary = np.flatnonzero(bmask)
        K = -L[self.interior]
        self.K_ii = K[:, self.interior].tocsr()
        self.K_ib = K[:, self.boundary].tocsr()
        diag = self.K_ii.diagonal()
        self._jacobi = spla.LinearOperator(self.K_ii.shape, matvec=lambda x: x / diag, dtype=float)
        self.last_info = {}

    def apply(self, u):
        """Discrete ``div(gamma grad u)`` at every node (zero rows on the boundary)."""
        return (self.L @ np.asarray(u, dtype=float).ravel()).reshape(self.grid.shape)

    def solve(self, boundary_values, tol=1e-10, max_iter=None, source=None):
        grid = self.grid
        g = np.asarray(boundary_values, dtype=float).ravel()
        if g.size != grid.size:
            raise DomainError("boundary_values must be a full grid array")
        if not np.all(np.isfinite(g[self.boundary])):
            raise DomainError("boundary values must be finite")
        if max_iter is None:
            max_iter = int(50 * math.sqrt(grid.size))
        b = -self.K_ib @ g[self.boundary]
        if source is not None:
            b = b - np.asarray(source, dtype=float).ravel()[self.interior]
        u = np.array(g)
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            u[self.interior] = 0.0
            self.last_info = {"iterations": 0, "residual": 0.0}
            return u.reshape(grid.shape)
        iters = 0

        def count(_):
            nonlocal iters
            iters += 1

        x, _ = spla.cg(self.K_ii, b, rtol=tol, atol=0.0, maxiter=max_iter, M=self._jacobi, callback=count)
        residual = float(np.linalg.norm(b - self.K_ii @ x) / bnorm)
        self.last_info = {"iterations": iters, "residual": residual}
        if not residual <= tol * 1.0001:
            raise SolverError(
                f"PCG did not converge: relative residual {residual:.3e} > {tol:.1e} after {iters} iterations",
                residual=residual,
                iterations=iters,
            )
        u[self.interior] = x
        return u.reshape(grid.shape)


def solve(problem, tol=1e-10, max_iter=None):
    """Solve a :class:`DirichletProblem`; boundary values are reproduced exactly."""
    op = DivergenceFormOperator(problem.grid, problem.gamma, problem.kappa)
    return op.solve(problem.boundary_values, tol=tol, max_iter=max_iter, source=problem.source)


def _pairwise(grad_a, gamma, grad_b):
    """``0.5 (a.gamma b + b.gamma a)`` nodewise, exactly symmetric in (a, b)."""
    ab = np.einsum("...p,...pq,...q->...", grad_a, gamma, grad_b)
    ba = np.einsum("...p,...pq,...q->...", grad_b, gamma, grad_a)
    return 0.5 * (ab + ba)


def power_density(grid, u, v, gamma):
    """Mutual power density ``grad u . gamma grad v`` at every node."""
    return _pairwise(gradient(grid, u), np.asarray(gamma, dtype=float), gradient(grid, v))


@dataclass
class PowerDensitySet:
    """Mutual power densities of ``m + l`` solutions.

    ``H`` has shape ``grid.shape + (K, K)``; ``grad_H`` adds a trailing
    derivative axis.  Indices ``0..m-1`` are support-basis candidates,
    ``m..m+l-1`` additional solutions.  ``u`` and ``grad_u`` are ground truth
    kept only for oracle checks; reconstructions never read them.
    """

    grid: object
    H: np.ndarray
    grad_H: np.ndarray
    m: int
    labels: list = field(default_factory=list)
    u: np.ndarray | None = None
    grad_u: np.ndarray | None = None
    noise: dict | None = None

    @property
    def count(self):
        return self.H.shape[-1]

    @property
    def l(self):  # noqa: E743
        return self.count - self.m


def power_density_matrix(grad_u, gamma):
    """``H_ij = grad u_i . gamma grad u_j`` from stacked gradients ``grid.shape + (K, n)``."""
    g = np.einsum("...ip,...pq->...iq", grad_u, gamma)
    M = np.einsum("...iq,...jq->...ij", g, grad_u)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def synthesize(grid, gamma, boundary_set, m, noise=None, tol=1e-10, max_iter=None, kappa=None, labels=None):
    """Solve one Dirichlet problem per boundary trace and assemble the data set.

    ``boundary_set`` is a sequence of full grid arrays or an object with an
    ``evaluate(grid)`` method returning one.  ``noise`` is ``{"level": delta,
    "seed": int}`` and is applied by :func:`add_noise`.
    """
    if hasattr(boundary_set, "evaluate"):
        labels = labels or list(getattr(boundary_set, "labels", []))
        traces = boundary_set.evaluate(grid)
    else:
        traces = list(boundary_set)
    if not 1 <= m <= len(traces):
        raise DomainError(f"m = {m} out of range for {len(traces)} traces")
    op = DivergenceFormOperator(grid, gamma, kappa)
    sols = []
    for k, g in enumerate(traces):
        sols.append(op.solve(g, tol=tol, max_iter=max_iter))
        log.debug("solve %d: %s", k, op.last_info)
    u = np.stack(sols, axis=-1)
    grad_u = np.stack([gradient(grid, s) for s in sols], axis=-2)
    H = power_density_matrix(grad_u, np.asarray(gamma, dtype=float))
    data = PowerDensitySet(
        grid=grid,
        H=H,
        grad_H=data_gradient(grid, H),
        m=m,
        labels=labels or [f"u{k}" for k in range(len(traces))],
        u=u,
        grad_u=grad_u,
    )
    if noise:
        data = add_noise(data, noise.get("level", 0.0), noise.get("seed", 0))
    return data


def add_noise(data, level, seed):
    """Perturb every ``H_ij`` by iid uniform noise of amplitude ``level * max|H|``.

    The perturbation is symmetric (``H_ij`` and ``H_ji`` share a draw) and
    ``grad_H`` is recomputed from the noisy ``H``.
    """
    if level < 0:
        raise DomainError("noise level must be nonnegative")
    info = {"level": float(level), "seed": int(seed)}
    if level == 0:
        return replace(data, H=data.H.copy(), grad_H=data.grad_H.copy(), noise=info)
    K = data.count
    rng = np.random.default_rng(seed)
    draws = rng.uniform(-1.0, 1.0, size=data.H.shape)
    upper = np.triu(np.ones((K, K), dtype=bool))
    draws = np.where(upper, draws, np.swapaxes(draws, -1, -2))
    amp = level * float(np.max(np.abs(data.H)))
    H = data.H + amp * draws
    info["amplitude"] = amp
    return replace(data, H=H, grad_H=data_gradient(data.grid, H), noise=info)
