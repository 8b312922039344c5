"""Boundary-condition families and transport under diffeomorphisms.

Traces are closed-form evaluators ``f(points) -> values`` where ``points``
has trailing axis ``n``.  They are evaluated on every grid node; solvers only
read the boundary nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .tensor_algebra import matrix_inv_sqrt, symmetrize


@dataclass
class BoundaryTraceSet:
    labels: list
    funcs: list
    m: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.funcs)

    def evaluate(self, grid):
        pts = grid.coords
        out = []
        for label, f in zip(self.labels, self.funcs):
            vals = np.asarray(f(pts), dtype=float)
            if not np.all(np.isfinite(vals[grid.boundary_mask])):
                raise DomainError(f"trace {label!r} is not finite on the boundary")
            out.append(vals)
        return out

    def __add__(self, other):
        return BoundaryTraceSet(self.labels + other.labels, self.funcs + other.funcs, self.m, dict(self.meta))

    def subset(self, indices):
        return BoundaryTraceSet([self.labels[i] for i in indices], [self.funcs[i] for i in indices], None, dict(self.meta))


def _linear(i, x0):
    return lambda x: x[..., i] - x0[i]


def _quadratic(Q, x0):
    def f(x):
        y = x - x0
        return 0.5 * np.einsum("...i,ij,...j->...", y, Q, y)

    return f


def seed_matrices(gamma0, extension=None):
    """The matrices ``Q_j = A0^{-1} E_j A0^{-1}`` of the quadratic seeds.

    ``E_j = e_j e_j^T - e_{j+1} e_{j+1}^T`` for ``j < n``.  In 2D
    (``extension`` defaults to True there) the symmetric off-diagonal
    generator ``e_1 e_2^T + e_2 e_1^T`` is appended, since one quadratic alone
    cannot make the family span a hyperplane of M_2(R).
    """
    gamma0 = symmetrize(np.asarray(gamma0, dtype=float))
    n = gamma0.shape[-1]
    if extension is None:
        extension = n == 2
    a_inv = matrix_inv_sqrt(gamma0)
    gens = []
    for j in range(n - 1):
        E = np.zeros((n, n))
        E[j, j], E[j + 1, j + 1] = 1.0, -1.0
        gens.append(E)
    if extension:
        E = np.zeros((n, n))
        E[0, 1] = E[1, 0] = 1.0
        gens.append(E)
    return [a_inv @ E @ a_inv for E in gens]


def constant_coefficient_seeds(gamma0, x0, extension=None):
    """Linear traces ``x^i - x0^i`` followed by the quadratic seeds.

    For constant ``gamma0`` all of these solve the conductivity equation on
    all of R^n, so the discrete solutions reproduce them exactly.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0]
    qs = seed_matrices(gamma0, extension)
    labels = [f"x{i + 1}" for i in range(n)]
    funcs = [_linear(i, x0) for i in range(n)]
    for j, Q in enumerate(qs):
        labels.append(f"quad{j + 1}" if j < n - 1 else "quad-sym")
        funcs.append(_quadratic(Q, x0))
    return BoundaryTraceSet(labels, funcs, m=n, meta={"Q": qs, "x0": x0, "extension": len(qs) > n - 1})


def linear_traces(n, x0=None):
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    return BoundaryTraceSet([f"x{i + 1}" for i in range(n)], [_linear(i, x0) for i in range(n)], m=n)


class Diffeomorphism:
    """Closed-form map with inverse and Jacobian ``D[a, b] = d psi_a / d x_b``."""

    def __init__(self, name, forward, inverse, jacobian):
        self.name = name
        self.forward = forward
        self.inverse = inverse
        self.jacobian = jacobian

    def __call__(self, x):
        return self.forward(x)

    def jacobian_det(self, x):
        return np.linalg.det(self.jacobian(x))

    def jacobian_bound(self, x):
        """Smallest ``C >= 1`` with ``1/C <= |J| <= C`` on the sample points."""
        J = np.abs(self.jacobian_det(x))
        if np.any(J == 0):
            return np.inf
        return float(max(1.0, J.max(), 1.0 / J.min()))

    def check(self, x, c_psi=None, atol=1e-10):
        """Verify inverse round trip and the Jacobian bound on sample points."""
        err = float(np.max(np.abs(self.inverse(self.forward(x)) - x)))
        if err > atol:
            raise DomainError(f"{self.name}: inverse round-trip error {err:.3e}")
        bound = self.jacobian_bound(x)
        if c_psi is not None and bound > c_psi:
            raise DomainError(f"{self.name}: Jacobian bound {bound:.4g} exceeds C_psi = {c_psi}")
        return bound

    def compose(self, inner):
        """``self o inner``."""
        return Diffeomorphism(
            f"{self.name}o{inner.name}",
            lambda x: self.forward(inner.forward(x)),
            lambda y: inner.inverse(self.inverse(y)),
            lambda x: self.jacobian(inner.forward(x)) @ inner.jacobian(x),
        )


def identity(n):
    return Diffeomorphism(
        "identity",
        lambda x: np.array(x, dtype=float),
        lambda y: np.array(y, dtype=float),
        lambda x: np.broadcast_to(np.eye(n), np.shape(x)[:-1] + (n, n)).copy(),
    )


def affine(M, b=None):
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
    if abs(np.linalg.det(M)) < 1e-12:
        raise DomainError("affine map matrix is singular")
    Minv = np.linalg.inv(M)
    return Diffeomorphism(
        "affine",
        lambda x: x @ M.T + b,
        lambda y: (y - b) @ Minv.T,
        lambda x: np.broadcast_to(M, np.shape(x)[:-1] + (n, n)).copy(),
    )


def shear_bump(n, eps=0.3):
    """Box-preserving map of [0,1]^n: ``y1 = x1 + c(x') x1 (1 - x1)``, other coordinates fixed.

    ``c = eps * prod_{k>1} sin(pi x_k)``; requires ``|eps| < 1``.  Maps every
    face of the unit box onto itself, so Dirichlet data transport exactly.
    """
    if not abs(eps) < 1:
        raise DomainError("shear_bump needs |eps| < 1")

    def c_of(x):
        return eps * np.prod(np.sin(np.pi * x[..., 1:]), axis=-1)

    def fwd(x):
        x = np.asarray(x, dtype=float)
        y = x.copy()
        y[..., 0] = x[..., 0] + c_of(x) * x[..., 0] * (1 - x[..., 0])
        return y

    def inv(y):
        y = np.asarray(y, dtype=float)
        x = y.copy()
        c = c_of(y)
        disc = np.sqrt(np.maximum((1 + c) ** 2 - 4 * c * y[..., 0], 0.0))
        x[..., 0] = 2 * y[..., 0] / ((1 + c) + disc)
        return x

    def jac(x):
        x = np.asarray(x, dtype=float)
        D = np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()
        c = c_of(x)
        x1 = x[..., 0]
        D[..., 0, 0] = 1 + c * (1 - 2 * x1)
        s = np.sin(np.pi * x[..., 1:])
        for k in range(1, n):
            others = np.prod(np.delete(s, k - 1, axis=-1), axis=-1)
            dc = eps * np.pi * np.cos(np.pi * x[..., k]) * others
            D[..., 0, k] = dc * x1 * (1 - x1)
        return D

    return Diffeomorphism("shear-bump", fwd, inv, jac)


def stretch(n, a=1.0):
    """Box-preserving axis stretch ``y_k = log(1 + a x_k) / log(1 + a)``."""
    if not a > -1 or a == 0:
        raise DomainError("stretch needs a > -1 and a != 0")
    L = np.log1p(a)
    return Diffeomorphism(
        "stretch",
        lambda x: np.log1p(a * np.asarray(x, dtype=float)) / L,
        lambda y: np.expm1(np.asarray(y, dtype=float) * L) / a,
        lambda x: np.einsum("...k,kl->...kl", a / ((1 + a * np.asarray(x, dtype=float)) * L), np.eye(n)),
    )


def gamma0_inv_sqrt_map(gamma0):
    """``psi(x) = gamma0^{-1/2} x``: pushes ``gamma0`` forward to a multiple of the identity."""
    return affine(matrix_inv_sqrt(gamma0))


CATALOG = {
    "identity": lambda n, **kw: identity(n),
    "affine": lambda n, matrix=None, offset=None: affine(np.eye(n) if matrix is None else matrix, offset),
    "shear-bump": lambda n, eps=0.3: shear_bump(n, eps),
    "stretch": lambda n, a=1.0: stretch(n, a),
}

BOX_PRESERVING = ("identity", "shear-bump", "stretch")


def make_diffeomorphism(spec, n):
    """Build a catalog map from ``{"name": ..., **params}`` or a list to compose (last applied first)."""
    if isinstance(spec, str):
        spec = {"name": spec}
    if isinstance(spec, list):
        maps = [make_diffeomorphism(s, n) for s in spec]
        out = maps[-1]
        for outer in reversed(maps[:-1]):
            out = outer.compose(out)
        return out
    params = dict(spec)
    name = params.pop("name", None)
    if name not in CATALOG:
        raise ConfigError(f"unknown diffeomorphism {name!r}; catalog: {sorted(CATALOG)}")
    return CATALOG[name](n, **params)


def pushforward_tensor_fn(gamma_fn, psi):
    """Closed-form ``psi_* gamma (y) = (|J|^{-1} D gamma D^T)(psi^{-1}(y))``."""

    def pushed(y):
        x = psi.inverse(y)
        D = psi.jacobian(x)
        J = np.abs(np.linalg.det(D))
        return D @ gamma_fn(x) @ np.swapaxes(D, -1, -2) / J[..., None, None]

    return pushed


def pushforward_tensor(gamma, psi, target_grid, c_psi=None, source_grid=None):
    """Evaluate the push-forward of ``gamma`` on the nodes of ``target_grid``.

    ``gamma`` is a closed-form tensor function, or a sampled field on
    ``source_grid`` (then linearly interpolated).  Raises if the Jacobian
    bound ``C_psi`` is violated at the preimages of the target nodes.
    """
    if not callable(gamma):
        if source_grid is None:
            raise DomainError("a sampled gamma needs its source_grid")
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(source_grid.axes, np.asarray(gamma, dtype=float), bounds_error=False, fill_value=None)
        gamma_fn = interp
    else:
        gamma_fn = gamma
    y = target_grid.coords
    x = psi.inverse(y)
    bound = psi.jacobian_bound(x)
    if not np.isfinite(bound) or (c_psi is not None and bound > c_psi):
        raise DomainError(f"{psi.name}: Jacobian bound {bound:.4g} violates C_psi = {c_psi}")
    return symmetrize(pushforward_tensor_fn(gamma_fn, psi)(y), rtol=1e-10)


def pushforward_traces(traces, psi):
    """Compose every trace with ``psi^{-1}``."""
    funcs = [(lambda f: (lambda y: f(psi.inverse(y))))(f) for f in traces.funcs]
    labels = [f"{lab}@{psi.name}^-1" for lab in traces.labels]
    return BoundaryTraceSet(labels, funcs, traces.m, dict(traces.meta, psi=psi.name))
