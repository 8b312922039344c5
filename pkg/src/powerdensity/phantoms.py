"""Closed-form conductivity phantoms.

A phantom is a callable ``gamma(points) -> (..., n, n)`` on physical
coordinates, so it can be sampled on any grid and composed with maps.
"""

from __future__ import annotations

import numpy as np

from .bc import make_diffeomorphism, pushforward_tensor_fn
from .errors import ConfigError
from .tensor_algebra import decompose, matrix_sqrt, symmetrize


class Phantom:
    def __init__(self, name, dim, gamma, params=None, diffeo=None, base=None):
        self.name = name
        self.dim = dim
        self.gamma = gamma
        self.params = params or {}
        self.diffeo = diffeo
        self.base = base

    def __call__(self, x):
        return self.gamma(x)

    def sample(self, grid):
        if grid.dim != self.dim:
            raise ConfigError(f"phantom {self.name!r} is {self.dim}D, grid is {grid.dim}D")
        return symmetrize(self.gamma(grid.coords), rtol=1e-10)

    def truth(self, grid):
        """Ground-truth ``(gamma, tau, gamma_tilde, a_tilde)`` sampled on ``grid``."""
        g = self.sample(grid)
        dec = decompose(g)
        return g, dec.tau, dec.gamma_tilde, dec.a_tilde


def _unit_det(m):
    m = symmetrize(np.asarray(m, dtype=float))
    n = m.shape[-1]
    return m / np.linalg.det(m) ** (1.0 / n)


def _scaled(tau_fn, gamma_tilde, n):
    gt = np.eye(n) if gamma_tilde is None else _unit_det(gamma_tilde)

    def gamma(x):
        return tau_fn(x)[..., None, None] * gt

    return gamma


def constant(n, matrix=None):
    g0 = np.eye(n) if matrix is None else symmetrize(np.asarray(matrix, dtype=float))
    matrix_sqrt(g0)  # SPD check
    return Phantom("constant", n, lambda x: np.broadcast_to(g0, x.shape[:-1] + (n, n)).copy(), {"matrix": g0.tolist()})


def tau_sin(n, amplitude=0.3, gamma_tilde=None):
    """``tau = 1 + a sin(pi x1) sin(pi x2)`` times a constant unit-determinant structure."""
    if not abs(amplitude) < 1:
        raise ConfigError("tau-sin amplitude must satisfy |a| < 1")

    def tau(x):
        return 1.0 + amplitude * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])

    return Phantom("tau-sin", n, _scaled(tau, gamma_tilde, n), {"amplitude": amplitude, "gamma_tilde": gamma_tilde})


def exp_tau(n, rate=1.0, gamma_tilde=None):
    """``tau = exp(c x1)`` times a constant unit-determinant structure."""

    def tau(x):
        return np.exp(rate * x[..., 0])

    return Phantom("exp-tau", n, _scaled(tau, gamma_tilde, n), {"rate": rate, "gamma_tilde": gamma_tilde})


def diagonal_smooth(n, amplitude=0.2, coupling=0.1):
    """Smooth, diagonally dominant, variable tensor (all entries vary)."""

    def gamma(x):
        out = np.zeros(x.shape[:-1] + (n, n))
        for k in range(n):
            nxt = x[..., (k + 1) % n]
            out[..., k, k] = (1.0 + 0.25 * k) * (1.0 + amplitude * np.sin(np.pi * (x[..., k] + 0.5 * nxt)))
        for i in range(n):
            for j in range(i + 1, n):
                v = coupling * np.cos(0.5 * np.pi * (x[..., i] + 2.0 * x[..., j]))
                out[..., i, j] = out[..., j, i] = v
        return out

    return Phantom("diagonal-smooth", n, gamma, {"amplitude": amplitude, "coupling": coupling})


def pushforward(base, psi):
    return Phantom(f"pushforward({base.name},{psi.name})", base.dim, pushforward_tensor_fn(base.gamma, psi), base.params, diffeo=psi, base=base)


CATALOG = {
    "constant": constant,
    "tau-sin": tau_sin,
    "exp-tau": exp_tau,
    "diagonal-smooth": diagonal_smooth,
}


def make_phantom(spec, n):
    """Build a phantom from ``{"name": ..., **params}``.

    ``{"name": "pushforward", "base": {...}, "diffeo": {...}}`` wraps another
    catalog phantom.
    """
    if isinstance(spec, str):
        spec = {"name": spec}
    params = dict(spec)
    name = params.pop("name", None)
    if name == "pushforward":
        try:
            base, diffeo = params.pop("base"), params.pop("diffeo")
        except KeyError as exc:
            raise ConfigError(f"pushforward phantom needs {exc.args[0]!r}") from exc
        return pushforward(make_phantom(base, n), make_diffeomorphism(diffeo, n))
    if name not in CATALOG:
        raise ConfigError(f"unknown phantom {name!r}; catalog: {sorted(CATALOG) + ['pushforward']}")
    try:
        return CATALOG[name](n, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for phantom {name!r}: {exc}") from exc
