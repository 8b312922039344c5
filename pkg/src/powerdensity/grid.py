"""Axis-aligned structured grids and finite-difference calculus on them.

Fields are plain numpy arrays whose leading axes are the grid axes:
scalar ``grid.shape``, vector ``grid.shape + (n,)``, matrix
``grid.shape + (k, k)``.  Derivative components go last.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Grid:
    shape: tuple
    origin: tuple
    spacing: tuple

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        origin = tuple(float(o) for o in self.origin)
        spacing = tuple(float(h) for h in self.spacing)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        if len(shape) not in (2, 3):
            raise DomainError(f"grid dimension must be 2 or 3, got {len(shape)}")
        if not (len(origin) == len(spacing) == len(shape)):
            raise DomainError("shape, origin and spacing must have the same length")
        if any(s < 9 or s % 2 == 0 for s in shape):
            raise DomainError(f"points per axis must be odd and >= 9, got {shape}")
        if any(not h > 0 for h in spacing):
            raise DomainError(f"spacing must be positive, got {spacing}")

    @classmethod
    def unit(cls, dim, points):
        """Uniform grid on the unit box [0, 1]^dim."""
        return cls((points,) * dim, (0.0,) * dim, (1.0 / (points - 1),) * dim)

    @property
    def dim(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def center(self):
        return tuple(s // 2 for s in self.shape)

    @cached_property
    def axes(self):
        return [o + h * np.arange(s) for o, h, s in zip(self.origin, self.spacing, self.shape)]

    @cached_property
    def coords(self):
        """Node coordinates, shape ``shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def point(self, index):
        return np.array([o + h * i for o, h, i in zip(self.origin, self.spacing, index)])

    @cached_property
    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[ax] = 0
            mask[tuple(sl)] = True
            sl[ax] = -1
            mask[tuple(sl)] = True
        return mask

    def interior_mask(self, collar=1):
        """Nodes at least ``collar`` cells away from the boundary."""
        mask = np.zeros(self.shape, dtype=bool)
        sl = tuple(slice(collar, s - collar) for s in self.shape)
        mask[sl] = True
        return mask

    def contains(self, index):
        return len(index) == self.dim and all(0 <= i < s for i, s in zip(index, self.shape))

    def to_json(self):
        return {
            "dim": self.dim,
            "points_per_axis": list(self.shape),
            "origin": list(self.origin),
            "spacing": list(self.spacing),
        }


def gradient(grid, f):
    """Gradient of a field; adds a trailing axis of length ``grid.dim``.

    Central differences inside, second-order one-sided at the boundary, so
    quadratics are differentiated exactly.  Works on any field rank.
    """
    f = np.asarray(f, dtype=float)
    parts = np.gradient(f, *grid.spacing, axis=tuple(range(grid.dim)), edge_order=2)
    return np.stack(parts, axis=-1)


def data_gradient(grid, f):
    """Like :func:`gradient`, but the first interior layer does not read boundary nodes.

    Quantities built from one-sided derivatives carry larger errors on the
    boundary; a central difference at the adjacent node would divide that
    error by ``h``.  There a second-order stencil pointing inward is used.
    """
    f = np.asarray(f, dtype=float)
    out = gradient(grid, f)
    for ax, h in enumerate(grid.spacing):
        g = np.moveaxis(out[..., ax], ax, 0)
        v = np.moveaxis(f, ax, 0)
        g[1] = (-3.0 * v[1] + 4.0 * v[2] - v[3]) / (2.0 * h)
        g[-2] = (3.0 * v[-2] - 4.0 * v[-3] + v[-4]) / (2.0 * h)
    return out


def divergence(grid, v):
    v = np.asarray(v, dtype=float)
    if v.shape[grid.dim] != grid.dim:
        raise DomainError(f"vector field component axis must have length {grid.dim}")
    out = np.zeros(v.shape[: grid.dim] + v.shape[grid.dim + 1 :])
    for ax in range(grid.dim):
        comp = np.take(v, ax, axis=grid.dim)
        out += np.gradient(comp, grid.spacing[ax], axis=ax, edge_order=2)
    return out


def sample_path(grid, start, stop, order=None):
    """Staircase path of node indices from ``start`` to ``stop``.

    Moves along the axes in ``order`` (default 0, 1, ..., dim-1), one cell
    at a time.  Consecutive nodes differ by one index along one axis.
    """
    start = tuple(int(i) for i in start)
    stop = tuple(int(i) for i in stop)
    if not (grid.contains(start) and grid.contains(stop)):
        raise DomainError(f"path endpoints {start} -> {stop} outside grid {grid.shape}")
    order = range(grid.dim) if order is None else order
    cur = list(start)
    path = [tuple(cur)]
    for ax in order:
        step = 1 if stop[ax] > cur[ax] else -1
        while cur[ax] != stop[ax]:
            cur[ax] += step
            path.append(tuple(cur))
    return path
