import numpy as np
import pytest
from hypothesis import given, strategies as st

from powerdensity.bc import (
    BOX_PRESERVING,
    CATALOG,
    affine,
    constant_coefficient_seeds,
    gamma0_inv_sqrt_map,
    identity,
    linear_traces,
    make_diffeomorphism,
    pushforward_tensor,
    pushforward_traces,
    seed_matrices,
    shear_bump,
    stretch,
)
from powerdensity.errors import ConfigError, DomainError
from powerdensity.grid import Grid
from powerdensity.phantoms import constant, diagonal_smooth, make_phantom, tau_sin
from powerdensity.verify import pushforward_residuals

from conftest import random_spd


def test_seeds_identity_2d():
    grid = Grid.unit(2, 9)
    x0 = grid.point(grid.center)
    seeds = constant_coefficient_seeds(np.eye(2), x0, extension=False)
    assert len(seeds) == 3
    y = grid.coords - x0
    vals = seeds.evaluate(grid)
    assert np.allclose(vals[0], y[..., 0]) and np.allclose(vals[1], y[..., 1])
    assert np.allclose(vals[2], 0.5 * (y[..., 0] ** 2 - y[..., 1] ** 2))
    # the default 2D family adds the symmetric off-diagonal generator
    full = constant_coefficient_seeds(np.eye(2), x0)
    assert len(full) == 4
    assert np.allclose(full.evaluate(grid)[3], y[..., 0] * y[..., 1])


def test_seed_matrix_diag():
    Q = seed_matrices(np.diag([1.0, 4.0]), extension=False)
    assert np.allclose(Q[0], np.diag([1.0, -0.25]))


@pytest.mark.parametrize("n", [2, 3])
def test_seed_count_and_traceless(rng, n):
    g0 = random_spd(rng, n)
    seeds = constant_coefficient_seeds(g0, np.full(n, 0.5), extension=False)
    assert len(seeds) == 2 * n - 1
    for Q in seeds.meta["Q"]:
        # conductivity-harmonic quadratic: tr(gamma0 Q) = 0
        assert abs(np.trace(g0 @ Q)) < 1e-12


def test_diffeomorphism_catalog_round_trips(rng):
    for n in (2, 3):
        x = rng.uniform(0, 1, (200, n))
        for name in CATALOG:
            psi = make_diffeomorphism({"name": name}, n)
            psi.check(x)
            # Jacobian vs central differences
            h = 1e-6
            D = psi.jacobian(x)
            for b in range(n):
                e = np.zeros(n)
                e[b] = h
                fd = (psi.forward(x + e) - psi.forward(x - e)) / (2 * h)
                assert np.allclose(D[..., :, b], fd, atol=1e-7)


@pytest.mark.parametrize("name", BOX_PRESERVING)
def test_box_preserving_maps_preserve_faces(name):
    grid = Grid.unit(3, 9)
    psi = make_diffeomorphism(name, 3)
    b = grid.coords[grid.boundary_mask]
    y = psi.forward(b)
    on_face = np.isclose(b, 0) | np.isclose(b, 1)
    assert np.allclose(y[on_face], b[on_face])


def test_make_diffeomorphism_errors_and_compose():
    with pytest.raises(ConfigError):
        make_diffeomorphism({"name": "nope"}, 2)
    with pytest.raises(DomainError):
        shear_bump(2, 1.5)
    comp = make_diffeomorphism(["stretch", {"name": "shear-bump", "eps": 0.2}], 2)
    x = np.random.default_rng(0).uniform(0, 1, (50, 2))
    assert np.allclose(comp.forward(x), stretch(2).forward(shear_bump(2, 0.2).forward(x)))
    assert np.allclose(comp.inverse(comp.forward(x)), x)


def test_pushforward_identity_unchanged():
    grid = Grid.unit(2, 9)
    ph = diagonal_smooth(2)
    out = pushforward_tensor(ph.gamma, identity(2), grid)
    assert np.allclose(out, ph.sample(grid))


def test_pushforward_inv_sqrt_map(rng):
    g0 = random_spd(rng, 2, 5)
    psi = gamma0_inv_sqrt_map(g0)
    grid = Grid.unit(2, 9)
    out = pushforward_tensor(constant(2, g0).gamma, psi, grid)
    # D g0 D^T / |det D| with D = g0^{-1/2}
    assert np.allclose(out, np.sqrt(np.linalg.det(g0)) * np.eye(2))


def test_pushforward_sampled_matches_closed_form():
    src = Grid.unit(2, 65)
    tgt = Grid.unit(2, 17)
    ph = tau_sin(2)
    psi = shear_bump(2, 0.3)
    exact = pushforward_tensor(ph.gamma, psi, tgt)
    sampled = pushforward_tensor(ph.sample(src), psi, tgt, source_grid=src)
    assert np.abs(exact - sampled).max() < 1e-3
    with pytest.raises(DomainError):
        pushforward_tensor(ph.sample(src), psi, tgt)


def test_pushforward_ellipticity_bound(rng):
    grid = Grid.unit(2, 17)
    ph = diagonal_smooth(2)
    psi = shear_bump(2, 0.4)
    g = ph.sample(grid)
    w = np.linalg.eigvalsh(g)
    kappa = max(w.max(), 1 / w.min())
    x = psi.inverse(grid.coords)
    D = psi.jacobian(x)
    sv = np.linalg.svd(D, compute_uv=False)
    J = np.abs(np.linalg.det(D))
    C = max(sv.max(), 1 / sv.min(), J.max(), 1 / J.min())
    out = pushforward_tensor(ph.gamma, psi, grid)
    wo = np.linalg.eigvalsh(out)
    assert wo.max() <= C**3 * kappa and 1 / wo.min() <= C**3 * kappa
    with pytest.raises(DomainError, match="C_psi"):
        pushforward_tensor(ph.gamma, psi, grid, c_psi=1.0 + 1e-3)


def test_pushforward_traces():
    grid = Grid.unit(2, 9)
    tr = linear_traces(2)
    assert np.allclose(pushforward_traces(tr, identity(2)).evaluate(grid)[0], tr.evaluate(grid)[0])
    M = np.array([[2.0, 1.0], [0.5, 1.5]])
    b = np.array([0.1, -0.2])
    out = pushforward_traces(tr, affine(M, b)).evaluate(grid)[0]
    assert np.allclose(out, ((grid.coords - b) @ np.linalg.inv(M).T)[..., 0])


def test_power_density_law_second_order():
    r = [pushforward_residuals("tau2", "push2", p)["power_density"] for p in (33, 65)]
    assert np.log2(r[0] / r[1]) >= 1.5


def test_phantom_catalog():
    assert make_phantom("tau-sin", 2).name == "tau-sin"
    with pytest.raises(ConfigError):
        make_phantom({"name": "tau-sin", "bogus": 1}, 2)
    with pytest.raises(ConfigError):
        make_phantom({"name": "pushforward", "base": "constant"}, 2)
    ph = make_phantom({"name": "pushforward", "base": "tau-sin", "diffeo": "shear-bump"}, 2)
    assert ph.diffeo is not None and ph.base.name == "tau-sin"
    g, tau, gt, at = ph.truth(Grid.unit(2, 9))
    assert np.allclose(np.linalg.det(gt), 1.0)
    assert np.allclose(tau[..., None, None] * gt, g)


@given(st.floats(-0.9, 0.9), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_shear_bump_inverse(eps, a, b):
    psi = shear_bump(2, eps)
    x = np.array([[a, b]])
    assert np.allclose(psi.inverse(psi.forward(x)), x, atol=1e-12)
    assert psi.jacobian_det(x)[0] > 0
