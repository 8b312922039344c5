import numpy as np
import pytest

from powerdensity import admissibility as adm
from powerdensity.bc import constant_coefficient_seeds
from powerdensity.errors import AdmissibilityError, DomainError
from powerdensity.forward import synthesize
from powerdensity.grid import Grid
from powerdensity.phantoms import constant, exp_tau
from powerdensity.recon_gamma import grad_log_tau_data_only, reconstruct_anisotropy, reconstruct_full
from powerdensity.recon_tau import FrameData, anchor_from_truth, grad_log_tau
from powerdensity.tensor_algebra import matrix_sqrt

GT3 = [[1.2, 0.1, 0.0], [0.1, 1.0, 0.05], [0.0, 0.05, 0.85]]


def _data(phantom, points):
    grid = Grid.unit(phantom.dim, points)
    gamma, tau, gt, at = phantom.truth(grid)
    seeds = constant_coefficient_seeds(gamma[grid.center], grid.point(grid.center))
    data = synthesize(grid, gamma, seeds, m=grid.dim, tol=1e-13)
    return grid, data, gamma, tau, gt, at


def _recon(data):
    report, cover, zs, fam, f = adm.check(data)
    HI, dHI = adm.basis_block(data, cover)
    return reconstruct_anisotropy(fam, HI), fam, HI, dHI


def _region(grid):
    return grid.interior_mask(max(2, (grid.shape[0] - 1) // 8))


@pytest.mark.parametrize("g0", [np.eye(3), np.diag([2.0, 1.0, 0.5]), np.diag([3.0, 1.0, 1.0])])
def test_constant_tensor_3d(g0):
    grid, data, *_ = _data(constant(3, g0), 9)
    rec, *_ = _recon(data)
    expected = g0 / np.linalg.det(g0) ** (1 / 3)
    assert np.abs(rec.gamma_tilde - expected).max() < 1e-8
    assert not rec.flagged.any()


def test_constant_tensor_2d():
    g0 = np.array([[2.0, 0.5], [0.5, 1.0]])
    grid, data, *_ = _data(constant(2, g0), 17)
    rec, *_ = _recon(data)
    assert np.abs(rec.gamma_tilde - g0 / np.sqrt(np.linalg.det(g0))).max() < 1e-8


def test_sign_flip_invariance():
    grid, data, *_ = _data(exp_tau(3, 0.5, GT3), 9)
    rec, fam, HI, _ = _recon(data)
    flipped = fam.copy()
    flipped[..., 3, :, :] *= -1
    rec2 = reconstruct_anisotropy(flipped, HI)
    assert np.allclose(rec2.gamma_tilde, rec.gamma_tilde, rtol=1e-10, atol=1e-12)


def test_grad_log_tau_data_only_constant_and_2d():
    grid, data, *_ = _data(constant(3, np.diag([2.0, 1.0, 0.5])), 9)
    rec, fam, HI, dHI = _recon(data)
    assert np.abs(grad_log_tau_data_only(rec, HI, dHI)).max() < 1e-7
    grid2, data2, *_ = _data(constant(2), 9)
    rec2, _, HI2, dHI2 = _recon(data2)
    with pytest.raises(DomainError):
        grad_log_tau_data_only(rec2, HI2, dHI2)


def test_grad_log_tau_data_only_exp_phantom():
    errs, gaps = [], []
    for N in (17, 33):
        grid, data, gamma, tau, gt, at = _data(exp_tau(3, 0.6, GT3), N)
        rec, fam, HI, dHI = _recon(data)
        F = grad_log_tau_data_only(rec, HI, dHI)
        region = _region(grid)
        errs.append(np.abs(F - [0.6, 0.0, 0.0])[region].max())
        # consistency with the frame formula on ground-truth frames
        S = matrix_sqrt(gamma) @ np.swapaxes(data.grad_u[..., :3, :], -1, -2)
        fd = FrameData.from_data(data, at)
        F7 = grad_log_tau(S, fd.H, fd.dH, at)
        gaps.append(np.abs(F - F7)[region].max())
    assert errs[1] < 2e-2
    assert np.log2(errs[0] / errs[1]) > 1.5
    assert np.log2(gaps[0] / gaps[1]) > 1.5


def test_full_identity_machine_precision():
    for n, N in ((2, 17), (3, 9)):
        grid, data, gamma, tau, gt, at = _data(constant(n), N)
        anchor = anchor_from_truth(grid, gamma, data.grad_u[..., :n, :], np.log(tau))
        res = reconstruct_full(data, anchor)
        rel = np.abs(res.gamma - gamma).max() / np.abs(gamma).max()
        assert rel <= 1e-6, (n, rel)


def test_all_flagged_raises():
    grid, data, *_ = _data(constant(2), 9)
    rec, fam, HI, _ = _recon(data)
    with pytest.raises(AdmissibilityError):
        reconstruct_anisotropy(np.zeros_like(fam), HI)
