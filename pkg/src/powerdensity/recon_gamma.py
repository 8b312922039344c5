"""Algebraic reconstruction of the anisotropic structure, then of the scalar factor.

``gamma_tilde`` is the F-normalized sum of ``N H^{-1} N^T`` over the
cross products ``N`` of matrix subfamilies.  In dimension >= 3, ``grad log
tau`` follows from the same cross products without any frame integration.
In 2D the cross products determine the anisotropy but not the frame
orientation, so ``log tau`` is recovered by frame integration with the
reconstructed structure (this needs an anchor frame).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import admissibility as adm
from .errors import AdmissibilityError, DomainError
from .recon_tau import integrate_gradient_tree, reconstruct_log_tau
from .tensor_algebra import DEFAULT_INJECTION_CAP, matrix_sqrt

log = logging.getLogger(__name__)


@dataclass
class AnisotropyReconstruction:
    """``gamma_tilde`` is NaN at flagged nodes; ``det_raw`` is the determinant before renormalization."""

    gamma_tilde: np.ndarray
    f: adm.FFunctional
    flagged: np.ndarray
    det_raw: np.ndarray

    @property
    def valid(self):
        return ~self.flagged


def reconstruct_anisotropy(family, H_basis, cap=DEFAULT_INJECTION_CAP, seed=0, c1=None, ffun=None):
    """F-weighted cross-product formula, symmetrized and projected onto ``det = 1``.

    Nodes with ``F`` below ``c1`` (or the relative default) are flagged and
    never divided; if every node is flagged an :class:`AdmissibilityError`
    is raised.
    """
    n = H_basis.shape[-1]
    if ffun is None or ffun.weighted_sum is None:
        ffun = adm.f_functional(family, H_basis, cap=cap, seed=seed, accumulate=True)
    flagged = ffun.flagged(c1)
    if np.all(flagged):
        raise AdmissibilityError(
            f"hyperplane functional below threshold at every node (max F = {float(ffun.values.max()):.3e})",
            nodes=None,
        )
    ok = ~flagged
    raw = np.full(H_basis.shape, np.nan)
    raw[ok] = ffun.weighted_sum[ok] / ffun.values[ok][:, None, None]
    raw[ok] = 0.5 * (raw[ok] + np.swapaxes(raw[ok], -1, -2))
    det_raw = np.full(H_basis.shape[:-2], np.nan)
    det_raw[ok] = np.linalg.det(raw[ok])
    if np.any(det_raw[ok] <= 0):
        bad = np.argwhere(ok & ~(det_raw > 0))
        raise AdmissibilityError(
            f"reconstructed structure not positive at {len(bad)} nodes", nodes=bad.tolist()
        )
    gt = np.full_like(raw, np.nan)
    gt[ok] = raw[ok] / det_raw[ok][:, None, None] ** (1.0 / n)
    if np.any(flagged):
        log.warning("%d nodes flagged (F below threshold)", int(flagged.sum()))
    return AnisotropyReconstruction(gt, ffun, flagged, det_raw)


def grad_log_tau_data_only(recon, H_basis, dH_basis):
    """``grad log tau`` from data and the reconstructed structure (n >= 3).

    Uses exactly the subfamilies of ``recon.f``:
    ``2 / (n F |H|^{1/2}) sum_J (grad(|H|^{1/2} H^{jl}) . N e_l) gamma_tilde^{-1} N e_j``.
    """
    n = H_basis.shape[-1]
    if n < 3:
        raise DomainError("data-only grad log tau needs n >= 3; in 2D use frame integration")
    ffun = recon.f
    ok = recon.valid
    H, dH = H_basis[ok], dH_basis[ok]
    Hinv = np.linalg.inv(H)
    sq = np.sqrt(np.linalg.det(H))
    dlog = np.einsum("...ij,...jip->...p", Hinv, dH)
    dHinv = -np.einsum("...ij,...jkp,...kl->...ilp", Hinv, dH, Hinv)
    # grad(|H|^{1/2} H^{jl}) = |H|^{1/2} (H^{jl} grad log|H| / 2 + grad H^{jl})
    dQ = sq[:, None, None, None] * (0.5 * Hinv[..., None] * dlog[:, None, None, :] + dHinv)
    gt_inv = np.linalg.inv(recon.gamma_tilde[ok])
    members = ffun.members[ok]
    acc = np.zeros(H.shape[:-1])
    for J, N in adm.cross_products(members, ffun.injections):
        coef = np.einsum("...jlp,...pl->...j", dQ, N)
        acc += np.einsum("...j,...qj->...q", coef, gt_inv @ N)
    out = np.full(H_basis.shape[:-1], np.nan)
    out[ok] = 2.0 * acc / (n * ffun.values[ok] * sq)[:, None]
    return out


@dataclass
class FullReconstruction:
    gamma_tilde: np.ndarray
    log_tau: np.ndarray
    grad_log_tau: np.ndarray
    flagged: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def tau(self):
        return np.exp(self.log_tau)

    @property
    def gamma(self):
        return self.tau[..., None, None] * self.gamma_tilde


def reconstruct_full(data, anchor, block_size=8, c0=None, c1=None, cap=DEFAULT_INJECTION_CAP, seed=0,
                     substeps=2, collar=2):
    """Anisotropy and scalar factor from power densities alone (plus an anchor).

    ``anchor`` supplies ``log tau`` at the grid center; in 2D its frame
    ``S`` is needed as well.
    """
    grid = data.grid
    n = grid.dim
    if data.l < 1:
        raise DomainError("full reconstruction needs at least one additional solution")
    report, cover, zs, family, _ = adm.check(data, block_size=block_size, c0=c0, c1=c1, cap=cap, seed=seed)
    HI, dHI = adm.basis_block(data, cover)
    recon = reconstruct_anisotropy(family, HI, cap=cap, seed=seed, c1=c1)
    interior = grid.interior_mask(collar)
    diag = {
        "admissibility": report.to_json(),
        "flagged": int(recon.flagged.sum()),
        "det_raw_deviation": float(np.nanmax(np.abs(recon.det_raw[interior] - 1.0))),
        "injections_used": len(recon.f.injections),
    }
    if n >= 3:
        F = grad_log_tau_data_only(recon, HI, dHI)
        log_tau = integrate_gradient_tree(grid, F, anchor.log_tau)
        diag["tau_route"] = "data-only"
    else:
        if np.any(recon.flagged):
            raise AdmissibilityError(
                f"2D scalar-factor integration needs every node admissible; {int(recon.flagged.sum())} flagged",
                nodes=np.argwhere(recon.flagged).tolist(),
            )
        if cover.K > 1 and len(set(cover.injections)) > 1:
            raise DomainError("2D frame integration needs a single support basis")
        a_rec = matrix_sqrt(recon.gamma_tilde)
        tr = reconstruct_log_tau(anchor, data, a_rec, substeps=substeps, basis=cover.injections[0])
        log_tau, F = tr.log_tau, tr.grad_log_tau
        diag["tau_route"] = "frame"
        diag["frame"] = tr.diagnostics
    return FullReconstruction(recon.gamma_tilde, log_tau, F, recon.flagged, diag)
