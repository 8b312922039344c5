"""Error norms, error reports and noise-sweep stability fits."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, IntegrationError, AdmissibilityError
from .forward import add_noise
from .grid import gradient

log = logging.getLogger(__name__)

DEFAULT_COLLAR = 2


def _region(grid, collar):
    if collar is None or collar == 0:
        return np.ones(grid.shape, dtype=bool)
    mask = grid.interior_mask(collar)
    if not mask.any():
        raise DomainError(f"collar {collar} leaves no nodes on grid {grid.shape}")
    return mask


def pointwise_norm(grid, f):
    """Absolute value, Euclidean norm or Frobenius norm at every node."""
    f = np.asarray(f, dtype=float)
    extra = f.ndim - grid.dim
    if extra == 0:
        return np.abs(f)
    return np.sqrt(np.sum(f**2, axis=tuple(range(grid.dim, f.ndim))))


def linf_norm(grid, f, collar=None):
    """Max over nodes of the pointwise norm; ``collar`` cells are excluded."""
    mask = _region(grid, collar)
    return float(np.max(pointwise_norm(grid, f)[mask]))


def w1inf_norm(grid, f, collar=None):
    """``linf(f) + linf(grad f)`` with finite-difference gradients."""
    return linf_norm(grid, f, collar) + linf_norm(grid, gradient(grid, f), collar)


def config_hash(config):
    """sha256 of the canonical JSON encoding."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ErrorReport:
    linf_value: float
    w1inf_value: float
    fields: dict
    grid: dict
    config_hash: str | None = None
    collar: int = DEFAULT_COLLAR

    def to_json(self):
        return asdict(self)


def error_report(grid, pairs, collar=DEFAULT_COLLAR, cfg_hash=None, relative=()):
    """Errors of ``{name: (reconstruction, truth)}``.

    Each field gets ``linf`` and ``w1inf`` of the difference (``relative``
    names are also divided by ``linf`` of the truth).  The headline values
    are the maxima over fields.
    """
    out = {}
    for name, (rec, truth) in pairs.items():
        diff = np.asarray(rec, dtype=float) - np.asarray(truth, dtype=float)
        entry = {"linf": linf_norm(grid, diff, collar), "w1inf": w1inf_norm(grid, diff, collar)}
        if name in relative:
            scale = linf_norm(grid, truth, collar)
            entry["linf_rel"] = entry["linf"] / scale
        out[name] = entry
    return ErrorReport(
        linf_value=max(e["linf"] for e in out.values()),
        w1inf_value=max(e["w1inf"] for e in out.values()),
        fields=out,
        grid=grid.to_json(),
        config_hash=cfg_hash,
        collar=collar,
    )


def loglog_fit(x, y):
    """Slope, intercept and rms residual of ``log y = a log x + b``."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    a, b = np.polyfit(lx, ly, 1)
    res = float(np.sqrt(np.mean((ly - (a * lx + b)) ** 2)))
    return float(a), float(b), res


@dataclass
class StabilityFit:
    deltas: list
    perturbation: list
    errors: dict
    slopes: dict
    intercepts: dict
    residuals: dict
    monotone: dict
    failed_level: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)

    def write_csv(self, path):
        names = sorted(self.errors)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delta", "data_w1inf"] + names)
            for k, d in enumerate(self.deltas):
                w.writerow([repr(d), repr(self.perturbation[k])] + [repr(self.errors[n][k]) for n in names])


def stability_experiment(data, reconstruct, deltas, seed=0, collar=DEFAULT_COLLAR):
    """Noise sweep with errors measured against the noiseless reconstruction.

    ``reconstruct(data) -> {name: field}``.  Every level uses the same
    ``seed``, so the perturbation pattern is shared and only its amplitude
    changes.  The abscissa of the fit is the measured
    ``|H_delta - H|_{W^{1,inf}}`` on the same interior region.  A level whose
    reconstruction fails truncates the sweep.
    """
    deltas = [float(d) for d in deltas]
    if len(deltas) < 4:
        raise DomainError("stability sweep needs at least 4 noise levels")
    if any(b <= a for a, b in zip(deltas, deltas[1:])) or deltas[0] <= 0:
        raise DomainError("noise levels must be positive and strictly increasing")
    grid = data.grid
    base = reconstruct(data)
    errs = {name: [] for name in base}
    pert, used = [], []
    failed = None
    for d in deltas:
        noisy = add_noise(data, d, seed)
        try:
            rec = reconstruct(noisy)
        except (AdmissibilityError, IntegrationError) as exc:
            log.warning("noise level %g failed: %s", d, exc)
            failed = d
            break
        used.append(d)
        pert.append(w1inf_norm(grid, noisy.H - data.H, collar))
        for name, f in rec.items():
            errs[name].append(linf_norm(grid, f - base[name], collar))
    slopes, inter, resid, mono = {}, {}, {}, {}
    for name, e in errs.items():
        if len(e) >= 2 and min(e) > 0:
            slopes[name], inter[name], resid[name] = loglog_fit(pert, e)
        mono[name] = bool(all(b >= a for a, b in zip(e, e[1:])))
    return StabilityFit(used, pert, errs, slopes, inter, resid, mono, failed)
