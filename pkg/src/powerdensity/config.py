"""Experiment configuration and the synth / check / recon / stability stages.

Configs are JSON objects with a ``version`` field; missing keys take the
defaults below.  Every stage can run from a config alone or from the
containers written by an earlier stage.
"""

from __future__ import annotations

import copy
import json
import logging
from pathlib import Path

import numpy as np

from . import admissibility as adm
from .bc import (
    BoundaryTraceSet,
    constant_coefficient_seeds,
    linear_traces,
    make_diffeomorphism,
    pushforward_traces,
)
from .errors import ConfigError, FieldIOError
from .fieldio import read_fields, write_fields
from .forward import PowerDensitySet, synthesize
from .grid import Grid, data_gradient, gradient
from .metrics import config_hash, error_report, stability_experiment
from .phantoms import make_phantom
from .recon_gamma import reconstruct_full
from .recon_tau import AnchorData, anchor_from_truth, reconstruct_log_tau
from .tensor_algebra import DEFAULT_INJECTION_CAP, decompose, matrix_sqrt

log = logging.getLogger(__name__)

CONFIG_VERSION = 1

DEFAULTS = {
    "version": CONFIG_VERSION,
    "grid": {"dim": 2, "points": 33},
    "phantom": {"name": "constant"},
    "boundary": {"family": "seeds", "extension": None, "extra": [], "order": None, "pushforward": None},
    "mode": "full",
    "solver": {"tol": 1e-12, "max_iter": None},
    "thresholds": {"c0": None, "c1": None, "block_size": 8},
    "noise": {"level": 0.0, "seed": 0},
    "injections": {"cap": DEFAULT_INJECTION_CAP, "seed": 0},
    "integration": {"substeps": 2, "drift_budget": 0.1},
    "stability": {"deltas": [1e-5, 3e-5, 1e-4, 3e-4, 1e-3], "seed": 0},
    "metrics": {"collar": 2},
    "anchor": None,
    "verify": {"levels_2d": [33, 65], "levels_3d": [17, 33]},
    "output": "pd-out",
}

MODES = ("tau", "full")
FAMILIES = ("seeds", "linear")


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and key not in ("phantom", "anchor"):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = val
    return out


def load_config(source):
    """Validate a config (path, JSON string or dict) and fill in defaults."""
    if isinstance(source, dict):
        raw = source
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if raw.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {raw.get('version')!r}")
    cfg = _merge(DEFAULTS, raw)
    g = cfg["grid"]
    if g.get("dim") not in (2, 3):
        raise ConfigError("grid.dim must be 2 or 3")
    if not isinstance(g.get("points"), int) or g["points"] < 9 or g["points"] % 2 == 0:
        raise ConfigError("grid.points must be an odd integer >= 9")
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if cfg["boundary"]["family"] not in FAMILIES:
        raise ConfigError(f"boundary.family must be one of {FAMILIES}")
    if not isinstance(cfg["phantom"], (dict, str)):
        raise ConfigError("phantom must be an object or a catalog name")
    for key in ("level",):
        if not isinstance(cfg["noise"][key], (int, float)) or cfg["noise"][key] < 0:
            raise ConfigError("noise.level must be a nonnegative number")
    if not isinstance(cfg["stability"]["deltas"], list):
        raise ConfigError("stability.deltas must be a list")
    if cfg["anchor"] is not None:
        a = cfg["anchor"]
        if not isinstance(a, dict) or set(a) - {"node", "S", "log_tau"} or "S" not in a or "log_tau" not in a:
            raise ConfigError("anchor must be an object with S, log_tau and optional node")
    # build once so catalog names are checked up front
    build(cfg)
    return cfg


def build(cfg):
    """``(grid, phantom, traces)`` for a validated config."""
    n = cfg["grid"]["dim"]
    grid = Grid.unit(n, cfg["grid"]["points"])
    phantom = make_phantom(cfg["phantom"], n)
    x0 = grid.point(grid.center)
    bcfg = cfg["boundary"]
    psi = None
    if bcfg["pushforward"] is not None:
        psi = make_diffeomorphism(bcfg["pushforward"], n)
    elif phantom.diffeo is not None:
        psi = phantom.diffeo
    seed_phantom = phantom.base if (psi is not None and phantom.base is not None) else phantom
    if bcfg["family"] == "linear":
        traces = linear_traces(n, x0)
    else:
        x_seed = psi.inverse(x0) if psi is not None else x0
        gamma0 = seed_phantom.gamma(np.asarray(x_seed, dtype=float)[None])[0]
        traces = constant_coefficient_seeds(gamma0, x_seed, bcfg["extension"])
    traces = _extra_traces(traces, bcfg["extra"], n, x0)
    if bcfg["order"] is not None:
        order = bcfg["order"]
        if not isinstance(order, list) or len(order) < n or any(
            not isinstance(j, int) or not 0 <= j < len(traces) for j in order
        ):
            raise ConfigError(f"boundary.order must list at least {n} trace indices below {len(traces)}")
        traces = traces.subset(order)
    if psi is not None:
        traces = pushforward_traces(traces, psi)
    return grid, phantom, traces


def _extra_traces(traces, extra, n, x0):
    out = BoundaryTraceSet(list(traces.labels), list(traces.funcs), traces.m, dict(traces.meta))
    for k, spec in enumerate(extra):
        kind = spec.get("type") if isinstance(spec, dict) else None
        if kind == "duplicate":
            j = int(spec["of"])
            if not 0 <= j < len(out):
                raise ConfigError(f"boundary.extra[{k}]: no trace {j} to duplicate")
            out.labels.append(f"{out.labels[j]}-dup")
            out.funcs.append(out.funcs[j])
        elif kind == "linear":
            c = np.asarray(spec["coef"], dtype=float)
            out.labels.append(f"linear{k}")
            out.funcs.append(lambda x, c=c: (x - x0) @ c)
        elif kind == "quadratic":
            Q = np.asarray(spec["matrix"], dtype=float)
            if Q.shape != (n, n):
                raise ConfigError(f"boundary.extra[{k}]: matrix must be {n}x{n}")
            out.labels.append(f"quadratic{k}")
            out.funcs.append(lambda x, Q=Q: 0.5 * np.einsum("...i,ij,...j->...", x - x0, Q, x - x0))
        else:
            raise ConfigError(f"boundary.extra[{k}]: type must be duplicate, linear or quadratic")
    return out


def synth(cfg):
    """Forward solves.  Returns ``(data, truth)``; ``truth`` holds fields and the anchor."""
    grid, phantom, traces = build(cfg)
    gamma, tau, gt, at = phantom.truth(grid)
    n = grid.dim
    noise = cfg["noise"] if cfg["noise"]["level"] > 0 else None
    data = synthesize(grid, gamma, traces, m=n, noise=noise, tol=cfg["solver"]["tol"], max_iter=cfg["solver"]["max_iter"])
    anchor = anchor_from_truth(grid, gamma, data.grad_u[..., :n, :], np.log(tau))
    truth = {"gamma": gamma, "tau": tau, "log_tau": np.log(tau), "gamma_tilde": gt, "a_tilde": at, "anchor": anchor}
    return data, truth


def _anchor_json(anchor):
    return {"node": list(anchor.node), "S": np.asarray(anchor.S).tolist(), "log_tau": anchor.log_tau}


def save_synth(directory, cfg, data, truth):
    directory = Path(directory)
    fields = {"H": data.H, "gamma": truth["gamma"], "log_tau": truth["log_tau"], "gamma_tilde": truth["gamma_tilde"]}
    try:
        write_fields(directory, data.grid, fields)
        meta = {
            "m": data.m,
            "labels": data.labels,
            "noise": data.noise,
            "anchor": _anchor_json(truth["anchor"]),
            "config_hash": config_hash(cfg),
        }
        (directory / "synth.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    except OSError as exc:
        raise FieldIOError(f"cannot write synth container {directory}: {exc}") from exc
    return directory


def load_synth(directory):
    directory = Path(directory)
    grid, fields = read_fields(directory)
    try:
        meta = json.loads((directory / "synth.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FieldIOError(f"cannot read {directory / 'synth.json'}: {exc}") from exc
    H = fields["H"]
    data = PowerDensitySet(grid=grid, H=H, grad_H=data_gradient(grid, H), m=int(meta["m"]), labels=meta["labels"], noise=meta["noise"])
    a = meta["anchor"]
    dec = decompose(fields["gamma_tilde"])
    truth = {
        "gamma": fields["gamma"],
        "log_tau": fields["log_tau"],
        "tau": np.exp(fields["log_tau"]),
        "gamma_tilde": fields["gamma_tilde"],
        "a_tilde": dec.a_tilde,
        "anchor": AnchorData(tuple(a["node"]), np.asarray(a["S"]), float(a["log_tau"])),
    }
    return data, truth


def check(cfg, data):
    t = cfg["thresholds"]
    inj = cfg["injections"]
    mask = data.grid.interior_mask(cfg["metrics"]["collar"])
    report, *_ = adm.check(data, block_size=t["block_size"], c0=t["c0"], c1=t["c1"], cap=inj["cap"], seed=inj["seed"], mask=mask)
    return report.to_json()


def config_anchor(cfg, grid):
    """User-supplied anchor from the config, or None."""
    a = cfg["anchor"]
    if a is None:
        return None
    node = tuple(a.get("node", grid.center))
    S = np.asarray(a["S"], dtype=float)
    if S.shape != (grid.dim, grid.dim) or not grid.contains(node):
        raise ConfigError("anchor.S must be n x n and anchor.node a grid index")
    return AnchorData(node, S, float(a["log_tau"]))


def recon(cfg, data, truth):
    """Reconstruction in the configured mode plus its error report.

    ``truth`` needs ``anchor`` (unless the config supplies one) and, for the
    error report, the true fields; without them only the reconstruction is
    returned.
    """
    grid = data.grid
    truth = dict(truth or {})
    user = config_anchor(cfg, grid)
    if user is not None:
        truth["anchor"] = user
    if "anchor" not in truth:
        raise ConfigError("reconstruction needs an anchor (synth container or config 'anchor')")
    if cfg["mode"] == "tau" and "a_tilde" not in truth:
        raise ConfigError("mode 'tau' needs the anisotropic structure from the synth container")
    collar = cfg["metrics"]["collar"]
    integ = cfg["integration"]
    if cfg["mode"] == "tau":
        res = reconstruct_log_tau(truth["anchor"], data, truth["a_tilde"], substeps=integ["substeps"],
                                  drift_budget=integ["drift_budget"], collar=collar)
        out = {"log_tau": res.log_tau, "tau": np.exp(res.log_tau)}
        pairs = {"log_tau": (res.log_tau, truth.get("log_tau"))}
        diag = res.diagnostics
        flagged = None
    else:
        t, inj = cfg["thresholds"], cfg["injections"]
        res = reconstruct_full(data, truth["anchor"], block_size=t["block_size"], c0=t["c0"], c1=t["c1"],
                               cap=inj["cap"], seed=inj["seed"], substeps=integ["substeps"], collar=collar)
        out = {"log_tau": res.log_tau, "tau": res.tau, "gamma_tilde": res.gamma_tilde, "gamma": res.gamma}
        pairs = {"log_tau": (res.log_tau, truth.get("log_tau")),
                 "gamma_tilde": (res.gamma_tilde, truth.get("gamma_tilde"))}
        diag = res.diagnostics
        flagged = res.flagged
    pairs = {k: v for k, v in pairs.items() if v[1] is not None}
    errors = None
    if pairs:
        errors = error_report(grid, pairs, collar=collar, cfg_hash=config_hash(cfg), relative=("gamma_tilde",)).to_json()
    return out, flagged, {"mode": cfg["mode"], "diagnostics": diag, "errors": errors}


def save_recon(directory, grid, out, flagged):
    fields = {}
    for name, val in out.items():
        fields[name] = np.nan_to_num(val, nan=0.0, posinf=0.0, neginf=0.0)
    nonfinite = np.zeros(grid.shape, dtype=bool)
    for val in out.values():
        nonfinite |= ~np.all(np.isfinite(val.reshape(grid.shape + (-1,))), axis=-1)
    if flagged is not None:
        nonfinite |= flagged
    fields["flagged"] = nonfinite.astype(float)
    write_fields(directory, grid, fields)


def stability(cfg, data, truth):
    """Noise sweep for the configured mode; errors vs the noiseless run."""
    st = cfg["stability"]
    collar = cfg["metrics"]["collar"]

    def run(d):
        out, _, _ = recon(dict(cfg, metrics={"collar": collar}), d, truth)
        res = {"log_tau": out["log_tau"]}
        if "gamma_tilde" in out:
            res["gamma_tilde"] = out["gamma_tilde"]
        res["grad_log_tau"] = gradient(d.grid, out["log_tau"])
        return res

    return stability_experiment(data, run, st["deltas"], seed=st["seed"], collar=collar)
