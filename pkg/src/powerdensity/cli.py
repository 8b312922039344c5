"""Command line front end: ``pd synth|check|recon|stability|verify``.

Each stage reads the config and, when present, the containers an earlier
stage left in the output directory; nothing else is carried between runs.
Failures print ``{"error", "code", "message"}`` to stderr and exit with the
code of the exception class.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

log = logging.getLogger("powerdensity")


def _cap_threads():
    value = os.environ.get("PD_THREADS")
    if value:
        for var in THREAD_VARS:
            os.environ[var] = value


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_default)


def _default(obj):
    import numpy as np

    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats with None so reports stay strict JSON."""
    import math

    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _write(path, obj):
    from .errors import FieldIOError

    text = _dump(_clean(obj))
    try:
        Path(path).write_text(text + "\n")
    except OSError as exc:
        raise FieldIOError(f"cannot write {path}: {exc}") from exc
    return text


class Stage:
    """Config and output directory for one invocation."""

    def __init__(self, args):
        from . import config as cfgmod
        from .errors import ConfigError

        self.cfgmod = cfgmod
        out = Path(args.out) if args.out else None
        source = args.config
        if source is None:
            if out is None or not (out / "config.json").exists():
                raise ConfigError("no --config given and no config.json in the output directory")
            source = out / "config.json"
        self.cfg = cfgmod.load_config(source)
        if getattr(args, "mode", None):
            self.cfg["mode"] = args.mode
        self.out = out if out is not None else Path(self.cfg["output"])
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            from .errors import FieldIOError

            raise FieldIOError(f"cannot create output directory {self.out}: {exc}") from exc

    @property
    def synth_dir(self):
        return self.out / "synth"

    def data(self):
        """Synth container if one exists, otherwise a fresh forward solve."""
        if (self.synth_dir / "synth.json").exists():
            log.info("reading %s", self.synth_dir)
            return self.cfgmod.load_synth(self.synth_dir)
        return self.cfgmod.synth(self.cfg)


def cmd_synth(args):
    st = Stage(args)
    data, truth = st.cfgmod.synth(st.cfg)
    st.cfgmod.save_synth(st.synth_dir, st.cfg, data, truth)
    _write(st.out / "config.json", st.cfg)
    import numpy as np

    summary = {
        "container": str(st.synth_dir),
        "solutions": data.count,
        "basis": data.m,
        "labels": data.labels,
        "grid": data.grid.to_json(),
        "H_range": [float(np.min(data.H)), float(np.max(data.H))],
        "config_hash": st.cfgmod.config_hash(st.cfg),
    }
    print(_write(st.out / "synth-summary.json", summary))
    return 0


def cmd_check(args):
    st = Stage(args)
    data, _ = st.data()
    report = st.cfgmod.check(st.cfg, data)
    print(_write(st.out / "check.json", report))
    return 0


def cmd_recon(args):
    st = Stage(args)
    data, truth = st.data()
    out, flagged, report = st.cfgmod.recon(st.cfg, data, truth)
    st.cfgmod.save_recon(st.out / "recon", data.grid, out, flagged)
    print(_write(st.out / "recon.json", report))
    return 0


def cmd_stability(args):
    st = Stage(args)
    data, truth = st.data()
    fit = st.cfgmod.stability(st.cfg, data, truth)
    fit.write_csv(st.out / "stability.csv")
    print(_write(st.out / "stability.json", fit.to_json()))
    return 0


def cmd_verify(args):
    from .verify import run_suite

    st = Stage(args)
    v = st.cfg["verify"]
    result = run_suite(tuple(v["levels_2d"]), tuple(v["levels_3d"]))
    print(_write(st.out / "verify.json", result))
    return 0 if result["pass"] else 1


COMMANDS = {
    "synth": cmd_synth,
    "check": cmd_check,
    "recon": cmd_recon,
    "stability": cmd_stability,
    "verify": cmd_verify,
}


def build_parser():
    p = argparse.ArgumentParser(prog="pd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config (default: config.json in --out)")
        sp.add_argument("--out", help="output directory (default: config 'output')")
        if name in ("recon", "stability"):
            sp.add_argument("--mode", choices=("tau", "full"))
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    _cap_threads()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    from .errors import PowerDensityError

    try:
        return COMMANDS[args.command](args)
    except PowerDensityError as exc:
        err = {"error": type(exc).__name__, "code": exc.exit_code, "message": str(exc)}
        for attr in ("nodes", "block", "node", "residual", "iterations"):
            val = getattr(exc, attr, None)
            if val is not None:
                err[attr] = val
        if isinstance(err.get("nodes"), list) and len(err["nodes"]) > 50:
            err["nodes_total"] = len(err["nodes"])
            err["nodes"] = err["nodes"][:50]
        sys.stderr.write(_dump(_clean(err)) + "\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
