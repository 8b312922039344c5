"""Field containers: a directory with ``manifest.json`` plus one raw
little-endian float64 file per field (node-major, last axis fastest,
components contiguous per node, matrices row-major).
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import DomainError, FieldIOError
from .grid import Grid

FORMAT_VERSION = 1
KINDS = ("scalar", "vector", "matrix")


def field_kind(grid, values):
    extra = values.shape[grid.dim :]
    if values.shape[: grid.dim] != grid.shape:
        raise FieldIOError(f"field shape {values.shape} does not start with grid shape {grid.shape}")
    if extra == ():
        return "scalar"
    if extra == (grid.dim,):
        return "vector"
    if len(extra) == 2 and extra[0] == extra[1]:
        return "matrix"
    raise FieldIOError(f"unsupported component shape {extra}")


def write_fields(directory, grid, fields):
    """Write ``fields`` (name -> array) to a container at ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, values in fields.items():
        values = np.asarray(values, dtype=float)
        kind = field_kind(grid, values)
        if not np.all(np.isfinite(values)):
            raise FieldIOError(f"field {name!r} has non-finite values")
        fname = f"{name}.bin"
        (directory / fname).write_bytes(np.ascontiguousarray(values, dtype="<f8").tobytes())
        entries.append({"name": name, "kind": kind, "file": fname})
    manifest = {"format_version": FORMAT_VERSION, **grid.to_json(), "fields": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def _grid_from_manifest(manifest):
    try:
        if manifest["format_version"] != FORMAT_VERSION:
            raise FieldIOError(f"unsupported format_version {manifest['format_version']!r}")
        dim = int(manifest["dim"])
        shape = tuple(manifest["points_per_axis"])
        if len(shape) != dim:
            raise FieldIOError(f"dim {dim} disagrees with points_per_axis {shape}")
        return Grid(shape, manifest["origin"], manifest["spacing"])
    except (KeyError, TypeError) as exc:
        raise FieldIOError(f"malformed manifest: {exc!r}") from exc
    except DomainError as exc:
        raise FieldIOError(f"malformed manifest: {exc}") from exc


def read_fields(directory):
    """Return ``(grid, {name: array})`` from a container."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FieldIOError(f"cannot read manifest in {directory}: {exc}") from exc
    grid = _grid_from_manifest(manifest)
    fields = {}
    for entry in manifest.get("fields", []):
        try:
            name, kind, fname = entry["name"], entry["kind"], entry["file"]
        except (KeyError, TypeError) as exc:
            raise FieldIOError(f"malformed field entry {entry!r}") from exc
        if kind not in KINDS:
            raise FieldIOError(f"field {name!r}: unknown kind {kind!r}")
        try:
            raw = (directory / fname).read_bytes()
        except OSError as exc:
            raise FieldIOError(f"field {name!r}: cannot read {fname}: {exc}") from exc
        if len(raw) % 8:
            raise FieldIOError(f"field {name!r}: payload of {len(raw)} bytes is not a whole number of float64")
        values = np.frombuffer(raw, dtype="<f8").astype(float)
        ncomp, rem = divmod(values.size, grid.size)
        expected = {"scalar": 1, "vector": grid.dim}.get(kind)
        if rem or ncomp == 0 or (expected is not None and ncomp != expected):
            want = grid.size * (expected or 1)
            raise FieldIOError(
                f"field {name!r}: payload has {values.size} values, manifest implies "
                f"{want if expected else f'a multiple of {grid.size}'} ({kind} on {grid.shape})"
            )
        if kind == "scalar":
            values = values.reshape(grid.shape)
        elif kind == "vector":
            values = values.reshape(grid.shape + (grid.dim,))
        else:
            k = math.isqrt(ncomp)
            if k * k != ncomp:
                raise FieldIOError(f"field {name!r}: {ncomp} components per node is not a square matrix")
            values = values.reshape(grid.shape + (k, k))
        if not np.all(np.isfinite(values)):
            raise FieldIOError(f"field {name!r} has non-finite values")
        fields[name] = values
    return grid, fields
