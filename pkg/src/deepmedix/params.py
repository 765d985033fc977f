"""ParamSet helpers: copying, distances and checkpoint directories.

A ParamSet is an insertion-ordered ``dict`` of slot name to numpy array. A
checkpoint is a directory of DMTX files plus ``manifest.json`` listing
``name``, ``file``, ``shape`` and ``dtype`` for every slot.
"""

import json
from pathlib import Path

import numpy as np

from . import tensorio
from .errors import DataError


def copy(params):
    return {k: v.copy() for k, v in params.items()}


def merge(params, updates):
    """New ParamSet with ``updates`` overriding matching slots."""
    out = dict(params)
    for k, v in updates.items():
        out[k] = np.asarray(v, dtype=params[k].dtype)
    return out


def astype(params, dtype):
    return {k: v.astype(dtype) for k, v in params.items()}


def max_abs_diff(a, b):
    if a.keys() != b.keys():
        raise ValueError("ParamSets have different slots")
    return max((float(np.max(np.abs(a[k].astype(np.float64) - b[k]))) for k in a if a[k].size), default=0.0)


def save_checkpoint(directory, params, extra=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    slots = []
    for i, (name, arr) in enumerate(params.items()):
        fname = f"slot{i:04d}.dmtx"
        tensorio.save(directory / fname, arr)
        slots.append({"name": name, "file": fname, "shape": list(arr.shape), "dtype": str(arr.dtype)})
    manifest = {"slots": slots}
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(directory):
    """Return ``(params, manifest)``."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError as e:
        raise DataError(f"no checkpoint manifest in {directory}") from e
    params = {}
    for slot in manifest["slots"]:
        arr = tensorio.load(directory / slot["file"])
        if list(arr.shape) != slot["shape"] or str(arr.dtype) != slot["dtype"]:
            raise DataError(f"slot {slot['name']!r} does not match its manifest entry")
        params[slot["name"]] = arr
    return params, manifest
