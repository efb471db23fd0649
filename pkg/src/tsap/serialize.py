"""Versioned parameter files with an embedded architecture manifest."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import ParamSet, Tensor

FORMAT_VERSION = 1


class ManifestMismatchError(ValueError):
    pass


def save_params(path, ps: ParamSet, manifest: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format_version": FORMAT_VERSION, "seed": ps.seed, **manifest}
    arrays = {f"param/{k}": v.data for k, v in ps.params.items()}
    arrays.update({f"buffer/{k}": v for k, v in ps.buffers.items()})
    with open(path, "wb") as fh:
        np.savez(fh, __manifest__=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
                 **arrays)
    return path


def read_manifest(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        return json.loads(bytes(z["__manifest__"]).decode())


def load_params(path, expected: dict | None = None) -> tuple[ParamSet, dict]:
    """Load parameters, refusing files whose manifest disagrees with ``expected``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"parameter file not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        manifest = json.loads(bytes(z["__manifest__"]).decode())
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ManifestMismatchError(f"{path}: unsupported format version {manifest.get('format_version')}")
        for key, want in (expected or {}).items():
            got = manifest.get(key)
            if json.dumps(got, sort_keys=True) != json.dumps(want, sort_keys=True):
                raise ManifestMismatchError(f"{path}: manifest field {key!r} is {got!r}, expected {want!r}")
        params = {k[6:]: Tensor(z[k].copy(), requires_grad=True) for k in z.files if k.startswith("param/")}
        buffers = {k[7:]: z[k].copy() for k in z.files if k.startswith("buffer/")}
    return ParamSet(params, buffers, manifest.get("seed")), manifest
