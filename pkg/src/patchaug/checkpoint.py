"""Binary checkpoint files.

Layout (little-endian)::

    b"GALC"                 magic
    u32                     format version
    u32                     manifest length in bytes
    manifest                UTF-8 JSON: arch, geometry, config, step,
                            rng_state, tensors [{name, shape}, ...]
    float32 arrays          raw, in manifest order

The manifest is written with sorted keys so identical models produce
identical files.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import CheckpointError, CorruptManifestError, VersionMismatchError
from .models import ModelParams
from .tensor import Tensor

MAGIC = b"GALC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sII")


def save_checkpoint(m: ModelParams, path) -> None:
    tensors = []
    blobs = []
    for name, t in m.params.items():
        if t.dtype != np.float32:
            raise CheckpointError(f"{name}: checkpoints store float32 only, got {t.dtype}")
        tensors.append({"name": name, "shape": list(t.shape)})
        blobs.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    manifest = {
        "arch": m.arch,
        "geometry": list(m.geometry),
        "config": m.config,
        "step": int(m.step),
        "rng_state": m.rng_state,
        "tensors": tensors,
    }
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(text)))
            fh.write(text)
            for b in blobs:
                fh.write(b)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {os.fspath(path)}: {exc}") from exc


def load_checkpoint(path) -> ModelParams:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {os.fspath(path)}: {exc}") from exc

    if len(raw) < _HEADER.size:
        raise CorruptManifestError(f"{path}: file too short for a checkpoint header")
    magic, version, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptManifestError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    start = _HEADER.size
    if len(raw) < start + mlen:
        raise CorruptManifestError(f"{path}: manifest truncated")
    try:
        manifest = json.loads(raw[start:start + mlen].decode("utf-8"))
        specs = [(t["name"], tuple(int(s) for s in t["shape"])) for t in manifest["tensors"]]
        arch = manifest["arch"]
        geometry = tuple(int(v) for v in manifest["geometry"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptManifestError(f"{path}: unreadable manifest ({exc})") from exc

    offset = start + mlen
    needed = offset + sum(4 * int(np.prod(shape)) for _, shape in specs)
    if len(raw) != needed:
        raise CorruptManifestError(f"{path}: expected {needed} bytes, found {len(raw)}")
    params = {}
    for name, shape in specs:
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).astype(np.float32).reshape(shape)
        params[name] = Tensor._wrap(arr)
        offset += 4 * n
    return ModelParams(
        arch,
        geometry,
        params,
        manifest.get("config", {}),
        int(manifest.get("step", 0)),
        manifest.get("rng_state"),
    )
