"""Seed handling.

All randomness flows through numpy's ``Philox`` bit generator (Philox4x64-10,
a counter-based generator with a 256-bit counter and 128-bit key).  Seeding
``Philox(seed)`` goes through numpy's ``SeedSequence``, so a given integer seed
produces the same stream on every platform numpy supports.

Sub-seeds are derived by name::

    derive_seed(seed, name) = int.from_bytes(sha256(f"{seed}:{name}")[:8], "little") >> 1

which keeps stages individually reproducible: re-running only the
``gan/class1`` stage with the same global seed reproduces its output.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a Philox generator's state."""
    state = rng.bit_generator.state
    inner = state["state"]
    return {
        "bit_generator": state["bit_generator"],
        "counter": [int(v) for v in inner["counter"]],
        "key": [int(v) for v in inner["key"]],
        "buffer": [int(v) for v in state["buffer"]],
        "buffer_pos": int(state["buffer_pos"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def restore_rng(snapshot: dict) -> np.random.Generator:
    bg = np.random.Philox()
    bg.state = {
        "bit_generator": snapshot["bit_generator"],
        "state": {
            "counter": np.array(snapshot["counter"], dtype=np.uint64),
            "key": np.array(snapshot["key"], dtype=np.uint64),
        },
        "buffer": np.array(snapshot["buffer"], dtype=np.uint64),
        "buffer_pos": snapshot["buffer_pos"],
        "has_uint32": snapshot["has_uint32"],
        "uinteger": snapshot["uinteger"],
    }
    return np.random.Generator(bg)
