"""Checkpoint container: named float64 arrays plus a JSON metadata blob in one .npz."""

from __future__ import annotations

import io
import json
import os

import numpy as np

CHECKPOINT_FORMAT = "waydest.checkpoint"
CHECKPOINT_VERSION = 1
_META_KEY = "__meta__"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, **meta}
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **{_META_KEY: blob}, **{k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z[_META_KEY]).decode())
            arrays = {k: z[k] for k in z.files if k != _META_KEY}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown checkpoint format {meta.get('format')!r}")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {meta.get('version')} cannot be read by version {CHECKPOINT_VERSION}; "
            "re-run `train` to regenerate it"
        )
    return arrays, meta
