"""Versioned binary checkpoints with an embedded structure hash.

A checkpoint is a pickled envelope {format_version, schema_hash, payload}.
The schema hash fingerprints the payload's nested structure (key names and
value types, not shapes or lengths), so loading a file written by a
different layout of the code fails loudly instead of resuming nonsense.
Saving is atomic (temp file plus rename), and save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import hashlib
import os
import pickle
import tempfile
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_PICKLE_PROTOCOL = 4


class CheckpointError(RuntimeError):
    """Unreadable, truncated, or incompatible checkpoint file."""


def _signature(obj, path: str, lines: list[str]) -> None:
    if isinstance(obj, dict):
        lines.append(f"{path}:dict")
        for key in obj:
            _signature(obj[key], f"{path}.{key}", lines)
    elif isinstance(obj, (list, tuple)):
        kind = "list" if isinstance(obj, list) else "tuple"
        lines.append(f"{path}:{kind}")
        if obj:
            _signature(obj[0], f"{path}[]", lines)
    elif isinstance(obj, np.ndarray):
        lines.append(f"{path}:ndarray({obj.dtype})")
    else:
        lines.append(f"{path}:{type(obj).__name__}")


def schema_hash(payload: dict) -> str:
    lines: list[str] = []
    _signature(payload, "$", lines)
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def save_checkpoint(payload: dict, path: str | Path) -> None:
    path = Path(path)
    envelope = {
        "format_version": FORMAT_VERSION,
        "schema_hash": schema_hash(payload),
        "payload": payload,
    }
    blob = pickle.dumps(envelope, protocol=_PICKLE_PROTOCOL)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with open(path, "rb") as handle:
            envelope = pickle.load(handle)
    except (pickle.UnpicklingError, EOFError, AttributeError, ValueError) as err:
        raise CheckpointError(f"checkpoint unreadable (truncated or corrupt): {path}: {err}") from None
    if not isinstance(envelope, dict) or "payload" not in envelope:
        raise CheckpointError(f"checkpoint has no payload envelope: {path}")
    version = envelope.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} does not match supported version {FORMAT_VERSION}")
    payload = envelope["payload"]
    actual = schema_hash(payload)
    expected = envelope.get("schema_hash")
    if actual != expected:
        raise CheckpointError(
            f"checkpoint schema hash mismatch: file {expected}, computed {actual}")
    return payload
