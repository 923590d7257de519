"""Model checkpoints: named float64 parameter blocks plus a JSON metadata dict.

The container is an npz archive written through an open file handle so the
target path keeps its own extension. Float64 blocks survive a save/load
round trip bit for bit.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .tensor import Tensor

_META_KEY = "__meta__"


def save_checkpoint(path, params: dict, meta: dict | None = None) -> None:
    """Write named arrays and metadata to ``path``.

    ``params`` maps names to Tensors or arrays. Names must not collide with
    the reserved metadata key.
    """
    if _META_KEY in params:
        raise ValidationError(f"checkpoint: parameter name {_META_KEY!r} is reserved")
    blocks = {}
    for name, value in params.items():
        data = value.data if isinstance(value, Tensor) else value
        blocks[name] = np.asarray(data, dtype=np.float64)
    blocks[_META_KEY] = np.frombuffer(
        json.dumps(meta or {}, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **blocks)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (params, meta). Raises ValidationError on a foreign file."""
    try:
        with np.load(Path(path), allow_pickle=False) as archive:
            if _META_KEY not in archive:
                raise ValidationError(f"checkpoint: {path} has no metadata block")
            meta = json.loads(bytes(archive[_META_KEY]).decode("utf-8"))
            params = {k: archive[k] for k in archive.files if k != _META_KEY}
    except (OSError, ValueError) as exc:
        raise ValidationError(f"checkpoint: cannot read {path}: {exc}") from exc
    return params, meta
