"""Model checkpoint file format.

Layout (all integers little-endian):

    bytes 0..7    magic "DBATLAS1"
    bytes 8..11   uint32 header length H
    bytes 12..12+H-1   UTF-8 JSON header: family, width, depth, input_dims,
                       num_classes, init_seed, train_meta (optimizer, epochs,
                       data_seed, noise_rate), param_count
    remainder     param_count little-endian float32 parameters

The header JSON is serialized with sorted keys and no whitespace so a given
model always produces identical bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import FormatError
from .models import Model, ModelSpec, TrainMeta

MAGIC = b"DBATLAS1"


def checkpoint_bytes(model: Model) -> bytes:
    header = {
        **model.spec.to_json_dict(),
        "train_meta": model.train_meta.to_json_dict(),
        "param_count": int(model.params.size),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = np.ascontiguousarray(model.params, dtype="<f4").tobytes()
    return MAGIC + len(header_bytes).to_bytes(4, "little") + header_bytes + body


def save_checkpoint(model: Model, path: str | Path) -> None:
    """Write atomically (tmp + rename) so interrupted sweeps never leave
    half-written checkpoints behind."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Model:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated checkpoint", offset=len(raw))
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}", offset=0)
    header_len = int.from_bytes(raw[8:12], "little")
    if len(raw) < 12 + header_len:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    try:
        header = json.loads(raw[12 : 12 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})", offset=12) from exc
    spec = ModelSpec.from_json_dict(header)
    meta = TrainMeta.from_json_dict(header["train_meta"])
    count = header["param_count"]
    body = raw[12 + header_len :]
    if len(body) != 4 * count:
        raise FormatError(
            f"{path}: parameter payload is {len(body)} bytes, expected {4 * count}",
            offset=12 + header_len + min(len(body), 4 * count),
        )
    params = np.frombuffer(body, dtype="<f4").copy()
    return Model(spec=spec, params=params, train_meta=meta)
