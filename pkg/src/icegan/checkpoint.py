"""Binary model persistence.

Layout: magic "IGDX", a little-endian u16 format version, then a body of
u32 header length + JSON header + raw parameter blobs, closed by the
CRC-32 of the body. The header carries the architecture descriptor (model
kind, front end, layer kinds with their hyperparameter tuples), the fitted
scaler, and the tensor name/shape table; blobs are little-endian float32 in
state-declaration order, so a round trip is bit-exact, batchnorm running
statistics included.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from . import data
from . import diffnet as dn
from .models import GanModel, PgancModel, PgantModel

MAGIC = b"IGDX"
VERSION = 1


class CheckpointError(ValueError):
    """File does not satisfy the checkpoint contract."""


class ChecksumError(CheckpointError):
    """Stored CRC-32 does not match the body."""


def _jsonable(obj):
    if isinstance(obj, (tuple, list)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _layer_sigs(obj) -> list:
    layers = obj.layers if isinstance(obj, dn.Stack) else [obj]
    return [[layer.kind, _jsonable(list(layer.hyper()))] for layer in layers]


def _branch_parts(prefix: str, branch) -> list:
    if isinstance(branch, GanModel):
        return [(f"{prefix}.ge", branch.ge), (f"{prefix}.gd", branch.gd),
                (f"{prefix}.de", branch.de), (f"{prefix}.dh", branch.d_head)]
    return [(prefix, branch)]


def _parts(model) -> list:
    out = (_branch_parts("gan_n", model.gan_normal)
           + _branch_parts("gan_ic", model.gan_icing))
    if isinstance(model, PgancModel):
        return out + [("fe", model.feature_stage), ("head", model.head)]
    return out + [("fe", model.cnn_fe), ("fc1", model.fc1),
                  ("fc1_act", model.fc1_act), ("fc2", model.fc2),
                  ("softmax", model.softmax)]


def _structure(model) -> list:
    return [[name, _layer_sigs(obj)] for name, obj in _parts(model)]


def _slope_of(model) -> float:
    if isinstance(model, PgantModel):
        return float(model.slope)
    return float(model.feature_stage.layers[1].slope)


def _arch(model) -> dict:
    if isinstance(model, PgancModel):
        return {"kind": "pganc", "front_end": model.front_end,
                "slope": _slope_of(model)}
    if isinstance(model, PgantModel):
        return {"kind": "pgant", "front_end": model.front_end,
                "fc1_features": int(model.fc1_features),
                "slope": _slope_of(model)}
    raise CheckpointError(f"cannot checkpoint a {type(model).__name__}")


def _rebuild(arch: dict):
    rng = np.random.default_rng(0)
    try:
        if arch["kind"] == "pganc":
            return PgancModel(rng, slope=arch["slope"],
                              front_end=arch["front_end"])
        if arch["kind"] == "pgant":
            return PgantModel(rng, slope=arch["slope"],
                              fc1_features=arch["fc1_features"],
                              front_end=arch["front_end"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad architecture descriptor: {exc}") from exc
    raise CheckpointError(f"unknown model kind {arch.get('kind')!r}")


def _scaler_dict(scaler: data.Scaler | None):
    if scaler is None:
        return None
    return {"names": list(scaler.names),
            "x_min": [float(v) for v in scaler.x_min],
            "x_max": [float(v) for v in scaler.x_max],
            "y_min": float(scaler.y_min), "y_max": float(scaler.y_max)}


def _scaler_from(d) -> data.Scaler | None:
    if d is None:
        return None
    return data.Scaler(x_min=np.array(d["x_min"], dtype=np.float64),
                       x_max=np.array(d["x_max"], dtype=np.float64),
                       y_min=d["y_min"], y_max=d["y_max"],
                       names=list(d["names"]))


def save_checkpoint(path, model, scaler: data.Scaler | None = None) -> None:
    """Write the model (and optionally the scaler it was trained behind)."""
    if model.dtype != np.float32:
        raise CheckpointError("only float32 models are persisted")
    state = model.state()
    header = {
        "arch": _arch(model),
        "structure": _structure(model),
        "scaler": _scaler_dict(scaler),
        "tensors": [[name, list(arr.shape)] for name, arr in state],
    }
    hjson = json.dumps(header, sort_keys=True,
                       separators=(",", ":")).encode("utf-8")
    blobs = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes()
                     for _, arr in state)
    body = struct.pack("<I", len(hjson)) + hjson + blobs
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<H", VERSION) + body
                 + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path):
    """Returns (model, scaler); scaler is None when none was stored."""
    raw = Path(path).read_bytes()
    if len(raw) < 14 or raw[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, = struct.unpack("<H", raw[4:6])
    if not (1 <= version <= VERSION):
        raise CheckpointError(f"unsupported format version {version}")
    body = raw[6:-4]
    stored, = struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != stored:
        raise ChecksumError("checksum mismatch, file is corrupted")

    try:
        hlen, = struct.unpack("<I", body[:4])
        header = json.loads(body[4:4 + hlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    blobs = body[4 + hlen:]

    model = _rebuild(header["arch"])
    if _structure(model) != header["structure"]:
        raise CheckpointError("layer structure does not match the descriptor")
    state = model.state()
    if [[n, list(a.shape)] for n, a in state] != header["tensors"]:
        raise CheckpointError("tensor table does not match the architecture")
    expected = 4 * sum(arr.size for _, arr in state)
    if len(blobs) != expected:
        raise CheckpointError(
            f"expected {expected} parameter bytes, found {len(blobs)}")

    offset = 0
    for _, arr in state:
        nbytes = 4 * arr.size
        arr[...] = np.frombuffer(blobs[offset:offset + nbytes],
                                 dtype="<f4").reshape(arr.shape)
        offset += nbytes
    return model, _scaler_from(header.get("scaler"))
