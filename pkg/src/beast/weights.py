"""Weight file format.

Layout: magic b"BEASTWT1"; u32 little-endian JSON header length; JSON header
{"config": <model config>, "tensors": [{"name", "dtype": "f32", "shape"}...]}
in storage order; then the raw little-endian f32 blobs concatenated in header
order, no padding. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import ModelConfig, ModelParams, param_shapes
from .tensor import Tensor

MAGIC = b"BEASTWT1"


class WeightFileError(Exception):
    """Base for weight-file problems."""


class WeightMagicError(WeightFileError):
    """File does not start with the expected magic bytes."""


class WeightShapeError(WeightFileError):
    """A tensor's header entry disagrees with the embedded config."""


class WeightTruncatedError(WeightFileError):
    """File ends before the declared payload does."""


class WeightMissingTensorError(WeightFileError):
    """A required tensor is absent from the header."""

    def __init__(self, name: str):
        super().__init__(f"missing tensor: {name}")
        self.name = name


def save_weights(params: ModelParams, path) -> None:
    header = {
        "config": params.cfg.to_json_dict(),
        "tensors": [{"name": n, "dtype": "f32", "shape": list(t.shape)} for n, t in params.tensors.items()],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for t in params.tensors.values():
            fh.write(np.ascontiguousarray(t.data.astype("<f4")).tobytes())


def load_weights(path) -> ModelParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) or raw[:len(MAGIC)] != MAGIC:
        raise WeightMagicError(f"{path}: bad magic {raw[:len(MAGIC)]!r}")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise WeightTruncatedError(f"{path}: missing header length")
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if len(raw) < pos + hlen:
        raise WeightTruncatedError(f"{path}: header cut short")
    try:
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
        cfg = ModelConfig.from_json_dict(header["config"])
        entries = header["tensors"]
    except (ValueError, KeyError, TypeError) as e:
        raise WeightFileError(f"{path}: malformed header ({e})") from e
    pos += hlen

    expected = param_shapes(cfg)
    present = {e["name"] for e in entries}
    for name in expected:
        if name not in present:
            raise WeightMissingTensorError(name)
    tensors: dict[str, Tensor] = {}
    for entry in entries:
        name, shape = entry["name"], tuple(entry["shape"])
        if entry.get("dtype") != "f32":
            raise WeightShapeError(f"{name}: unsupported dtype {entry.get('dtype')}")
        if name not in expected:
            raise WeightShapeError(f"unexpected tensor {name}")
        if shape != expected[name]:
            raise WeightShapeError(f"{name}: header shape {shape} != config shape {expected[name]}")
        nbytes = int(np.prod(shape)) * 4
        if pos + nbytes > len(raw):
            raise WeightTruncatedError(f"{path}: payload for {name} cut short")
        data = np.frombuffer(raw[pos:pos + nbytes], dtype="<f4").reshape(shape)
        tensors[name] = Tensor(data.copy(), requires_grad=True)
        pos += nbytes
    if pos != len(raw):
        raise WeightFileError(f"{path}: {len(raw) - pos} trailing bytes after payload")
    return ModelParams(cfg, tensors)
