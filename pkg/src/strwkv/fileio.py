"""Binary PPM images and the STRWKV01 checkpoint format.

Checkpoint layout::

    b"STRWKV01"
    uint64 LE  header length N
    N bytes    UTF-8 JSON {"config": {...}, "manifest": [{name, dtype, shape, offset, nbytes}, ...]}
    payload    concatenated little-endian tensors, offsets relative to payload start
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .model import ModelConfig, StyleTransferModel, init_params

MAGIC = b"STRWKV01"


class FormatError(ValueError):
    pass


# ------------------------------------------------------------------ images

def _header_tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens and the payload offset."""
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise FormatError("truncated PPM header")
        tokens.append(data[start:i])
    if i >= n or not data[i:i + 1].isspace():
        raise FormatError("missing whitespace after PPM header")
    return tokens, i + 1


def decode_ppm(data: bytes) -> np.ndarray:
    if data[:2] != b"P6":
        raise FormatError(f"not a binary PPM (P6) file: magic {data[:2]!r}")
    tokens, offset = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("malformed PPM header") from None
    if width < 1 or height < 1:
        raise FormatError("PPM dimensions must be positive")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    need = width * height * 3
    payload = data[offset:offset + need]
    if len(payload) < need:
        raise FormatError(f"truncated PPM payload: {len(payload)} of {need} bytes")
    pix = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return np.ascontiguousarray(pix.transpose(2, 0, 1), dtype=np.float64) / 255.0


def load_ppm(path) -> np.ndarray:
    """Read a P6 file as a ``[3, H, W]`` float image in [0, 1]."""
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def encode_ppm(img: np.ndarray) -> bytes:
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected [3, H, W], got {img.shape}")
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    _, h, w = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + q.transpose(1, 2, 0).tobytes()


def save_ppm(img: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))


# ------------------------------------------------------------- checkpoints

def expected_shapes(config: ModelConfig) -> dict:
    return {k: v.shape for k, v in init_params(config).items()}


def save_weights(model: StyleTransferModel, path) -> None:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in model.params.items():
        arr = np.asarray(arr)
        if arr.dtype.kind != "f":
            raise ValueError(f"{name}: only floating-point tensors can be saved, got {arr.dtype}")
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        manifest.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"config": model.config.to_dict(), "manifest": manifest}).encode()
    # write to a sibling temp file then rename, so readers never see half a checkpoint
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for c in chunks:
                fh.write(c)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def decode_weights(data: bytes) -> StyleTransferModel:
    if data[:8] != MAGIC:
        raise FormatError("not a STRWKV01 checkpoint")
    if len(data) < 16:
        raise FormatError("truncated checkpoint header")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if len(data) < 16 + hlen:
        raise FormatError("truncated checkpoint header")
    try:
        header = json.loads(data[16:16 + hlen])
        config = ModelConfig(**header["config"])
        manifest = header["manifest"]
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"bad checkpoint header: {e}") from None
    payload = memoryview(data)[16 + hlen:]
    expected = expected_shapes(config)
    if [m["name"] for m in manifest] != list(expected):
        raise FormatError("manifest entries do not match the embedded config")
    offset = 0
    params = {}
    for m in manifest:
        if m["offset"] != offset:
            raise FormatError(f"entry {m['name']} at offset {m['offset']}, expected {offset}")
        dt = np.dtype(m["dtype"])
        shape = tuple(m["shape"])
        if shape != expected[m["name"]]:
            raise FormatError(f"{m['name']}: shape {shape} disagrees with config {expected[m['name']]}")
        if dt.byteorder == ">" or dt.kind != "f" or m["nbytes"] != dt.itemsize * int(np.prod(shape)):
            raise FormatError(f"{m['name']}: inconsistent dtype/size")
        if offset + m["nbytes"] > len(payload):
            raise FormatError("truncated checkpoint payload")
        arr = np.frombuffer(payload[offset:offset + m["nbytes"]], dtype=dt).reshape(shape)
        params[m["name"]] = arr.astype(dt.newbyteorder("="))
        offset += m["nbytes"]
    if offset != len(payload):
        raise FormatError(f"payload has {len(payload) - offset} trailing bytes")
    return StyleTransferModel(config, params)


def load_weights(path) -> StyleTransferModel:
    with open(path, "rb") as fh:
        return decode_weights(fh.read())
