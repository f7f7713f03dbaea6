"""Checkpoint files: magic ``VGC1``, fixed header, float32 parameter blobs
in declaration order, trailing CRC32 of everything after the magic.

Header after the magic: version u16, tying u8 (1 tied / 0 untied), output
mode u8 (0 multilabel / 1 singlelabel), then F, M, C as u32, all little
endian. Blobs follow in declaration order (per block: attention weights
and biases, propagation weights, layer-norm gains then biases; then the
classifier layers) with the dropout rate as one trailing float32.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import BadMagicError, ChecksumError, CorruptRecordError, TruncatedError
from .head import HeadParams, init_head

CHECKPOINT_MAGIC = b"VGC1"
CHECKPOINT_VERSION = 1

_MODE_CODES = {"multilabel": 0, "singlelabel": 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


def save_checkpoint(params: HeadParams, path) -> None:
    payload = bytearray()
    payload += struct.pack("<H", CHECKPOINT_VERSION)
    payload += struct.pack(
        "<BB", 1 if params.tied else 0, _MODE_CODES[params.output_mode]
    )
    payload += struct.pack(
        "<III", params.feature_dim, params.n_layers, params.n_classes
    )
    for pair in params.grad_pairs():
        payload += pair.value.astype("<f4", copy=False).tobytes()
    payload += struct.pack("<f", params.dropout_rate)
    crc = zlib.crc32(bytes(payload)) & 0xFFFFFFFF
    with open(path, "wb") as out:
        out.write(CHECKPOINT_MAGIC)
        out.write(payload)
        out.write(struct.pack("<I", crc))


def read_checkpoint_header(path) -> dict:
    """Decode just the fixed header; used by the inspector."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(
            f"{path}: expected magic {CHECKPOINT_MAGIC!r}, found {data[:4]!r}"
        )
    if len(data) < 4 + 2 + 2 + 12:
        raise TruncatedError(f"{path}: header incomplete")
    version, tied, mode_code = struct.unpack("<HBB", data[4:8])
    f, m, c = struct.unpack("<III", data[8:20])
    if version != CHECKPOINT_VERSION:
        raise CorruptRecordError(f"{path}: unsupported checkpoint version {version}")
    if tied not in (0, 1) or mode_code not in _MODE_NAMES:
        raise CorruptRecordError(f"{path}: invalid tying/mode flags ({tied}, {mode_code})")
    return {
        "tied": bool(tied),
        "output_mode": _MODE_NAMES[mode_code],
        "feature_dim": f,
        "n_layers": m,
        "n_classes": c,
    }


def load_checkpoint(path) -> HeadParams:
    """Rebuild head parameters; refuses corrupted or truncated files."""
    path = Path(path)
    header = read_checkpoint_header(path)
    data = path.read_bytes()
    if len(data) < 8:
        raise TruncatedError(f"{path}: too short to hold a checkpoint")
    payload, stored_crc_bytes = data[4:-4], data[-4:]
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    (stored_crc,) = struct.unpack("<I", stored_crc_bytes)
    if crc != stored_crc:
        raise ChecksumError(
            f"{path}: checksum mismatch (stored {stored_crc:#010x}, computed {crc:#010x})"
        )

    # Build a correctly shaped head, then overwrite every tensor from the blobs.
    params = init_head(
        feature_dim=header["feature_dim"],
        n_classes=header["n_classes"],
        n_layers=header["n_layers"],
        tied=header["tied"],
        output_mode=header["output_mode"],
        dropout_rate=0.0,
        dtype=np.float32,
    )
    offset = 16  # header bytes inside the payload
    for pair in params.grad_pairs():
        nbytes = pair.value.size * 4
        if offset + nbytes > len(payload):
            raise TruncatedError(f"{path}: parameter blobs end early at offset {offset + 4}")
        blob = np.frombuffer(payload, dtype="<f4", count=pair.value.size, offset=offset)
        pair.value[...] = blob.reshape(pair.value.shape)
        offset += nbytes
    if offset + 4 > len(payload):
        raise TruncatedError(f"{path}: missing dropout rate field")
    (rate,) = struct.unpack_from("<f", payload, offset)
    offset += 4
    if offset != len(payload):
        raise CorruptRecordError(
            f"{path}: {len(payload) - offset} unexpected bytes after the parameter blobs"
        )
    params.dropout_rate = float(rate)
    return params
