"""Versioned binary parameter checkpoints.

Layout (little-endian throughout):

    magic  b"DAIL"
    format version  u32 (currently 1)
    repeated until EOF, one record per named network:
        name length  u16, name bytes (utf-8)
        layer count  u32
        per layer: in_dim u32, out_dim u32,
                   weights  in_dim*out_dim f64 row-major,
                   biases   out_dim f64

Scalars (e.g. the entropy temperature) are stored as a 1x1 single-layer
network whose weight holds the value and whose bias is zero. Activation
tags are architecture, not parameters, and are reattached by the loader's
caller.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DAIL"
VERSION = 1


class CheckpointError(Exception):
    pass


class NotACheckpointError(CheckpointError):
    pass


class UnsupportedCheckpointVersion(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


RawNetwork = list[tuple[np.ndarray, np.ndarray]]


def save_checkpoint(path, networks: dict[str, RawNetwork]) -> None:
    """``networks`` maps a name to [(W, b), ...] layer arrays."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, layers in networks.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", len(layers)))
        for w, b in layers:
            w = np.ascontiguousarray(w, dtype="<f8")
            b = np.ascontiguousarray(b, dtype="<f8")
            chunks.append(struct.pack("<II", w.shape[0], w.shape[1]))
            chunks.append(w.tobytes())
            chunks.append(b.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, RawNetwork]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise NotACheckpointError(f"{path}: not a DiffAIL checkpoint")
    if len(buf) < 8:
        raise TruncatedCheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise UnsupportedCheckpointVersion(
            f"{path}: unsupported checkpoint version {version}"
        )
    pos = 8
    networks: dict[str, RawNetwork] = {}

    def need(n):
        if pos + n > len(buf):
            raise TruncatedCheckpointError(f"{path}: truncated at byte {pos}")

    while pos < len(buf):
        need(2)
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(name_len)
        name = buf[pos : pos + name_len].decode("utf-8")
        pos += name_len
        need(4)
        (n_layers,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        layers: RawNetwork = []
        for _ in range(n_layers):
            need(8)
            in_dim, out_dim = struct.unpack_from("<II", buf, pos)
            pos += 8
            wn = in_dim * out_dim * 8
            need(wn + out_dim * 8)
            w = np.frombuffer(buf, dtype="<f8", count=in_dim * out_dim, offset=pos)
            w = w.reshape(in_dim, out_dim).copy()
            pos += wn
            b = np.frombuffer(buf, dtype="<f8", count=out_dim, offset=pos).copy()
            pos += out_dim * 8
            layers.append((w, b))
        networks[name] = layers
    return networks


def pack_scalar(value: float) -> RawNetwork:
    return [(np.array([[value]]), np.zeros(1))]


def unpack_scalar(layers: RawNetwork) -> float:
    return float(layers[0][0][0, 0])
