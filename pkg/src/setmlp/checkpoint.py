"""Versioned binary model checkpoints (``.sevo``).

Byte layout, all little-endian::

    header   magic "SEVO" | u32 version | u32 n_layers L | u8 dtype tag (1=f4, 2=f8)
    widths   (L + 1) x u64
    config   u64 length | UTF-8 JSON of the NetworkConfig
    layer l  u64 nnz | u8 activation tag (0=relu, 1=sigmoid, 2=softmax)
             row_ptr (n_out + 1) x i64 | col_idx nnz x i32 | vals nnz x dtype
             bias n_out x dtype

Momentum buffers are not stored; a loaded network resumes with zero momentum.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .network import Network, NetworkConfig, SparseLayer
from .sparse import CSRMatrix
from .topology import TopologyParams

MAGIC = b"SEVO"
VERSION = 1
_ACT_TAGS = {"relu": 0, "sigmoid": 1, "softmax": 2}
_ACT_NAMES = {v: k for k, v in _ACT_TAGS.items()}
_DTYPE_TAGS = {"float32": 1, "float64": 2}
_DTYPE_NAMES = {v: k for k, v in _DTYPE_TAGS.items()}
_HEAD = struct.Struct("<4sIIB")


class CheckpointError(ValueError):
    pass


def _config_json(cfg: NetworkConfig) -> bytes:
    return json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode()


def save(net: Network, path) -> None:
    widths = net.config.layer_widths
    dt = np.dtype(net.config.dtype).newbyteorder("<")
    cfg = _config_json(net.config)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(net.layers), _DTYPE_TAGS[net.config.dtype]))
        fh.write(np.asarray(widths, dtype="<u8").tobytes())
        fh.write(struct.pack("<Q", len(cfg)))
        fh.write(cfg)
        for layer in net.layers:
            w = layer.weights
            fh.write(struct.pack("<QB", w.nnz, _ACT_TAGS[layer.activation]))
            fh.write(w.row_ptr.astype("<i8").tobytes())
            fh.write(w.col_idx.astype("<i4").tobytes())
            fh.write(w.vals.astype(dt).tobytes())
            fh.write(layer.bias.astype(dt).tobytes())


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.off, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def array(self, dtype, count):
        dtype = np.dtype(dtype)
        raw = self.take(dtype.itemsize * count)
        return np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("="))

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load(path) -> Network:
    r = _Reader(Path(path).read_bytes(), path)
    magic, version, n_layers, dtag = r.unpack(_HEAD.format)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if dtag not in _DTYPE_NAMES:
        raise CheckpointError(f"{path}: unknown dtype tag {dtag}")
    dt = np.dtype(_DTYPE_NAMES[dtag]).newbyteorder("<")
    widths = [int(w) for w in r.array("<u8", n_layers + 1)]
    (cfg_len,) = r.unpack("<Q")
    cfg = json.loads(r.take(cfg_len))
    cfg["topology"] = TopologyParams(**cfg["topology"])
    cfg["layer_widths"] = widths
    config = NetworkConfig(**cfg)
    layers = []
    for l in range(n_layers):
        n_in, n_out = widths[l], widths[l + 1]
        nnz, atag = r.unpack("<QB")
        if atag not in _ACT_NAMES:
            raise CheckpointError(f"{path}: layer {l} has unknown activation tag {atag}")
        row_ptr = r.array("<i8", n_out + 1)
        col_idx = r.array("<i4", nnz)
        vals = r.array(dt, nnz)
        bias = r.array(dt, n_out)
        w = CSRMatrix(n_out, n_in, row_ptr, col_idx, vals)
        try:
            w.validate()
        except ValueError as exc:
            raise CheckpointError(f"{path}: layer {l}: {exc}") from None
        layers.append(SparseLayer(w, bias, _ACT_NAMES[atag]))
    if r.off != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.off} trailing bytes")
    return Network(config, layers=layers)
