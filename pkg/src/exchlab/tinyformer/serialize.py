"""Checkpoint serialization with a documented, versioned byte layout.

File layout (all integers little-endian):

    bytes 0..3   magic b"XLTF"
    bytes 4..7   format version, uint32 (currently 1)
    bytes 8..15  header length H, uint64
    bytes 16..16+H-1
                 UTF-8 JSON header: {"config": {...},
                                     "params": [[name, [shape...]], ...],
                                     "dtype": "<f8"}
    remainder    raw parameter blob: for each manifest entry in order,
                 the row-major float64 little-endian bytes of that array

A load followed by a save reproduces the file byte-for-byte, and a
save -> load -> forward is bit-identical to the original weights.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from exchlab.tinyformer.autodiff import Tensor
from exchlab.tinyformer.model import TransformerConfig, TransformerWeights, _parameter_shapes

MAGIC = b"XLTF"
FORMAT_VERSION = 1
_DTYPE = "<f8"


def save_checkpoint(path, weights: TransformerWeights) -> None:
    manifest = [[name, list(shape)] for name, shape in _parameter_shapes(weights.config)]
    header = {
        "config": weights.config.to_dict(),
        "params": manifest,
        "dtype": _DTYPE,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(FORMAT_VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for name, _ in _parameter_shapes(weights.config):
            fh.write(np.ascontiguousarray(weights[name].data, dtype=_DTYPE).tobytes())


def load_checkpoint(path) -> TransformerWeights:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version = int.from_bytes(raw[4:8], "little")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header_len = int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    if header["dtype"] != _DTYPE:
        raise ValueError(f"unsupported dtype {header['dtype']}")
    config = TransformerConfig.from_dict(header["config"])
    expected = [[name, list(shape)] for name, shape in _parameter_shapes(config)]
    if header["params"] != expected:
        raise ValueError("parameter manifest does not match the stored config")
    params: dict[str, Tensor] = {}
    offset = 16 + header_len
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        arr = np.frombuffer(raw[offset:end], dtype=_DTYPE).reshape(shape).copy()
        params[name] = Tensor(arr)
        offset = end
    if offset != len(raw):
        raise ValueError("trailing bytes after parameter blob")
    return TransformerWeights(config=config, params=params)
