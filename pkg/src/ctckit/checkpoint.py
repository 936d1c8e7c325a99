"""Flat binary checkpoints and parameter averaging.

A checkpoint is a sequence of entries with no global header, read until
end of file.  One entry is:

    uint64  byte length of the UTF-8 name
    bytes   name
    uint64  rank
    uint64  extents[rank]
    float32 values, row-major, prod(extents) of them

All integers and floats are little-endian.  Values are stored as
float32 regardless of the in-memory dtype.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor


def save_checkpoint(path, params: Mapping[str, "Tensor | np.ndarray"]) -> None:
    with open(path, "wb") as fh:
        for name, value in params.items():
            data = value.data if isinstance(value, Tensor) else np.asarray(value)
            arr = np.ascontiguousarray(data, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    params: dict[str, np.ndarray] = {}
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = blob[offset:offset + n]
        offset += n
        return chunk

    while offset < len(blob):
        (name_len,) = struct.unpack("<Q", take(8, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8, "rank"))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "extents")) if rank else ()
        count = 1
        for extent in shape:
            count *= extent
        values = np.frombuffer(take(4 * count, f"values of {name!r}"), dtype="<f4")
        if name in params:
            raise CheckpointError(f"{path}: duplicate parameter {name!r}")
        params[name] = values.reshape(shape).copy()
    if not params:
        raise CheckpointError(f"{path}: checkpoint holds no parameters")
    return params


def load_into(params: dict[str, Tensor], path) -> None:
    """Copy stored values into existing tensors, keeping their dtype."""
    stored = load_checkpoint(path)
    if set(stored) != set(params):
        missing = set(params) - set(stored)
        extra = set(stored) - set(params)
        raise CheckpointError(
            f"{path}: parameter names do not match (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})")
    for name, tensor in params.items():
        if stored[name].shape != tensor.data.shape:
            raise CheckpointError(
                f"{path}: {name!r} has shape {stored[name].shape}, "
                f"expected {tensor.data.shape}")
        tensor.data = stored[name].astype(tensor.data.dtype)


def average_checkpoints(paths: Sequence, n: int | None = None,
                        dev_losses: Sequence[float] | None = None
                        ) -> dict[str, np.ndarray]:
    """Arithmetic mean of checkpoints, parameter by parameter.

    With n set below len(paths), the n entries with the lowest paired
    dev_losses are kept; selection therefore requires dev_losses.
    """
    paths = list(paths)
    if not paths:
        raise CheckpointError("no checkpoints to average")
    if n is not None and n < len(paths):
        if dev_losses is None or len(dev_losses) != len(paths):
            raise CheckpointError(
                "selecting the best n checkpoints requires one dev loss per path")
        ranked = sorted(range(len(paths)), key=lambda i: (dev_losses[i], i))
        paths = [paths[i] for i in ranked[:n]]

    first = load_checkpoint(paths[0])
    sums = {name: value.astype(np.float64) for name, value in first.items()}
    for path in paths[1:]:
        other = load_checkpoint(path)
        if set(other) != set(sums):
            raise CheckpointError(
                f"{path}: parameter names differ from {paths[0]}")
        for name, value in other.items():
            if value.shape != sums[name].shape:
                raise CheckpointError(
                    f"{path}: {name!r} has shape {value.shape}, "
                    f"expected {sums[name].shape}")
            sums[name] += value
    scale = 1.0 / len(paths)
    return {name: (value * scale).astype(np.float32) for name, value in sums.items()}
