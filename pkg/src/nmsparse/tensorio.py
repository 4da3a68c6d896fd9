"""Binary tensor file formats.

Dense format (magic ``NMSP``), little-endian throughout:

    magic     4 bytes  b"NMSP"
    version   u16      currently 1
    dtype     u16      0 = float32
    ndim      u16
    shape     ndim * u64
    payload   prod(shape) * float32, row-major

Compressed N:M format (magic ``NMSC``) stores, per block along the
blocking axis, the kept values plus one packed position-index field
(1 byte for m in {2, 4}, 2 bytes for m = 8; position indices take
1/2/3 bits each for m = 2/4/8). Axis remainders are stored dense:

    magic       4 bytes  b"NMSC"
    version     u16
    dtype       u16      0 = float32
    n, m        u16, u16
    block_axis  u16
    ndim        u16
    shape       ndim * u64
    values      num_blocks * (m - n) * float32
    indices     num_blocks * index_bytes(m) * u8
    tail        lanes * (shape[axis] % m) * float32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import BlockedTensor, DenseTail, SparsityPattern, merge_axis, split_axis

TENSOR_MAGIC = b"NMSP"
COMPRESSED_MAGIC = b"NMSC"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0

_INDEX_BITS = {2: 1, 4: 2, 8: 3}


class TensorFormatError(ValueError):
    """Raised when a tensor file is malformed."""


def index_bytes_per_block(pattern: SparsityPattern) -> int:
    """Bytes needed to pack the kept-position indices of one block.

    Positions take 1/2/3 bits each for m = 2/4/8, one field per kept slot,
    rounded up to whole bytes: 1 byte for 1:2 and 2:4, 2 bytes for 4:8.
    """
    return (_INDEX_BITS[pattern.m] * pattern.kept + 7) // 8


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TensorFormatError(f"truncated {what}: wanted {count} bytes, got {len(data)}")
    return data


def write_tensor(path, t: BlockedTensor) -> None:
    """Write a dense tensor file; payload is float32."""
    if not np.all(np.isfinite(t.data)):
        raise ValueError("refusing to write non-finite data")
    header = struct.pack(
        "<4sHHH", TENSOR_MAGIC, FORMAT_VERSION, DTYPE_FLOAT32, len(t.shape)
    )
    header += struct.pack(f"<{len(t.shape)}Q", *t.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(t.data.astype("<f4").tobytes())


def read_tensor(path) -> BlockedTensor:
    """Read a dense tensor file; the blocking axis defaults to innermost."""
    with open(path, "rb") as fh:
        magic, version, dtype, ndim = struct.unpack("<4sHHH", _read_exact(fh, 10, "header"))
        if magic != TENSOR_MAGIC:
            raise TensorFormatError(f"bad magic {magic!r}; not a tensor file")
        if version != FORMAT_VERSION:
            raise TensorFormatError(f"unsupported version {version}")
        if dtype != DTYPE_FLOAT32:
            raise TensorFormatError(f"unsupported dtype code {dtype}")
        if ndim == 0:
            raise TensorFormatError("scalar tensor files are not supported")
        shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "shape"))
        numel = 1
        for s in shape:
            numel *= s
        payload = _read_exact(fh, 4 * numel, "payload")
        if fh.read(1):
            raise TensorFormatError("trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise TensorFormatError("payload contains non-finite values")
    return BlockedTensor(shape, data, block_axis=len(shape) - 1)


@dataclass(frozen=True, eq=False)
class CompressedSparseTensor:
    """An N:M pruned tensor in compressed form.

    ``values`` holds the kept entries of each block (ascending position
    order), ``indices`` the packed kept positions, ``tail`` the dense axis
    remainder of each lane.
    """

    pattern: SparsityPattern
    shape: tuple[int, ...]
    block_axis: int
    values: np.ndarray   # (num_blocks, kept) float32
    indices: np.ndarray  # (num_blocks, index_bytes) uint8
    tail: np.ndarray     # (lanes, remainder) float32

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        indices = np.asarray(self.indices, dtype=np.uint8)
        tail = np.asarray(self.tail, dtype=np.float32)
        if values.ndim != 2 or values.shape[1] != self.pattern.kept:
            raise ValueError("values must be (num_blocks, kept)")
        if indices.ndim != 2 or indices.shape[0] != values.shape[0]:
            raise ValueError("indices must align with values")
        if tail.ndim != 2:
            raise ValueError("tail must be 2-D (lanes, remainder)")
        if not 0 <= self.block_axis < len(self.shape):
            raise ValueError(f"block axis {self.block_axis} out of range for {self.shape}")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "tail", tail)

    @property
    def num_blocks(self) -> int:
        return int(self.values.shape[0])

    def payload_bytes(self) -> int:
        return self.values.nbytes + self.indices.nbytes + self.tail.nbytes

    def dense_payload_bytes(self) -> int:
        numel = 1
        for s in self.shape:
            numel *= s
        return numel * 4

    def blocked_compression_ratio(self) -> float:
        """Compressed bytes of the blocked region over its dense bytes
        (the tail is stored dense either way and excluded)."""
        dense = self.num_blocks * self.pattern.m * 4
        if dense == 0:
            return 1.0
        return (self.values.nbytes + self.indices.nbytes) / dense


def _pack_positions(positions: np.ndarray, m: int, nbytes: int) -> np.ndarray:
    """Pack per-block kept positions into the per-block index field."""
    bits = _INDEX_BITS[m]
    codes = np.zeros(positions.shape[0], dtype=np.uint32)
    for k in range(positions.shape[1]):
        codes |= positions[:, k].astype(np.uint32) << (bits * k)
    out = np.zeros((positions.shape[0], nbytes), dtype=np.uint8)
    for b in range(nbytes):
        out[:, b] = (codes >> (8 * b)) & 0xFF
    return out


def _unpack_positions(indices: np.ndarray, m: int, kept: int) -> np.ndarray:
    bits = _INDEX_BITS[m]
    codes = np.zeros(indices.shape[0], dtype=np.uint32)
    for b in range(indices.shape[1]):
        codes |= indices[:, b].astype(np.uint32) << (8 * b)
    positions = np.zeros((indices.shape[0], kept), dtype=np.int64)
    for k in range(kept):
        positions[:, k] = (codes >> (bits * k)) & ((1 << bits) - 1)
    return positions


def compress(t: BlockedTensor, pattern: SparsityPattern) -> CompressedSparseTensor:
    """Compress a tensor that satisfies the pattern along t.block_axis.

    Raises if any block has more than pattern.kept nonzeros. Blocks with
    fewer nonzeros are padded with the lowest-index zero positions so each
    block always records exactly pattern.kept slots.
    """
    blocked, tail = split_axis(t, pattern.m)
    kept = pattern.kept
    if blocked.shape[0] > 0:
        nonzero = blocked != 0.0
        counts = nonzero.sum(axis=1)
        if np.any(counts > kept):
            bad = int(np.argmax(counts > kept))
            raise ValueError(
                f"block {bad} has {int(counts[bad])} nonzeros; pattern {pattern} allows {kept}"
            )
        # Order positions with nonzeros first (both groups by ascending
        # index), take the first `kept`, then restore ascending order.
        order = np.argsort(~nonzero, axis=1, kind="stable")
        positions = np.sort(order[:, :kept], axis=1)
        values = np.take_along_axis(blocked, positions, axis=1).astype(np.float32)
        indices = _pack_positions(positions, pattern.m, index_bytes_per_block(pattern))
    else:
        values = np.zeros((0, kept), dtype=np.float32)
        indices = np.zeros((0, index_bytes_per_block(pattern)), dtype=np.uint8)
    return CompressedSparseTensor(
        pattern=pattern,
        shape=t.shape,
        block_axis=t.block_axis,
        values=values,
        indices=indices,
        tail=tail.values.astype(np.float32),
    )


def decompress(c: CompressedSparseTensor) -> BlockedTensor:
    """Expand back to a dense tensor; float32 values are exact in float64."""
    m = c.pattern.m
    blocked = np.zeros((c.num_blocks, m), dtype=np.float64)
    if c.num_blocks > 0:
        positions = _unpack_positions(c.indices, m, c.pattern.kept)
        np.put_along_axis(blocked, positions, c.values.astype(np.float64), axis=1)
    axis_len = c.shape[c.block_axis]
    tail = DenseTail(c.tail.astype(np.float64), m, axis_len // m)
    return merge_axis(blocked, tail, c.shape, c.block_axis)


def write_compressed(path, c: CompressedSparseTensor) -> None:
    header = struct.pack(
        "<4sHHHHHH",
        COMPRESSED_MAGIC,
        FORMAT_VERSION,
        DTYPE_FLOAT32,
        c.pattern.n,
        c.pattern.m,
        c.block_axis,
        len(c.shape),
    )
    header += struct.pack(f"<{len(c.shape)}Q", *c.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(c.values, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(c.indices).tobytes())
        fh.write(np.ascontiguousarray(c.tail, dtype="<f4").tobytes())


def read_compressed(path) -> CompressedSparseTensor:
    with open(path, "rb") as fh:
        fields = struct.unpack("<4sHHHHHH", _read_exact(fh, 16, "header"))
        magic, version, dtype, n, m, block_axis, ndim = fields
        if magic != COMPRESSED_MAGIC:
            raise TensorFormatError(f"bad magic {magic!r}; not a compressed tensor file")
        if version != FORMAT_VERSION:
            raise TensorFormatError(f"unsupported version {version}")
        if dtype != DTYPE_FLOAT32:
            raise TensorFormatError(f"unsupported dtype code {dtype}")
        if ndim == 0:
            raise TensorFormatError("scalar tensor files are not supported")
        try:
            pattern = SparsityPattern(n, m)
        except ValueError as exc:
            raise TensorFormatError(str(exc)) from None
        shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "shape"))
        if not block_axis < ndim:
            raise TensorFormatError(f"block axis {block_axis} out of range")
        axis_len = shape[block_axis]
        lanes = 1
        for i, s in enumerate(shape):
            if i != block_axis:
                lanes *= s
        blocks_per_lane, remainder = divmod(axis_len, m)
        num_blocks = lanes * blocks_per_lane
        values = np.frombuffer(
            _read_exact(fh, 4 * num_blocks * pattern.kept, "values"), dtype="<f4"
        ).reshape(num_blocks, pattern.kept)
        idx_bytes = index_bytes_per_block(pattern)
        indices = np.frombuffer(
            _read_exact(fh, num_blocks * idx_bytes, "indices"), dtype=np.uint8
        ).reshape(num_blocks, idx_bytes)
        tail = np.frombuffer(
            _read_exact(fh, 4 * lanes * remainder, "tail"), dtype="<f4"
        ).reshape(lanes, remainder)
        if fh.read(1):
            raise TensorFormatError("trailing bytes after payload")
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(tail))):
        raise TensorFormatError("payload contains non-finite values")
    positions = _unpack_positions(indices, m, pattern.kept)
    if np.any(positions >= m) or np.any(np.diff(positions, axis=1) <= 0):
        raise TensorFormatError("corrupt position indices")
    return CompressedSparseTensor(
        pattern=pattern,
        shape=shape,
        block_axis=block_axis,
        values=values,
        indices=indices,
        tail=tail,
    )
