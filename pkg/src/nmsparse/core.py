"""Data model for N:M fine-grained block sparsity.

A tensor is carved into contiguous length-m blocks along one axis. Each
block independently receives a mask keeping m - n of its entries. When the
axis length does not divide by m, the remainder elements form a dense tail
that is carried through unpruned (never padded).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

SUPPORTED_BLOCK_LENGTHS = (2, 4, 8)


@dataclass(frozen=True)
class SparsityPattern:
    """Prune n out of every m contiguous elements (keep m - n)."""

    n: int
    m: int

    def __post_init__(self):
        if self.m not in SUPPORTED_BLOCK_LENGTHS:
            raise ValueError(
                f"unsupported block length m={self.m}; supported: {SUPPORTED_BLOCK_LENGTHS}"
            )
        if not 0 < self.n < self.m:
            raise ValueError(f"need 0 < n < m, got pattern {self.n}:{self.m}")

    @property
    def kept(self) -> int:
        return self.m - self.n

    @classmethod
    def parse(cls, text: str) -> "SparsityPattern":
        """Parse an 'N:M' string such as '2:4'."""
        parts = text.split(":")
        if len(parts) != 2:
            raise ValueError(f"bad sparsity pattern {text!r}; expected 'N:M'")
        try:
            n, m = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"bad sparsity pattern {text!r}; expected 'N:M'") from None
        return cls(n, m)

    def __str__(self) -> str:
        return f"{self.n}:{self.m}"


def _finite_vector(values, length: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"expected length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite entries are not allowed")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Block:
    """One contiguous run of m values taken from the blocking axis."""

    values: np.ndarray

    def __post_init__(self):
        arr = _finite_vector(self.values)
        if arr.shape[0] not in SUPPORTED_BLOCK_LENGTHS:
            raise ValueError(f"block length must be one of {SUPPORTED_BLOCK_LENGTHS}")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True, eq=False)
class BlockMask:
    """Boolean keep-mask for one block; exactly pattern.kept entries true."""

    kept: np.ndarray
    pattern: SparsityPattern

    def __post_init__(self):
        arr = np.asarray(self.kept, dtype=bool)
        if arr.ndim != 1 or arr.shape[0] != self.pattern.m:
            raise ValueError(f"mask must have length m={self.pattern.m}")
        if int(arr.sum()) != self.pattern.kept:
            raise ValueError(
                f"mask keeps {int(arr.sum())} entries; pattern {self.pattern} requires {self.pattern.kept}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "kept", arr)

    def kept_indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.kept))


@dataclass(frozen=True, eq=False)
class PrunedBlock:
    """A block after pruning: zeros off-mask, finite values on-mask."""

    values: np.ndarray
    mask: BlockMask

    def __post_init__(self):
        arr = _finite_vector(self.values, length=self.mask.pattern.m)
        if np.any(arr[~self.mask.kept] != 0.0):
            raise ValueError("pruned positions must hold exact zeros")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True, eq=False)
class BlockedTensor:
    """A dense tensor plus the axis along which blocks are formed.

    Data is stored flat in row-major order as float64.
    """

    shape: tuple[int, ...]
    data: np.ndarray
    block_axis: int = -1

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) == 0:
            raise ValueError("scalar tensors cannot be blocked")
        if any(s < 0 for s in shape):
            raise ValueError(f"negative dimension in shape {shape}")
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        numel = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if data.size != numel:
            raise ValueError(f"shape {shape} implies {numel} elements, data has {data.size}")
        axis = self.block_axis
        if not -len(shape) <= axis < len(shape):
            raise ValueError(f"block_axis {axis} out of range for shape {shape}")
        axis = axis % len(shape)
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "block_axis", axis)

    @classmethod
    def from_array(cls, arr, block_axis: int = -1) -> "BlockedTensor":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 0:
            raise ValueError("scalar tensors cannot be blocked")
        return cls(arr.shape, arr.reshape(-1), block_axis)

    def as_array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlockedTensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.block_axis == other.block_axis
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class DenseTail:
    """Remainder elements of each lane after whole blocks are taken.

    ``values`` has shape (lanes, remainder); a remainder of zero means the
    axis divided evenly. The tail is carried dense and never pruned.
    """

    values: np.ndarray
    block_len: int
    blocks_per_lane: int

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("tail values must be 2-D (lanes, remainder)")
        if not 0 <= arr.shape[1] < self.block_len:
            raise ValueError(f"remainder {arr.shape[1]} out of range for block length {self.block_len}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def lanes(self) -> int:
        return int(self.values.shape[0])

    @property
    def remainder(self) -> int:
        return int(self.values.shape[1])

    @property
    def is_empty(self) -> bool:
        return self.values.size == 0


def split_axis(t: BlockedTensor, m: int) -> tuple[np.ndarray, DenseTail]:
    """Array form of block splitting: (num_blocks, m) plus the dense tail.

    Blocks are ordered lane-major: all blocks of the first lane, then the
    second, and so on, with lanes enumerated in row-major order of the
    non-blocked dimensions.
    """
    if m not in SUPPORTED_BLOCK_LENGTHS:
        raise ValueError(f"unsupported block length m={m}")
    arr = t.as_array()
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite data cannot be split into blocks")
    moved = np.moveaxis(arr, t.block_axis, -1)
    axis_len = moved.shape[-1]
    lanes = int(np.prod(moved.shape[:-1], dtype=np.int64))
    flat = np.ascontiguousarray(moved).reshape(lanes, axis_len)
    blocks_per_lane, remainder = divmod(axis_len, m)
    blocked = flat[:, : blocks_per_lane * m].reshape(lanes * blocks_per_lane, m).copy()
    tail = DenseTail(flat[:, blocks_per_lane * m :], m, blocks_per_lane)
    return blocked, tail


def merge_axis(
    blocks: np.ndarray, tail: DenseTail, shape: Sequence[int], block_axis: int
) -> BlockedTensor:
    """Inverse of split_axis; validates counts against the target shape."""
    shape = tuple(int(s) for s in shape)
    ndim = len(shape)
    if ndim == 0 or not -ndim <= block_axis < ndim:
        raise ValueError(f"block_axis {block_axis} out of range for shape {shape}")
    axis = block_axis % ndim
    axis_len = shape[axis]
    m = tail.block_len
    blocks_per_lane, remainder = divmod(axis_len, m)
    lead_shape = shape[:axis] + shape[axis + 1 :]
    lanes = int(np.prod(lead_shape, dtype=np.int64)) if lead_shape else 1
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 2 or blocks.shape != (lanes * blocks_per_lane, m):
        raise ValueError(
            f"expected blocks of shape {(lanes * blocks_per_lane, m)}, got {blocks.shape}"
        )
    if tail.blocks_per_lane != blocks_per_lane or tail.values.shape != (lanes, remainder):
        raise ValueError("tail does not match the target shape")
    flat = np.concatenate(
        [blocks.reshape(lanes, blocks_per_lane * m), tail.values], axis=1
    )
    moved = flat.reshape(lead_shape + (axis_len,))
    arr = np.moveaxis(moved, -1, axis)
    return BlockedTensor(shape, np.ascontiguousarray(arr).reshape(-1), axis)


def split_into_blocks(
    t: BlockedTensor, pattern: SparsityPattern
) -> tuple[list[Block], DenseTail]:
    """Split along t.block_axis into Block objects plus the dense tail."""
    blocked, tail = split_axis(t, pattern.m)
    return [Block(row) for row in blocked], tail


def merge_blocks(
    blocks: Sequence[Block], tail: DenseTail, shape: Sequence[int], block_axis: int
) -> BlockedTensor:
    """Reassemble blocks produced by split_into_blocks; exact inverse."""
    if blocks:
        arr = np.stack([b.values for b in blocks])
    else:
        arr = np.zeros((0, tail.block_len), dtype=np.float64)
    return merge_axis(arr, tail, shape, block_axis)


def pattern_violations(t: BlockedTensor, pattern: SparsityPattern) -> int:
    """Number of blocks with more than pattern.kept nonzeros (tail ignored).

    Independent structural check used to validate pruner output.
    """
    blocked, _ = split_axis(t, pattern.m)
    if blocked.size == 0:
        return 0
    nonzeros = np.count_nonzero(blocked, axis=1)
    return int(np.sum(nonzeros > pattern.kept))
