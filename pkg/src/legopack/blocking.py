"""Tiling weight matrices into b-by-b blocks and reassembling them.

Every weight tensor is first flattened to a 2D matrix (layer-type-agnostic),
then cut into non-overlapping b-by-b tiles. Canonical block order is: layers in
model order, then row-major over the tile grid within each layer. Layers whose
flattened matrix is not divisible by b on both sides are skipped and stored
raw.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .container import ModelBundle, Role, Tensor
from .errors import CountMismatch, SkippedLayerWarning, UnsupportedRank


@dataclass(frozen=True)
class Block:
    """One b-by-b tile: values in row-major block order plus its origin."""

    values: np.ndarray
    origin: tuple[int, int, int]  # (layer_index, block_row, block_col)


@dataclass(frozen=True)
class BlockSet:
    """All blocks of a model for a given b, in canonical order.

    `vectors` is the (num_blocks, b*b) float32 matrix of block values;
    `origins` the matching (num_blocks, 3) int array of
    (layer_index, block_row, block_col). `layer_grid` maps the index of each
    compressed layer to its tile-grid shape, `skipped_layers` lists weight
    layers stored raw.
    """

    vectors: np.ndarray
    origins: np.ndarray
    b: int
    layer_grid: dict[int, tuple[int, int]]
    skipped_layers: tuple[int, ...]

    @property
    def num_blocks(self) -> int:
        return int(self.vectors.shape[0])

    def block(self, i: int) -> Block:
        return Block(self.vectors[i], tuple(int(x) for x in self.origins[i]))


def flatten_to_matrix(t: Tensor) -> np.ndarray:
    """2D view of a weight tensor, preserving row-major element order.

    Rank 2 maps to itself, rank 4 [out, in, kh, kw] to [out, in*kh*kw], rank 1
    to [1, n]. Rank 3 and rank > 4 have no defined convention here.
    """
    if t.data.ndim == 1:
        return t.data.reshape(1, -1)
    if t.data.ndim == 2:
        return t.data
    if t.data.ndim == 4:
        return t.data.reshape(t.shape[0], -1)
    raise UnsupportedRank(f"tensor {t.name!r} has rank {t.data.ndim}")


def _tile(matrix: np.ndarray, b: int) -> np.ndarray:
    """(rows_b * cols_b, b*b) tiles of a (rows, cols) matrix, row-major grid."""
    rows, cols = matrix.shape
    rb, cb = rows // b, cols // b
    # reshape/transpose keeps each tile's own values row-major
    tiles = matrix.reshape(rb, b, cb, b).transpose(0, 2, 1, 3)
    return tiles.reshape(rb * cb, b * b)


def _untile(values: np.ndarray, rows_b: int, cols_b: int, b: int) -> np.ndarray:
    """Inverse of _tile: (rows_b*cols_b, b*b) back to (rows_b*b, cols_b*b)."""
    tiles = values.reshape(rows_b, cols_b, b, b).transpose(0, 2, 1, 3)
    return tiles.reshape(rows_b * b, cols_b * b)


def breakup(model: ModelBundle, b: int) -> BlockSet:
    """Cut every divisible weight layer into b-by-b blocks, canonical order.

    Indivisible weight layers are recorded in skipped_layers and left raw; a
    SkippedLayerWarning is emitted for each.
    """
    if b < 1:
        raise ValueError("b must be >= 1")
    vec_parts: list[np.ndarray] = []
    origin_parts: list[np.ndarray] = []
    layer_grid: dict[int, tuple[int, int]] = {}
    skipped: list[int] = []
    for idx, t in enumerate(model.layers):
        if t.role != Role.WEIGHT:
            continue
        matrix = flatten_to_matrix(t)
        rows, cols = matrix.shape
        if rows % b or cols % b:
            warnings.warn(
                f"layer {t.name!r} ({rows}x{cols} flattened) is not divisible by b={b}; "
                "stored raw",
                SkippedLayerWarning,
                stacklevel=2,
            )
            skipped.append(idx)
            continue
        rb, cb = rows // b, cols // b
        layer_grid[idx] = (rb, cb)
        vec_parts.append(_tile(matrix, b))
        grid = np.indices((rb, cb)).reshape(2, -1).T
        origins = np.column_stack([np.full(rb * cb, idx), grid])
        origin_parts.append(origins)
    if vec_parts:
        vectors = np.ascontiguousarray(np.concatenate(vec_parts), dtype=np.float32)
        origins = np.ascontiguousarray(np.concatenate(origin_parts), dtype=np.int64)
    else:
        vectors = np.zeros((0, b * b), dtype=np.float32)
        origins = np.zeros((0, 3), dtype=np.int64)
    return BlockSet(vectors, origins, b, layer_grid, tuple(skipped))


def reassemble(
    blocks: BlockSet, values: np.ndarray, template: ModelBundle
) -> ModelBundle:
    """Rebuild a bundle from per-block value vectors in canonical order.

    `values` must be (num_blocks, b*b); compressed layers are rebuilt from it,
    skipped layers and non-weight tensors are copied from the template
    verbatim. With the original block values this is the identity.
    """
    values = np.asarray(values, dtype=np.float32).reshape(-1, blocks.b * blocks.b)
    if values.shape[0] != blocks.num_blocks:
        raise CountMismatch(
            f"got {values.shape[0]} block value vectors, expected {blocks.num_blocks}"
        )
    rebuilt: list[Tensor] = []
    cursor = 0
    for idx, t in enumerate(template.layers):
        if idx not in blocks.layer_grid:
            rebuilt.append(t)
            continue
        rb, cb = blocks.layer_grid[idx]
        count = rb * cb
        matrix = _untile(values[cursor : cursor + count], rb, cb, blocks.b)
        cursor += count
        rebuilt.append(Tensor(t.name, t.role, matrix.reshape(t.shape)))
    return ModelBundle(tuple(rebuilt), template.arch_manifest)
