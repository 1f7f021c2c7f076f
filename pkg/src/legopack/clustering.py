"""Deterministic K-means over block vectors.

D^2-weighted seeding, Lloyd iteration with Euclidean distance, lowest-index tie
breaking, and farthest-block re-seeding of empty clusters. All distance and
mean arithmetic runs in float64 regardless of the f32 block data so the
monotonicity guarantees have headroom; the PRNG is numpy's PCG64, seeded
explicitly, so a fixed (blocks, K, seed) always yields bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocking import BlockSet
from .errors import DimensionMismatch, TooFewBlocks

_CHUNK = 2048  # blocks per distance-matrix slab; fixed so results never vary


@dataclass(frozen=True)
class Codebook:
    """K centroid blocks ("legos"), each b*b values."""

    legos: np.ndarray
    b: int

    def __post_init__(self):
        legos = np.ascontiguousarray(self.legos, dtype=np.float32)
        if legos.ndim != 2 or legos.shape[0] < 1 or legos.shape[1] != self.b * self.b:
            raise DimensionMismatch(
                f"codebook must be (K>=1, {self.b * self.b}), got {legos.shape}"
            )
        if not np.isfinite(legos).all():
            raise DimensionMismatch("codebook contains non-finite values")
        legos.flags.writeable = False
        object.__setattr__(self, "legos", legos)

    @property
    def k(self) -> int:
        return int(self.legos.shape[0])


@dataclass(frozen=True)
class Assignment:
    """Per-block lego indices in canonical block order plus the inertia.

    `inertia_trace` holds the inertia observed at each assignment pass of the
    run that produced this result (empty for plain `assign` calls).
    """

    indices: np.ndarray
    inertia: float
    inertia_trace: tuple[float, ...] = field(default=())

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)


def _nearest(x64: np.ndarray, c64: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Labels and squared distances to the nearest centroid, ties to lowest index."""
    n = x64.shape[0]
    labels = np.empty(n, dtype=np.int64)
    d2min = np.empty(n, dtype=np.float64)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        diff = x64[start:stop, None, :] - c64[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        lab = d2.argmin(axis=1)
        labels[start:stop] = lab
        d2min[start:stop] = d2[np.arange(stop - start), lab]
    return labels, d2min


def _means(x64: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    sums = np.zeros((k, x64.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, x64)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    return sums / counts[:, None]


def kmeanspp_seed(blocks: BlockSet, k: int, seed: int) -> Codebook:
    """Initial centroids by the standard D^2 weighting.

    The first centroid is a uniform draw; each further one is drawn with
    probability proportional to its squared distance to the nearest centroid
    so far, which never duplicates a centroid while distinct blocks remain.
    """
    x = blocks.vectors
    n = x.shape[0]
    if k < 1:
        raise ValueError("K must be >= 1")
    if k > n:
        raise TooFewBlocks(f"K={k} exceeds block count {n}")
    x64 = x.astype(np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = [int(rng.integers(n))]
    diff = x64 - x64[chosen[0]]
    d2 = np.einsum("ij,ij->i", diff, diff)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0.0:
            cum = np.cumsum(d2)
            pick = int(np.searchsorted(cum, rng.random() * total, side="right"))
            pick = min(pick, n - 1)
        else:
            # all remaining blocks coincide with chosen centroids
            remaining = np.setdiff1d(np.arange(n), np.array(chosen))
            pick = int(remaining[rng.integers(remaining.size)])
        chosen.append(pick)
        diff = x64 - x64[pick]
        d2 = np.minimum(d2, np.einsum("ij,ij->i", diff, diff))
    return Codebook(x[np.array(chosen)].copy(), blocks.b)


def assign(blocks: BlockSet, codebook: Codebook) -> Assignment:
    """Map every block to its Euclidean-nearest lego (ties: lowest index)."""
    if blocks.vectors.shape[1] != codebook.legos.shape[1]:
        raise DimensionMismatch(
            f"blocks have dim {blocks.vectors.shape[1]}, "
            f"codebook has dim {codebook.legos.shape[1]}"
        )
    labels, d2 = _nearest(blocks.vectors.astype(np.float64), codebook.legos.astype(np.float64))
    return Assignment(labels, float(d2.sum()))


def _repair_empty(
    x64: np.ndarray,
    c64: np.ndarray,
    labels: np.ndarray,
    d2: np.ndarray,
    empties: np.ndarray,
) -> bool:
    """Re-seed each empty cluster to the block farthest from its centroid.

    Candidates must not be the sole member of their cluster (taking one would
    just move the hole). Returns False once no candidate sits strictly off its
    centroid, which only happens with fewer distinct blocks than K.
    """
    counts = np.bincount(labels, minlength=c64.shape[0])
    progressed = False
    for e in empties:
        cand = np.where(counts[labels] > 1, d2, -1.0)
        i = int(cand.argmax())
        if cand[i] <= 0.0:
            break
        c64[e, :] = x64[i]
        counts[labels[i]] -= 1
        counts[e] += 1
        labels[i] = e
        d2[i] = 0.0
        progressed = True
    return progressed


def _force_fill(
    x64: np.ndarray, c64: np.ndarray, labels: np.ndarray, d2: np.ndarray
) -> None:
    """Fill empty clusters when distinct blocks < K.

    Only reachable when every multi-member block sits exactly on its centroid,
    so handing one duplicate to each empty cluster changes no distance and
    keeps every stored index argmin-consistent.
    """
    counts = np.bincount(labels, minlength=c64.shape[0])
    for e in np.where(counts == 0)[0]:
        donors = np.where(counts[labels] > 1)[0]
        if donors.size == 0:
            break
        i = int(donors[0])
        c64[e, :] = x64[i]
        counts[labels[i]] -= 1
        counts[e] += 1
        labels[i] = e
        d2[i] = 0.0


def kmeans(
    blocks: BlockSet,
    k: int,
    seed: int,
    max_iters: int = 100,
    rel_tol: float = 1e-6,
) -> tuple[Codebook, Assignment]:
    """Lloyd's algorithm from a D^2-weighted start.

    Stops when the assignment stops changing, when the relative inertia
    improvement drops below rel_tol, or at max_iters. Centroids are kept
    f32-representable after every update, so the returned assignment is
    exactly the nearest-lego assignment for the returned codebook, and no
    returned cluster is empty.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if rel_tol < 0:
        raise ValueError("rel_tol must be >= 0")
    n = blocks.vectors.shape[0]
    if n < 1:
        raise TooFewBlocks("cannot cluster an empty block set")
    if k > n:
        raise TooFewBlocks(f"K={k} exceeds block count {n}")

    x64 = blocks.vectors.astype(np.float64)
    c64 = kmeanspp_seed(blocks, k, seed).legos.astype(np.float64)

    trace: list[float] = []
    labels = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)
    labels_prev: np.ndarray | None = None
    inertia_prev: float | None = None
    degenerate = False

    remaining = max_iters
    while remaining > 0:
        remaining -= 1
        labels, d2 = _nearest(x64, c64)
        inertia = float(d2.sum())
        trace.append(inertia)
        empties = np.where(np.bincount(labels, minlength=k) == 0)[0]
        if empties.size:
            if _repair_empty(x64, c64, labels, d2, empties):
                labels_prev = None
                inertia_prev = inertia
                continue
            degenerate = True
            break
        if labels_prev is not None and np.array_equal(labels, labels_prev):
            break
        if inertia_prev is not None:
            if inertia_prev == 0.0 or (inertia_prev - inertia) < rel_tol * inertia_prev:
                break
        labels_prev = labels
        inertia_prev = inertia
        if remaining > 0:
            # keep centroids f32-representable: the returned codebook must be
            # the exact values the final assignment was computed against
            c64 = _means(x64, labels, k).astype(np.float32).astype(np.float64)

    if degenerate:
        _force_fill(x64, c64, labels, d2)
        trace.append(float(d2.sum()))

    codebook = Codebook(c64.astype(np.float32), blocks.b)
    return codebook, Assignment(labels, float(d2.sum()), tuple(trace))
