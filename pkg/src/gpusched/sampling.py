"""Hierarchical sampling of candidate schedules.

Candidates are partitioned into buckets by structural hash at the current
nesting depth; each bucket of size B contributes max(1, floor(log2 B))
uniformly sampled representatives.  Structures are therefore always
represented while tiling variants within a structure are thinned
logarithmically.

Each bucket draws from its own RNG stream derived from (seed, bucket hash),
so the selection is independent of bucket iteration order and reproducible
for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .loopnest import LoopNestState


@dataclass
class SampleMeta:
    """Provenance of one chosen representative."""

    depth: int
    bucket_hash: int
    bucket_size: int


@dataclass
class BucketSet:
    buckets: dict[int, list[LoopNestState]]
    depth: int
    rng_seed: int = 0
    meta: list[SampleMeta] = field(default_factory=list, repr=False)

    @property
    def num_candidates(self) -> int:
        return sum(len(b) for b in self.buckets.values())


def representatives_per_bucket(bucket_size: int) -> int:
    if bucket_size < 1:
        raise ValueError("empty bucket")
    return max(1, int(math.floor(math.log2(bucket_size))))


def bucket_candidates(candidates: list[LoopNestState], depth: int,
                      rng_seed: int = 0) -> BucketSet:
    """Partition candidates by structural hash at `depth` (deterministic)."""
    if not candidates:
        raise ValueError("no candidates to bucket")
    buckets: dict[int, list[LoopNestState]] = {}
    for c in candidates:
        buckets.setdefault(c.structural_hash(depth), []).append(c)
    return BucketSet(buckets=buckets, depth=depth, rng_seed=rng_seed)


def sample_representatives(bucket_set: BucketSet,
                           rng: np.random.Generator | int | None = None,
                           ) -> list[LoopNestState]:
    """Uniform without-replacement draw of log2(B) states per bucket.

    `rng` may be a seed; either way each bucket re-derives its own stream
    from (seed, bucket hash), so results do not depend on dict order.
    """
    if not bucket_set.buckets:
        raise ValueError("no buckets to sample from")
    if isinstance(rng, np.random.Generator):
        seed = int(rng.integers(0, 2 ** 63))
    else:
        seed = int(rng) if rng is not None else bucket_set.rng_seed
    selected: list[LoopNestState] = []
    meta: list[SampleMeta] = []
    for h in sorted(bucket_set.buckets):
        bucket = bucket_set.buckets[h]
        k = representatives_per_bucket(len(bucket))
        stream = np.random.default_rng((seed, h))
        idx = stream.choice(len(bucket), size=min(k, len(bucket)), replace=False)
        for i in sorted(int(j) for j in idx):
            selected.append(bucket[i])
            meta.append(SampleMeta(depth=bucket_set.depth, bucket_hash=h,
                                   bucket_size=len(bucket)))
    bucket_set.meta = meta
    return selected
