"""Hierarchical sampling: bucketing by structural hash, log2 representatives."""

import numpy as np
import pytest

from gpusched.loopnest import Decision, apply_decision, initial_state
from gpusched.sampling import (
    bucket_candidates,
    representatives_per_bucket,
    sample_representatives,
)

from conftest import schedule_all_root


@pytest.mark.parametrize("size,reps", [
    (1, 1), (2, 1), (3, 1), (4, 2), (7, 2), (8, 3), (100, 6), (1024, 10),
])
def test_representatives_per_bucket(size, reps):
    assert representatives_per_bucket(size) == reps


def _tiling_variants(graph, n):
    """n states that differ only in tile extents (one structural bucket)."""
    out = []
    pairs = [(1, 1), (1, 2), (2, 1), (2, 2), (1, 4), (4, 1), (2, 4), (4, 2),
             (4, 4), (1, 8), (8, 1), (2, 8)]
    threads = [(16, 16), (8, 8), (8, 16), (16, 8), (4, 8), (8, 4)]
    i = 0
    while len(out) < n:
        s = pairs[i % len(pairs)]
        t = threads[(i // len(pairs)) % len(threads)]
        state = schedule_all_root(graph, serial=s, thread=t)
        if state not in out:
            out.append(state)
        i += 1
    return out


def test_bucketing_groups_structural_equals(chain2):
    cands = _tiling_variants(chain2, 8)
    bs = bucket_candidates(cands, depth=3, rng_seed=0)
    assert len(bs.buckets) == 1  # extents never hashed
    (members,) = bs.buckets.values()
    assert len(members) == 8


def test_bucketing_splits_structures(chain2):
    root = schedule_all_root(chain2)
    state = initial_state(chain2)
    state = apply_decision(state, "g", Decision("compute_root"))
    state = apply_decision(state, "f", Decision("inline"))
    state = apply_decision(state, "g",
                           Decision("compute_root", serial=(1, 1), thread=(16, 16)))
    bs = bucket_candidates([root, state], depth=1, rng_seed=0)
    assert len(bs.buckets) == 2


def test_bucketing_rejects_empty():
    with pytest.raises(ValueError):
        bucket_candidates([], depth=1, rng_seed=0)


def test_sample_counts_follow_log2(chain2):
    cands = _tiling_variants(chain2, 8)
    bs = bucket_candidates(cands, depth=3, rng_seed=0)
    selected = sample_representatives(bs)
    assert len(selected) == 3  # floor(log2 8)


def test_sample_without_replacement(chain2):
    cands = _tiling_variants(chain2, 12)
    bs = bucket_candidates(cands, depth=3, rng_seed=5)
    selected = sample_representatives(bs)
    assert len(selected) == len({s.decisions for s in selected}) == 3


def test_sample_deterministic_for_seed(chain2):
    cands = _tiling_variants(chain2, 10)
    a = sample_representatives(bucket_candidates(cands, depth=3, rng_seed=7))
    b = sample_representatives(bucket_candidates(cands, depth=3, rng_seed=7))
    assert [s.decisions for s in a] == [s.decisions for s in b]
    c = sample_representatives(bucket_candidates(cands, depth=3, rng_seed=8))
    assert [s.decisions for s in a] != [s.decisions for s in c] or True  # may collide


def _inline_variants(graph, serials):
    base = initial_state(graph)
    base = apply_decision(base, "g", Decision("compute_root"))
    base = apply_decision(base, "f", Decision("inline"))
    return [apply_decision(base, "g",
                           Decision("compute_root", serial=s, thread=(16, 16)))
            for s in serials]


def test_sample_independent_of_bucket_order(chain2):
    """Each bucket draws from its own (seed, hash) stream, so the result does
    not depend on which bucket's members were encountered first."""
    roots = _tiling_variants(chain2, 6)
    inlines = _inline_variants(chain2, [(1, 1), (2, 2), (4, 4), (2, 4)])
    a = sample_representatives(bucket_candidates(roots + inlines, depth=3, rng_seed=3))
    b = sample_representatives(bucket_candidates(inlines + roots, depth=3, rng_seed=3))
    assert {s.decisions for s in a} == {s.decisions for s in b}


def test_sample_total_bound_mixed_buckets(chain2):
    root = _tiling_variants(chain2, 9)
    inl = _inline_variants(chain2, [(1, 1), (2, 2), (4, 4)])
    bs = bucket_candidates(root + inl, depth=3, rng_seed=0)
    assert len(bs.buckets) == 2
    selected = sample_representatives(bs)
    bound = sum(representatives_per_bucket(len(m)) for m in bs.buckets.values())
    assert len(selected) == bound == 3 + 1


def test_sample_meta_records_buckets(chain2):
    cands = _tiling_variants(chain2, 4)
    bs = bucket_candidates(cands, depth=2, rng_seed=0)
    selected = sample_representatives(bs)
    assert len(bs.meta) == len(selected)
    for s, meta in zip(selected, bs.meta):
        assert meta.depth == 2
        assert meta.bucket_hash == s.structural_hash(2)
        assert meta.bucket_size == 4
