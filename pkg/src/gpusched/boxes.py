"""Exact integer interval/box arithmetic.

All regions in the scheduler are axis-aligned integer boxes or small unions
of boxes.  Memory features (unique bytes, contiguous lines) need *exact*
counts over such unions, so everything here is closed-form or based on
coordinate compression -- never floating point, never sampling.

An interval is an inclusive pair (lo, hi).  A "grid product" is a list,
one entry per dimension, of disjoint sorted interval lists; it denotes the
cross product of the per-dimension unions.  Strided stencil footprints are
naturally grid products.
"""

from __future__ import annotations

from itertools import product

Interval = tuple[int, int]


def normalize_intervals(intervals: list[Interval]) -> list[Interval]:
    """Sort and merge overlapping/adjacent inclusive intervals."""
    if not intervals:
        return []
    out: list[Interval] = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1] + 1:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def intervals_length(intervals: list[Interval]) -> int:
    return sum(hi - lo + 1 for lo, hi in intervals)


def intersect_intervals(a: list[Interval], b: list[Interval]) -> list[Interval]:
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if lo <= hi:
            out.append((lo, hi))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def strided_footprint(start: int, count: int, stride: int, wlo: int, whi: int) -> list[Interval]:
    """Union over x in [start, start+count) of [x*stride+wlo, x*stride+whi].

    Stride must be non-negative.  Returns disjoint sorted intervals: a single
    run when the windows overlap or touch, else one run per point.
    """
    assert stride >= 0 and count >= 1
    width = whi - wlo + 1
    if stride <= width:
        return [(start * stride + wlo, (start + count - 1) * stride + whi)]
    return [(x * stride + wlo, x * stride + whi) for x in range(start, start + count)]


GridProduct = list[list[Interval]]


def _atoms(interval_lists: list[list[Interval]]) -> list[Interval]:
    """Split the union of several interval lists into atomic pieces, such
    that every input interval is a union of whole atoms."""
    cuts: set[int] = set()
    for ivs in interval_lists:
        for lo, hi in ivs:
            cuts.add(lo)
            cuts.add(hi + 1)
    edges = sorted(cuts)
    merged = normalize_intervals([iv for ivs in interval_lists for iv in ivs])
    atoms = []
    for a, b in zip(edges, edges[1:]):
        piece = (a, b - 1)
        if intersect_intervals(merged, [piece]):
            atoms.append(piece)
    return atoms


def _covers(ivs: list[Interval], atom: Interval) -> bool:
    # atom never straddles an interval boundary of ivs by construction
    return any(lo <= atom[0] and atom[1] <= hi for lo, hi in ivs)


def union_volume(products: list[GridProduct]) -> int:
    """Exact number of integer points in the union of grid products."""
    if not products:
        return 0
    ndim = len(products[0])
    if ndim == 0:
        return 1
    return _union_count(products, count_lines=False)


def union_lines(products: list[GridProduct]) -> int:
    """Number of maximal contiguous runs along dimension 0 in the union.

    A "line" is a maximal run of consecutive dim-0 coordinates sharing one
    outer coordinate tuple; runs never merge across outer coordinates.
    """
    if not products:
        return 0
    return _union_count(products, count_lines=True)


def _union_count(products: list[GridProduct], count_lines: bool) -> int:
    ndim = len(products[0])
    assert all(len(p) == ndim for p in products)
    if any(any(not ivs for ivs in p) for p in products):
        products = [p for p in products if all(ivs for ivs in p)]
        if not products:
            return 0
    # Compress every outer dimension (>= 1) into atoms; walk all outer cells.
    outer_atoms = [_atoms([p[d] for p in products]) for d in range(1, ndim)]
    total = 0
    for cell in product(*outer_atoms):
        active = [
            p for p in products
            if all(_covers(p[d + 1], cell[d]) for d in range(ndim - 1))
        ]
        if not active:
            continue
        inner = normalize_intervals([iv for p in active for iv in p[0]])
        mult = 1
        for lo, hi in cell:
            mult *= hi - lo + 1
        if count_lines:
            total += len(inner) * mult
        else:
            total += intervals_length(inner) * mult
    return total


def bounding_box(boxes: list[list[Interval]]) -> list[Interval]:
    """Per-dimension bounding interval of a list of boxes (one interval per dim)."""
    assert boxes
    ndim = len(boxes[0])
    out = []
    for d in range(ndim):
        lo = min(b[d][0] for b in boxes)
        hi = max(b[d][1] for b in boxes)
        out.append((lo, hi))
    return out
