"""Concrete loop geometry derived from a decision state.

The resolver turns (graph, decisions) into per-func tile extents, regions,
allocations, and resolved read chains.  Semantics are "padded tiles": every
block and every thread computes a full tile (domains are rounded up to
block*thread*serial multiples), so all blocks of a kernel are congruent and
per-block quantities are exact representative-block quantities.

Inlined funcs are substituted into their consumers as composed access
chains; each link of a chain is one per-dimension (stride, lo, hi) window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .boxes import Interval, bounding_box, normalize_intervals, strided_footprint
from .loopnest import LoopNestState, LoopNode, MEMORY_TIER, ScheduleError
from .pipeline import PipelineGraph

# Serial loops with total extent below this are unrolled, and their loads
# staged into per-thread register buffers (amortized across the unroll).
UNROLL_LIMIT = 16

Chain = tuple[tuple[tuple[int, int, int], ...], ...]  # links of per-dim (stride, lo, hi)


def chain_interval(iv: Interval, chain_dims) -> Interval:
    a, b = iv
    for s, lo, hi in chain_dims:
        a, b = a * s + lo, b * s + hi
    return (a, b)


def chain_footprint(intervals: list[Interval], chain_dims) -> list[Interval]:
    """Exact per-dim footprint of a chain applied to an interval union."""
    cur = intervals
    for s, lo, hi in chain_dims:
        nxt = []
        for a, b in cur:
            nxt.extend(strided_footprint(a, b - a + 1, s, lo, hi))
        cur = normalize_intervals(nxt)
    return cur


def chain_box(box: list[Interval], chain: Chain, dim: int | None = None) -> list[Interval]:
    """Bounding box of a chain applied to a box."""
    ndim = len(box)
    out = []
    for d in range(ndim):
        out.append(chain_interval(box[d], [link[d] for link in chain]))
    return out


@dataclass(frozen=True)
class ResolvedRead:
    owner: str          # func whose body performs the load (self or an inlined func)
    producer: str
    tier: str           # "global" | "shared" | "register"
    chain: Chain        # composed windows, consumer coords -> producer coords
    elem_bytes: int

    @property
    def calls_per_point(self) -> int:
        """Evaluations of the innermost window per consumer point."""
        n = 1
        for link in self.chain[:-1]:
            for _, lo, hi in link:
                n *= hi - lo + 1
        return n

    @property
    def window_volume(self) -> int:
        n = 1
        for link in self.chain:
            for _, lo, hi in link:
                n *= hi - lo + 1
        return n


@dataclass
class ConcreteFunc:
    func: str
    kind: str                       # placement kind, or "external"
    tier: str
    kernel: str | None
    consumer: str | None
    serial: tuple[int, ...] | None
    thread: tuple[int, ...] | None  # own thread extents (root / at_block)
    blocks: tuple[int, ...] | None  # root only
    region: list[Interval]          # per-realization box (padded)
    total_box: list[Interval]       # union of realizations across the run
    realizations: int
    n_threads: int                  # threads in this stage's context
    context_thread_extents: tuple[int, ...]
    lane_base: tuple[int, ...]      # per-lane domain origin for thread 0
    lane_coeff: tuple[int, ...]     # origin shift per unit of thread coord
    lane_extent: tuple[int, ...]    # per-lane domain extents
    unrolled: bool
    reads_per_stage: list[list[ResolvedRead]]
    inline_primary: str | None = None   # for inlined funcs: the main consumer
    inline_calls: int = 0               # for inlined funcs: total evaluations

    @property
    def points_per_thread(self) -> int:
        return math.prod(self.lane_extent)

    @property
    def points_per_block(self) -> int:
        return self.points_per_thread * self.n_threads

    @property
    def block_box(self) -> list[Interval]:
        """Box of points this func computes within a single block."""
        if self.blocks is not None:  # root: block 0 tile
            return [(0, t * s - 1) for t, s in zip(self.thread, self.serial)]
        if self.kind == "fuse_at_block":
            return list(self.region)
        # fuse_at_thread: union over the block's threads
        return [(b, b + (ct - 1) * c + e - 1)
                for b, c, e, ct in zip(self.lane_base, self.lane_coeff,
                                       self.lane_extent, self.context_thread_extents)]

    @property
    def alloc_bytes(self) -> int:
        if self.tier == "none":
            return 0
        return math.prod(hi - lo + 1 for lo, hi in self.region)


@dataclass
class KernelInfo:
    owner: str
    members: list[str]              # non-inlined member funcs, consumers first
    blocks: tuple[int, ...]
    threads_per_block: int = 0      # max over member stages
    shared_bytes: int = 0

    @property
    def num_blocks(self) -> int:
        return math.prod(self.blocks)


@dataclass
class ConcreteSchedule:
    graph: PipelineGraph
    funcs: dict[str, ConcreteFunc] = field(default_factory=dict)
    kernels: list[KernelInfo] = field(default_factory=list)
    tree: dict[str, LoopNode] = field(default_factory=dict)

    def kernel_for(self, owner: str) -> KernelInfo:
        for k in self.kernels:
            if k.owner == owner:
                return k
        raise KeyError(owner)


def provisional_tiling(extents: tuple[int, ...]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Nominal tiling for a root func awaiting its phase-2 decision."""
    serial = tuple(1 for _ in extents)
    innermost = next((i for i, e in enumerate(extents) if e >= 16), 0)
    thread = tuple(min(32, e) if i == innermost else 1 for i, e in enumerate(extents))
    return serial, thread


def _expand_reads(graph, state, func, stage_idx, prefix: Chain = (),
                  ) -> tuple[list[ResolvedRead], dict[str, int]]:
    """Resolve one stage's accesses, substituting inlined producers.

    Returns the resolved reads plus a map inlined-func -> window volume of the
    calls made to it per consumer point (through this stage).  Reads are
    attributed to the func whose body performs them (`func` here); composed
    reads through an inlined producer are attributed to that producer.
    """
    reads: list[ResolvedRead] = []
    inline_calls: dict[str, int] = {}
    stage = graph.func(func).stages[stage_idx]
    for a in stage.accesses:
        chain = prefix + (a.dims,)
        p = graph.func(a.producer)
        d = state.decision(a.producer)
        if d is not None and d.kind == "inline":
            vol = 1
            for link in chain:
                for _, lo, hi in link:
                    vol *= hi - lo + 1
            inline_calls[a.producer] = inline_calls.get(a.producer, 0) + vol
            sub, sub_calls = _expand_reads(graph, state, a.producer, 0, chain)
            reads.extend(sub)
            for k, v in sub_calls.items():
                inline_calls[k] = inline_calls.get(k, 0) + v
        else:
            if d is None or d.kind == "compute_root" or p.is_external_input:
                tier = "global"  # unscheduled producers default to global (provisional)
            else:
                tier = MEMORY_TIER[d.kind]
            reads.append(ResolvedRead(owner=func, producer=a.producer, tier=tier,
                                      chain=chain, elem_bytes=p.elem_bytes))
    return reads, inline_calls


_RESOLVE_MEMO: dict = {}
_RESOLVE_MEMO_LIMIT = 4096


def resolve(state: LoopNestState, graph: PipelineGraph, params,
            provisional: bool = False) -> ConcreteSchedule:
    """Derive concrete geometry for every scheduled func.

    With provisional=True, funcs awaiting phase-2 tiling get a nominal tiling
    and missing serial tilings default to 1s, so partially scheduled states
    can still be featurized and limit-checked.

    Results are memoized on (graph, decisions, params, provisional); the
    returned schedule is shared and must be treated as read-only.
    """
    key = (id(graph), state.decisions, params, provisional)
    hit = _RESOLVE_MEMO.get(key)
    if hit is not None:
        return hit
    cs = _resolve_uncached(state, graph, params, provisional)
    if len(_RESOLVE_MEMO) >= _RESOLVE_MEMO_LIMIT:
        _RESOLVE_MEMO.clear()
    _RESOLVE_MEMO[key] = cs
    return cs


def _resolve_uncached(state: LoopNestState, graph: PipelineGraph, params,
                      provisional: bool = False) -> ConcreteSchedule:
    cs = ConcreteSchedule(graph=graph)

    # Pass 1: placement order (consumers first, as recorded in the state).
    for func, d in state.decisions:
        node = graph.func(func)
        if d.kind == "inline":
            continue
        if d.kind == "compute_root":
            serial, thread = d.serial, d.thread
            if serial is None or thread is None:
                if not provisional:
                    raise ScheduleError(f"{func} is untiled; resolve needs a full schedule")
                serial, thread = provisional_tiling(node.extents)
            blocks = tuple(
                max(1, math.ceil(e / (s * t)))
                for e, s, t in zip(node.extents, serial, thread))
            region = [(0, b * t * s - 1) for b, t, s in zip(blocks, thread, serial)]
            n_threads = math.prod(thread)
            lane_base = tuple(0 for _ in node.extents)
            cf = ConcreteFunc(
                func=func, kind=d.kind, tier="global", kernel=func, consumer=None,
                serial=serial, thread=thread, blocks=blocks, region=region,
                total_box=list(region), realizations=1, n_threads=n_threads,
                context_thread_extents=thread, lane_base=lane_base,
                lane_coeff=serial, lane_extent=serial,
                unrolled=math.prod(serial) < UNROLL_LIMIT, reads_per_stage=[])
            cs.funcs[func] = cf
            cs.kernels.append(KernelInfo(owner=func, members=[func], blocks=blocks))
            continue

        # Fused: regions follow from the already-resolved consumers.
        consumers = _fusion_sources(cs, state, graph, func)
        if not consumers:
            raise ScheduleError(f"{func} is fused but has no resolved consumers")
        if d.kind == "fuse_at_block":
            serial = d.serial
            if serial is None:
                if not provisional:
                    raise ScheduleError(f"{func} fused at block without a serial tiling")
                serial = tuple(1 for _ in node.extents)
            boxes = [chain_box(cf_c.block_box, chain) for cf_c, chain in consumers]
            raw = bounding_box(boxes)
            thread = tuple(
                max(1, math.ceil((hi - lo + 1) / s)) for (lo, hi), s in zip(raw, serial))
            region = [(lo, lo + t * s - 1) for (lo, _), t, s in zip(raw, thread, serial)]
            total_raw = bounding_box(
                [chain_box(cf_c.total_box, chain) for cf_c, chain in consumers])
            total = [(lo, max(hi, lo + t * s - 1))
                     for (lo, hi), t, s in zip(total_raw, thread, serial)]
            kernel = consumers[0][0].kernel
            kern = cs.kernel_for(kernel)
            cf = ConcreteFunc(
                func=func, kind=d.kind, tier="shared", kernel=kernel, consumer=d.consumer,
                serial=serial, thread=thread, blocks=None, region=region,
                total_box=total, realizations=kern.num_blocks,
                n_threads=math.prod(thread), context_thread_extents=thread,
                lane_base=tuple(lo for lo, _ in region), lane_coeff=serial,
                lane_extent=serial, unrolled=math.prod(serial) < UNROLL_LIMIT,
                reads_per_stage=[])
            cs.funcs[func] = cf
            kern.members.append(func)
        else:  # fuse_at_thread
            cf_c = consumers[0][0]
            # per-lane domain of the consumer -> this func's per-thread region
            lane_box = [(b, b + e - 1) for b, e in zip(cf_c.lane_base, cf_c.lane_extent)]
            region = bounding_box([chain_box(lane_box, chain) for _, chain in consumers])
            chain0 = consumers[0][1]
            coeff = tuple(
                c * math.prod(link[dim][0] for link in chain0)
                for dim, c in enumerate(cf_c.lane_coeff))
            kernel = cf_c.kernel
            kern = cs.kernel_for(kernel)
            cf = ConcreteFunc(
                func=func, kind=d.kind, tier="register", kernel=kernel,
                consumer=d.consumer, serial=None, thread=None, blocks=None,
                region=region,
                total_box=bounding_box(
                    [chain_box(cf_c.total_box, chain) for _, chain in consumers]),
                realizations=kern.num_blocks * cf_c.n_threads,
                n_threads=cf_c.n_threads,
                context_thread_extents=cf_c.context_thread_extents,
                lane_base=tuple(lo for lo, _ in region), lane_coeff=coeff,
                lane_extent=tuple(hi - lo + 1 for lo, hi in region),
                unrolled=math.prod(hi - lo + 1 for lo, hi in region) < UNROLL_LIMIT,
                reads_per_stage=[])
            cs.funcs[func] = cf
            kern.members.append(func)

    # External inputs: global buffers sized to every reader's total footprint.
    _resolve_externals(cs, state, graph)

    # Pass 2: resolved reads (after all allocations exist) and inline stats.
    inline_totals: dict[str, int] = {}
    inline_primary: dict[str, tuple[int, str]] = {}
    for func, cf in cs.funcs.items():
        if cf.kind == "external":
            continue
        node = graph.func(func)
        for si in range(len(node.stages)):
            reads, icalls = _expand_reads(graph, state, func, si, ())
            cf.reads_per_stage.append(reads)
            for iname, vol in icalls.items():
                calls = vol * cf.points_per_block * cs.kernel_for(cf.kernel).num_blocks
                inline_totals[iname] = inline_totals.get(iname, 0) + calls
                best = inline_primary.get(iname)
                if best is None or calls > best[0]:
                    inline_primary[iname] = (calls, func)

    # Inlined funcs get ConcreteFunc rows in their primary consumer's context.
    for func, d in state.decisions:
        if d.kind != "inline":
            continue
        total = inline_totals.get(func, 0)
        primary = inline_primary.get(func, (0, None))[1]
        host = cs.funcs.get(primary) if primary else None
        node = graph.func(func)
        reads = []
        for cf in cs.funcs.values():
            if cf.kind == "external":
                continue
            for stage_reads in cf.reads_per_stage:
                reads.extend(r for r in stage_reads if r.owner == func)
        cs.funcs[func] = ConcreteFunc(
            func=func, kind="inline", tier="none",
            kernel=host.kernel if host else None, consumer=primary,
            serial=None, thread=None, blocks=None,
            region=[(0, -1)] * node.ndim, total_box=[(0, -1)] * node.ndim,
            realizations=0,
            n_threads=host.n_threads if host else 1,
            context_thread_extents=host.context_thread_extents if host else (1,) * node.ndim,
            lane_base=(0,) * node.ndim, lane_coeff=(0,) * node.ndim,
            lane_extent=(1,) * node.ndim,
            unrolled=host.unrolled if host else True,
            reads_per_stage=[reads],
            inline_primary=primary, inline_calls=total)

    # Kernel-level aggregates.
    for kern in cs.kernels:
        kern.threads_per_block = max(
            (cs.funcs[m].n_threads for m in kern.members), default=1)
        kern.shared_bytes = sum(
            cs.funcs[m].alloc_bytes * graph.func(m).elem_bytes
            for m in kern.members if cs.funcs[m].tier == "shared")

    _build_tree(cs, state, graph)
    return cs


def _fusion_sources(cs, state, graph, func):
    """(consumer ConcreteFunc, composed chain) pairs for a fused func."""
    out = []
    for cname, cf in cs.funcs.items():
        if cf.kind in ("external", "inline"):
            continue
        for si, stage in enumerate(graph.func(cname).stages):
            reads = cf.reads_per_stage[si] if si < len(cf.reads_per_stage) else None
            if reads is None:
                # reads not resolved yet during pass 1: expand on the fly
                reads, _ = _expand_reads(graph, state, cname, si, ())
            for r in reads:
                if r.producer == func:
                    out.append((cf, r.chain))
    return out


def _resolve_externals(cs, state, graph):
    """Global-buffer rows for external inputs and not-yet-scheduled producers.

    Unscheduled producers are treated as root-like global buffers so that
    partially scheduled states can still be featurized and limit-checked.
    """
    for f in graph.funcs:
        if not f.is_external_input and (state.is_scheduled(f.name)
                                        or f.name in cs.funcs):
            continue
        if f.name in cs.funcs:
            continue
        boxes = []
        for cname, cf in cs.funcs.items():
            if cf.kind in ("external", "inline"):
                continue
            for si in range(len(graph.func(cname).stages)):
                reads, _ = _expand_reads(graph, state, cname, si, ())
                for r in reads:
                    if r.producer == f.name:
                        boxes.append(chain_box(cf.total_box, r.chain))
        if not boxes:
            boxes = [[(0, e - 1) for e in f.extents]]
        box = bounding_box(boxes)
        cs.funcs[f.name] = ConcreteFunc(
            func=f.name, kind="external", tier="global", kernel=None, consumer=None,
            serial=None, thread=None, blocks=None, region=box, total_box=list(box),
            realizations=0, n_threads=1, context_thread_extents=(1,) * f.ndim,
            lane_base=(0,) * f.ndim, lane_coeff=(0,) * f.ndim,
            lane_extent=(1,) * f.ndim, unrolled=False, reads_per_stage=[])


def _build_tree(cs: ConcreteSchedule, state, graph):
    staged_ok = state.lowered
    for kern in cs.kernels:
        owner = cs.funcs[kern.owner]
        block = LoopNode(func=kern.owner, level="block", extents=owner.blocks or ())
        # producers before consumers inside the kernel
        for m in reversed(kern.members):
            cf = cs.funcs[m]
            if cf.kind == "fuse_at_thread":
                continue  # attached under its consumer's thread node below
            thread = LoopNode(func=m, level="thread", extents=cf.thread or ())
            serial = LoopNode(func=m, level="serial", extents=cf.serial or (),
                              unrolled=cf.unrolled)
            thread.children.append(serial)
            if staged_ok:
                staged = sorted({
                    r.producer for reads in cf.reads_per_stage for r in reads
                    if r.tier in ("global", "shared") and cf.unrolled})
                thread.staged_producers = staged
            for t in reversed(kern.members):
                tf = cs.funcs[t]
                if tf.kind == "fuse_at_thread" and tf.consumer == m:
                    serial.children.append(LoopNode(
                        func=t, level="serial", extents=tf.lane_extent,
                        unrolled=tf.unrolled))
            block.children.append(thread)
        cs.tree[kern.owner] = block
