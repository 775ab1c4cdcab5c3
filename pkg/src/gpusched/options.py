"""Candidate generation: compute locations, tilings, and pruning.

The search asks this module three questions per func: where may it be
computed (its own kernel, fused into a consumer at block or thread level,
or inlined), which serial tilings are worth trying, and which thread
tilings.  A separate prune step rejects states that are implausible on the
target machine before they reach featurization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .loopnest import Decision, LoopNestState, ScheduleError, apply_decision
from .machine import MachineParams, validate_limits
from .pipeline import PipelineGraph
from .resolve import resolve

# Funcs whose stages total at most this many ops per point are cheap enough
# to offer inlining as an option (recompute pruning catches the bad cases).
CHEAP_INLINE_OPS = 8


@dataclass(frozen=True)
class TilingConfig:
    """Menus for tile-extent enumeration."""

    serial_powers: tuple[int, ...] = (1, 2, 4, 8)
    odd_serial: tuple[int, ...] = (3, 5, 7)
    innermost_thread: tuple[int, ...] = (16, 32, 64)
    outer_thread: tuple[int, ...] = (1, 2, 4, 8, 16)
    unroll_budget: int = 64
    warp_size: int = 32


DEFAULT_TILING = TilingConfig()


@dataclass(frozen=True)
class TilingOptionSet:
    serial_options: list[tuple[int, ...]]
    thread_options: list[tuple[int, ...]]


@dataclass(frozen=True)
class PruneReport:
    reason: str
    detail: str

    REASONS = ("excessive_recompute", "idle_sms", "poor_warp_utilization",
               "serial_too_large", "thread_alloc_dynamic_or_large",
               "hardware_limit")

    def __post_init__(self):
        if self.reason not in self.REASONS:
            raise ValueError(f"unknown prune reason {self.reason!r}")


@dataclass(frozen=True)
class Thresholds:
    """Prune-rule knobs; the defaults suit full-size pipelines."""

    recompute_factor: float = 8.0
    min_blocks_per_sm_factor: float = 2.0
    warp_utilization_floor: float = 0.25
    unroll_budget: int = 64
    thread_alloc_bytes: int = 256

    @classmethod
    def from_file(cls, path) -> "Thresholds":
        kwargs = {}
        fields = {f: type(getattr(cls(), f)) for f in cls.__dataclass_fields__}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in fields:
                    raise ValueError(f"{path}:{lineno}: unknown threshold {key!r}")
                kwargs[key] = fields[key](value.strip())
        return cls(**kwargs)


DEFAULT_THRESHOLDS = Thresholds()


def _is_pointwise_called(graph: PipelineGraph, func: str) -> bool:
    """Every consumer reads this func through a pointwise (identity) access."""
    found = False
    for c in graph.consumers_of(func):
        for stage in graph.func(c).stages:
            for a in stage.accesses:
                if a.producer == func:
                    found = True
                    if not a.is_pointwise():
                        return False
    return found


def enumerate_compute_locations(state: LoopNestState, func: str,
                                graph: PipelineGraph) -> list[Decision]:
    """Placement options for the next func in scheduling order.

    Output funcs only ever compute at root.  Single-stage funcs called
    pointwise by all consumers are always inlined.  Otherwise the menu is
    compute_root, fusion into each already-scheduled consumer, and inlining
    when the func is cheap.  Illegal entries are filtered by the same
    legality checks `apply_decision` enforces.
    """
    if state.is_scheduled(func):
        raise ScheduleError(f"{func} is already scheduled")
    node = graph.func(func)
    if func in graph.outputs:
        return [Decision("compute_root")]

    def legal(d: Decision) -> bool:
        try:
            apply_decision(state, func, d)
            return True
        except ScheduleError:
            return False

    inline = Decision("inline")
    if len(node.stages) == 1 and _is_pointwise_called(graph, func) and legal(inline):
        return [inline]

    out = [Decision("compute_root")]
    for c in sorted(state.effective_consumers(func)):
        if not state.is_scheduled(c):
            continue
        for kind in ("fuse_at_block", "fuse_at_thread"):
            d = Decision(kind, consumer=c)
            if legal(d):
                out.append(d)
    ops = sum(sum(st.op_histogram.values()) for st in node.stages)
    if ops <= CHEAP_INLINE_OPS and legal(inline):
        out.append(inline)
    return out


def enumerate_serial_tilings(func_dims: tuple[int, ...],
                             thread_context: int | None = None,
                             config: TilingConfig = DEFAULT_TILING,
                             ) -> list[tuple[int, ...]]:
    """Serial tile extent vectors: small powers of 2 per dim, plus odd sizes
    that leave a warp-multiple extent, filtered by the unroll budget."""
    warp = thread_context or config.warp_size
    per_dim = []
    for extent in func_dims:
        opts = sorted({s for s in config.serial_powers if s <= extent})
        for o in config.odd_serial:
            if o <= extent and extent % o == 0 and (extent // o) % warp == 0:
                opts.append(o)
        per_dim.append(sorted(set(opts)) or [1])
    out = []
    for vec in _cross_lists(per_dim):
        if math.prod(vec) <= config.unroll_budget:
            out.append(vec)
    return out


def enumerate_thread_tilings(func_dims: tuple[int, ...],
                             config: TilingConfig = DEFAULT_TILING,
                             ) -> list[tuple[int, ...]]:
    """Thread tile extent vectors over the post-serial extents.

    The innermost (thread x) dimension is the first with extent >= 16, or
    dim 0 if none; it draws from the wide menu, other dims from the narrow
    one.  Extents are capped at the dim extent; leftover extents become
    block loops.
    """
    if not func_dims:
        return []
    innermost = next((i for i, e in enumerate(func_dims) if e >= 16), 0)
    per_dim = []
    for i, extent in enumerate(func_dims):
        menu = config.innermost_thread if i == innermost else config.outer_thread
        opts = sorted({min(t, extent) for t in menu})
        per_dim.append(opts)
    return _cross_lists(per_dim)


def enumerate_tilings(func_dims: tuple[int, ...],
                      config: TilingConfig = DEFAULT_TILING) -> TilingOptionSet:
    serial = enumerate_serial_tilings(func_dims, config=config)
    thread = enumerate_thread_tilings(func_dims, config=config)
    return TilingOptionSet(serial_options=serial, thread_options=thread)


def _cross_lists(per_dim: list[list[int]]) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = [()]
    for opts in per_dim:
        out = [vec + (o,) for vec in out for o in opts]
    return out


def prune(state: LoopNestState, graph: PipelineGraph, params: MachineParams,
          thresholds: Thresholds = DEFAULT_THRESHOLDS) -> PruneReport | None:
    """Reject implausible states; returns the first failing rule, or None.

    Any state that passes also passes hardware-limit validation (the limit
    check is one of the rules).
    """
    cs = resolve(state, graph, params, provisional=True)

    # Recompute: points evaluated vs points the scheduled funcs actually need.
    computed = 0
    needed = 0
    for func, cf in cs.funcs.items():
        if cf.kind == "external":
            continue
        needed += graph.func(func).domain_size
        if cf.kind == "inline":
            computed += cf.inline_calls
        else:
            computed += cf.points_per_block * cs.kernel_for(cf.kernel).num_blocks
    if needed and computed > thresholds.recompute_factor * needed:
        return PruneReport("excessive_recompute",
                           f"{computed} points computed for {needed} needed")

    min_blocks = thresholds.min_blocks_per_sm_factor * params.num_sms
    for kern in cs.kernels:
        if kern.num_blocks < min_blocks:
            return PruneReport("idle_sms",
                               f"kernel {kern.owner} launches {kern.num_blocks} "
                               f"blocks, need >= {min_blocks:g}")

    for func, cf in cs.funcs.items():
        if cf.kind in ("external", "inline"):
            continue
        warps = math.ceil(cf.n_threads / params.warp_size)
        util = cf.n_threads / (warps * params.warp_size)
        if util < thresholds.warp_utilization_floor:
            return PruneReport("poor_warp_utilization",
                               f"{func}: {cf.n_threads} threads fill {util:.2f} "
                               f"of its warps")
        if cf.serial is not None and math.prod(cf.serial) > thresholds.unroll_budget:
            return PruneReport("serial_too_large",
                               f"{func}: serial tile {cf.serial} exceeds the "
                               f"unroll budget {thresholds.unroll_budget}")
        if cf.kind == "fuse_at_thread":
            alloc = cf.alloc_bytes * graph.func(func).elem_bytes
            if alloc > thresholds.thread_alloc_bytes:
                return PruneReport("thread_alloc_dynamic_or_large",
                                   f"{func}: {alloc} bytes per thread > "
                                   f"{thresholds.thread_alloc_bytes}")

    violations = validate_limits(state, params)
    if violations:
        v = violations[0]
        return PruneReport("hardware_limit", f"{v.kernel}: {v.detail}")
    return None
