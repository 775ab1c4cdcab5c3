"""Schedule state: per-func placement and tiling decisions over a pipeline.

A state is an immutable value; every scheduling decision returns a new
state, which is what lets beam search branch freely.  The loop-nest tree
(blocks / threads / serial loops per kernel) is derived from the decisions
by the resolver; this module owns the decision log, legality checks, the
structural hash used for bucketing, and the machine-readable dump format.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

from .pipeline import PipelineGraph


class ScheduleError(Exception):
    """Raised for structurally illegal scheduling decisions."""


PLACEMENT_KINDS = ("compute_root", "fuse_at_block", "fuse_at_thread", "inline")

# Placement kind -> memory tier of the func's allocation.
MEMORY_TIER = {
    "compute_root": "global",
    "fuse_at_block": "shared",
    "fuse_at_thread": "register",
    "inline": "none",
}


@dataclass(frozen=True)
class Decision:
    kind: str
    consumer: str | None = None
    serial: tuple[int, ...] | None = None
    thread: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in PLACEMENT_KINDS:
            raise ScheduleError(f"unknown decision kind {self.kind!r}")
        if self.kind in ("fuse_at_block", "fuse_at_thread") and not self.consumer:
            raise ScheduleError(f"{self.kind} needs a consumer")
        for extents in (self.serial, self.thread):
            if extents is not None and any(e < 1 for e in extents):
                raise ScheduleError("tile extents must be >= 1")


@dataclass
class LoopNode:
    """One level of the derived loop-nest tree (built by the resolver)."""

    func: str
    level: str                      # "block" | "thread" | "serial"
    extents: tuple[int, ...]
    unrolled: bool = False
    children: list["LoopNode"] = field(default_factory=list)
    staged_producers: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class LoopNestState:
    graph: PipelineGraph = field(compare=False)
    decisions: tuple[tuple[str, Decision], ...] = ()
    frozen: frozenset = frozenset()
    cost: float | None = field(default=None, compare=False)
    lowered: bool = False

    def __post_init__(self):
        object.__setattr__(self, "_dmap", dict(self.decisions))
        object.__setattr__(self, "_hash_memo", {})

    # -- queries ------------------------------------------------------------

    def decision(self, func: str) -> Decision | None:
        return self._dmap.get(func)

    def is_scheduled(self, func: str) -> bool:
        return func in self._dmap

    def placement_kind(self, func: str) -> str | None:
        d = self._dmap.get(func)
        return d.kind if d else None

    def kernel_of(self, func: str) -> str | None:
        """Root func of the kernel this func's computation lives in."""
        d = self._dmap.get(func)
        if d is None or d.kind == "inline":
            return None
        if d.kind == "compute_root":
            return func
        return self.kernel_of(d.consumer)

    def effective_consumers(self, func: str) -> set[str]:
        """Non-inlined funcs that (transitively through inlined funcs) read func."""
        out: set[str] = set()
        for c in self.graph.consumers_of(func):
            d = self._dmap.get(c)
            if d is not None and d.kind == "inline":
                out |= self.effective_consumers(c)
            else:
                out.add(c)
        return out

    def schedulable_funcs(self) -> list[str]:
        """Funcs needing decisions, in scheduling (reverse topological) order."""
        return [f for f in reversed(self.graph.topo_order)
                if not self.graph.func(f).is_external_input]

    def fully_scheduled(self, graph: PipelineGraph | None = None) -> bool:
        g = graph or self.graph
        for f in g.topo_order:
            if g.func(f).is_external_input:
                continue
            d = self._dmap.get(f)
            if d is None:
                return False
            if d.kind == "compute_root" and (d.serial is None or d.thread is None):
                return False
            if d.kind == "fuse_at_block" and d.serial is None:
                return False
        return True

    def with_cost(self, cost: float) -> "LoopNestState":
        return replace(self, cost=cost)

    # -- structural hash ----------------------------------------------------

    def structural_hash(self, depth: int) -> int:
        """64-bit hash of the loop-nest structure truncated at `depth`.

        Depth counts tiling levels below the kernel roots: 0 sees only the
        multiset of kernels, 1 adds block-level membership and placement
        kinds, 2 adds fusion targets (thread-level structure), 3 adds
        whether each func carries a serial tiling level.  Concrete tile
        extents are never hashed, so tiling variants of one structure
        always share a bucket.
        """
        if depth < 0:
            raise ValueError("depth must be >= 0")
        key = min(depth, 3)
        memo = self._hash_memo
        if key not in memo:
            canon = self._canonical(key)
            digest = hashlib.blake2b(repr(canon).encode(), digest_size=8).digest()
            memo[key] = int.from_bytes(digest, "little")
        return memo[key]

    def _canonical(self, depth: int):
        if depth == 0:
            roots = sorted(f for f, d in self.decisions if d.kind == "compute_root")
            return ("kernels", tuple(roots))
        entries = []
        for func in sorted(self._dmap):
            d = self._dmap[func]
            e = [func, d.kind, self.kernel_of(func)]
            if depth >= 2:
                e.append(d.consumer)
            if depth >= 3:
                e.append(d.serial is not None)
                e.append(d.thread is not None)
            entries.append(tuple(e))
        return (depth, tuple(entries))


@dataclass(frozen=True)
class StructuralHash:
    value: int
    depth: int


def initial_state(graph: PipelineGraph) -> LoopNestState:
    return LoopNestState(graph=graph)


def apply_decision(state: LoopNestState, func: str, decision: Decision) -> LoopNestState:
    """Record a placement (or a deferred tiling) for `func`; returns a new state."""
    graph = state.graph
    node = graph.func(func)
    if node.is_external_input:
        raise ScheduleError(f"{func} is an external input; it is never scheduled")
    existing = state.decision(func)

    if func in state.frozen:
        if existing is not None and decision != existing:
            raise ScheduleError(f"{func} is frozen; only its frozen decision may be reapplied")

    if existing is not None:
        # Second-phase tiling of a root func is the only legal re-application.
        if existing.kind == "compute_root" and decision.kind == "compute_root" \
                and existing.serial is None and decision.serial is not None:
            _check_tiling(node, decision)
            new = tuple((f, decision if f == func else d) for f, d in state.decisions)
            return replace(state, decisions=new, cost=None)
        if decision == existing:
            return state
        raise ScheduleError(f"{func} is already scheduled")

    if decision.kind == "inline":
        if func in graph.outputs:
            raise ScheduleError(f"cannot inline output func {func}")
        if len(node.stages) > 1:
            raise ScheduleError(f"cannot inline multi-stage func {func}")
        if any(a.producer == func for st in node.stages for a in st.accesses):
            raise ScheduleError(f"cannot inline self-reading func {func}")
    elif decision.kind in ("fuse_at_block", "fuse_at_thread"):
        if func in graph.outputs:
            raise ScheduleError(f"output func {func} must be computed at root")
        c = decision.consumer
        if c == func or c not in graph:
            raise ScheduleError(f"bad fusion target {c!r} for {func}")
        cd = state.decision(c)
        if cd is None or cd.kind == "inline":
            raise ScheduleError(f"fusion target {c} must be scheduled and not inlined")
        eff = state.effective_consumers(func)
        if c not in eff:
            raise ScheduleError(f"{c} is not a consumer of {func}")
        if decision.kind == "fuse_at_thread":
            if eff != {c}:
                raise ScheduleError(
                    f"{func} fused at thread of {c} but is also consumed by "
                    f"{sorted(eff - {c})}")
        else:
            kern = state.kernel_of(c)
            for other in eff:
                if state.kernel_of(other) != kern:
                    raise ScheduleError(
                        f"{func} fused at block of kernel {kern} but consumer "
                        f"{other} lives in kernel {state.kernel_of(other)}")
        if decision.kind == "fuse_at_block":
            if decision.serial is not None and len(decision.serial) != node.ndim:
                raise ScheduleError(f"serial tiling rank mismatch for {func}")
        if decision.thread is not None:
            raise ScheduleError("fused funcs never carry explicit thread tilings")
    elif decision.kind == "compute_root":
        if decision.serial is not None:
            _check_tiling(node, decision)

    return replace(state, decisions=state.decisions + ((func, decision),), cost=None)


def _check_tiling(node, decision: Decision):
    if decision.serial is None or decision.thread is None:
        raise ScheduleError(f"root tiling of {node.name} needs serial and thread extents")
    if len(decision.serial) != node.ndim or len(decision.thread) != node.ndim:
        raise ScheduleError(f"tiling rank mismatch for {node.name}")
    for s, e in zip(decision.serial, node.extents):
        if s > e:
            raise ScheduleError(f"serial extent {s} exceeds dim extent {e} of {node.name}")


def structural_hash(state: LoopNestState, depth: int) -> int:
    return state.structural_hash(depth)


def lower(state: LoopNestState, graph: PipelineGraph | None = None) -> LoopNestState:
    """Mark a fully scheduled state as lowered.

    Lowering annotations (unrolling serial loops with total extent < 16,
    staging producers into per-thread register buffers) are structural
    consequences of the decisions; the resolver materializes them on the
    derived tree.  See `resolve.UNROLL_LIMIT`.
    """
    g = graph or state.graph
    if not state.fully_scheduled(g):
        unscheduled = [f for f in state.schedulable_funcs() if not state.is_scheduled(f)]
        raise ScheduleError(f"cannot lower: unscheduled funcs {unscheduled}")
    return replace(state, lowered=True)


# -- dump / replay ----------------------------------------------------------

def schedule_dump(state: LoopNestState) -> str:
    """Machine-readable ordered decision list (JSON lines) for replay."""
    lines = []
    for func, d in state.decisions:
        lines.append(json.dumps({
            "func": func, "kind": d.kind, "consumer": d.consumer,
            "serial": list(d.serial) if d.serial else None,
            "thread": list(d.thread) if d.thread else None,
        }))
    return "\n".join(lines) + "\n"


def replay_schedule(graph: PipelineGraph, text: str) -> LoopNestState:
    state = initial_state(graph)
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        d = Decision(
            kind=rec["kind"], consumer=rec.get("consumer"),
            serial=tuple(rec["serial"]) if rec.get("serial") else None,
            thread=tuple(rec["thread"]) if rec.get("thread") else None,
        )
        state = apply_decision(state, rec["func"], d)
    return state


def pretty_print(state: LoopNestState, params=None) -> str:
    """Human-readable loop nest, one kernel per paragraph."""
    from .machine import MachineParams
    from .resolve import resolve
    concrete = resolve(state, state.graph, params or MachineParams(), provisional=True)
    out = []
    for kern in concrete.kernels:
        out.append(_print_node(concrete.tree[kern.owner], state.graph, 0))
    for func, d in state.decisions:
        if d.kind == "inline":
            out.append(f"inline {func}")
    return "\n".join(out)


def _print_node(node: LoopNode, graph, indent: int) -> str:
    pad = " " * indent
    names = ", ".join(n for n, _ in graph.func(node.func).dims)
    exts = ", ".join(str(e) for e in node.extents)
    tag = {"block": "@blocks", "thread": "@threads", "serial": "@serial"}[node.level]
    if node.unrolled:
        tag += ", unrolled"
    lines = [f"{pad}for {names} in {exts} {tag}  # {node.func}"]
    for staged in node.staged_producers:
        lines.append(f"{pad} stage {staged} @registers")
    if not node.children:
        lines.append(f"{pad} compute {node.func}")
    for child in node.children:
        lines.append(_print_node(child, graph, indent + 1))
    return "\n".join(lines)
