"""Per-stage schedule featurization.

Computes, for every (func, stage) of a scheduled pipeline, the memory,
parallelism, and occupancy features consumed by the cost model, plus the
schedule-independent algorithm features.  Counting is exact under the
padded-tile semantics of the resolver: all blocks of a kernel are congruent,
so per-block features are computed on block 0 by enumerating its warps.

Transactions: global-memory accesses are counted as distinct aligned
segments touched per warp instruction; shared-memory accesses serialize on
bank conflicts (max distinct words per bank).  When a stage's serial loops
are unrolled, loads are staged into registers and amortized: one warp
instruction per unique stencil point per lane, instead of one per use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from .boxes import union_lines, union_volume
from .machine import MachineParams
from .pipeline import OP_CLASSES, PipelineGraph
from .resolve import ConcreteSchedule, chain_footprint, resolve

FEATURE_VERSION = 1


def expr_branching(tree) -> int:
    """Strahler number of an expression-tree shape (leaf = None)."""
    if tree is None:
        return 1
    vals = [expr_branching(c) for c in tree]
    if not vals:
        return 1
    m = max(vals)
    return m + 1 if vals.count(m) > 1 else m


@dataclass(frozen=True)
class AlgorithmFeatures:
    """Schedule-independent per-stage features (op histograms, access shape)."""

    op_counts: tuple[float, ...]       # one per OP_CLASSES entry
    num_accesses: float
    mean_window_volume: float
    elem_bytes: float

    @property
    def ops_per_point(self) -> float:
        return float(sum(self.op_counts))

    def to_vector(self) -> np.ndarray:
        return np.array(self.op_counts + (self.num_accesses,
                                          self.mean_window_volume,
                                          self.elem_bytes), dtype=np.float64)


ALGO_DIM = len(OP_CLASSES) + 3


def algorithm_features(graph: PipelineGraph) -> dict[tuple[str, int], AlgorithmFeatures]:
    out = {}
    for f in graph.funcs:
        for si, stage in enumerate(f.stages):
            vols = [a.window_volume for a in stage.accesses]
            out[(f.name, si)] = AlgorithmFeatures(
                op_counts=tuple(float(stage.op_histogram.get(op, 0)) for op in OP_CLASSES),
                num_accesses=float(len(stage.accesses)),
                mean_window_volume=float(np.mean(vols)) if vols else 0.0,
                elem_bytes=float(f.elem_bytes),
            )
    return out


@dataclass
class ScheduleFeatures:
    num_scalars: float = 0.0
    points_computed_per_thread: float = 0.0

    unique_global_bytes_read_per_realization: float = 0.0
    unique_shared_bytes_read_per_realization: float = 0.0
    unique_register_bytes_read_per_realization: float = 0.0
    unique_global_lines_read_per_realization: float = 0.0
    unique_shared_lines_read_per_realization: float = 0.0
    unique_register_lines_read_per_realization: float = 0.0
    unique_global_bytes_read_per_thread: float = 0.0
    unique_shared_bytes_read_per_thread: float = 0.0
    unique_register_bytes_read_per_thread: float = 0.0
    unique_global_lines_read_per_thread: float = 0.0
    unique_shared_lines_read_per_thread: float = 0.0
    unique_register_lines_read_per_thread: float = 0.0

    global_allocation_bytes_read_per_realization: float = 0.0
    shared_allocation_bytes_read_per_realization: float = 0.0
    register_allocation_bytes_read_per_realization: float = 0.0

    global_bytes_at_task: float = 0.0
    shared_bytes_at_task: float = 0.0
    register_bytes_at_task: float = 0.0
    global_innermost_bytes_at_task: float = 0.0
    shared_innermost_bytes_at_task: float = 0.0
    register_innermost_bytes_at_task: float = 0.0

    num_blocks: float = 0.0
    num_warps_per_block: float = 0.0
    num_active_warps_per_block: float = 0.0
    num_threads_per_block: float = 0.0
    expr_branching: float = 1.0
    block_occupancy: float = 1.0
    warp_lane_utilization: float = 1.0
    idle_lane_wastage: float = 0.0

    num_shared_mem_loads_per_block: float = 0.0
    num_global_mem_loads_per_block: float = 0.0
    num_shared_mem_stores_per_block: float = 0.0
    num_global_mem_stores_per_block: float = 0.0

    shared_mem_store_efficiency: float = 1.0
    shared_mem_load_efficiency: float = 1.0
    global_mem_store_efficiency: float = 1.0
    global_mem_load_efficiency: float = 1.0

    working_set_at_thread: float = 0.0

    shared_mem_occupancy: float = 0.0
    shared_mem_block_limit_factor: float = 1.0
    max_warp_occupancy: float = 1.0
    max_block_occupancy: float = 1.0

    # inherited scalar features
    num_realizations: float = 0.0
    num_productions: float = 0.0
    num_tasks: float = 0.0
    inner_parallelism: float = 1.0
    tasks_per_core: float = 0.0
    num_cores: float = 1.0
    inlined_calls: float = 0.0
    unique_bytes_read_per_point: float = 0.0
    unique_lines_read_per_point: float = 0.0
    unique_bytes_read_per_task: float = 0.0
    unique_lines_read_per_task: float = 0.0
    working_set: float = 0.0

    algorithm: AlgorithmFeatures | None = field(default=None, compare=False)

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_ORDER], dtype=np.float64)


FEATURE_ORDER: tuple[str, ...] = tuple(
    f.name for f in dc_fields(ScheduleFeatures) if f.name != "algorithm")
SCHED_DIM = len(FEATURE_ORDER)


# ---------------------------------------------------------------------------
# Transaction counting
# ---------------------------------------------------------------------------

def count_memory_transactions(lane_addresses, tier: str, params: MachineParams) -> int:
    """Transactions for one warp access with the given per-lane byte addresses.

    Global: number of distinct transaction-size-aligned segments touched.
    Shared: serialized bank-conflict count -- max over banks of distinct
    words addressed within the bank (same-word lanes broadcast).
    """
    addrs = np.asarray(list(lane_addresses), dtype=np.int64).reshape(1, -1)
    return int(_count_transactions_rows(addrs, tier, params))


def _count_transactions_rows(addrs: np.ndarray, tier: str, params: MachineParams) -> int:
    """Sum of per-row transaction counts; addrs is [rows, lanes], -1 = inactive lane."""
    if addrs.size == 0:
        return 0
    valid = addrs >= 0
    if tier == "global":
        seg = np.where(valid, addrs // params.global_transaction_bytes, np.int64(-1))
        seg = np.sort(seg, axis=1)
        distinct = (seg[:, 1:] != seg[:, :-1]) & (seg[:, 1:] >= 0)
        first = seg[:, :1] >= 0
        return int(distinct.sum() + first.sum())
    if tier == "shared":
        nbanks = params.shared_banks
        word = np.where(valid, addrs // params.bank_width_bytes, np.int64(-1))
        word = np.sort(word, axis=1)
        uniq = np.concatenate(
            [word[:, :1] >= 0, (word[:, 1:] != word[:, :-1]) & (word[:, 1:] >= 0)], axis=1)
        rows = word.shape[0]
        row_idx = np.repeat(np.arange(rows), word.shape[1]).reshape(rows, -1)
        banks = word % nbanks
        ids = (row_idx * nbanks + banks)[uniq]
        counts = np.bincount(ids, minlength=rows * nbanks).reshape(rows, nbanks)
        return int(counts.max(axis=1, initial=0).sum())
    raise ValueError(f"no transaction model for tier {tier!r}")


def _alloc_layout(cf, elem_bytes: int):
    """(lo per dim, byte stride per dim) of a row-major allocation, dim 0 contiguous."""
    los = np.array([lo for lo, _ in cf.region], dtype=np.int64)
    extents = [hi - lo + 1 for lo, hi in cf.region]
    strides = np.empty(len(extents), dtype=np.int64)
    acc = elem_bytes
    for d, e in enumerate(extents):
        strides[d] = acc
        acc *= e
    return los, strides


def _rel_points(chain, lane_extent) -> list[np.ndarray]:
    """Per-dim canonical (ascending) unique relative stencil points of a chain
    applied to a zero-based lane domain."""
    pts = []
    for d, e in enumerate(lane_extent):
        ivs = chain_footprint([(0, e - 1)], [link[d] for link in chain])
        pts.append(np.array([x for lo, hi in ivs for x in range(lo, hi + 1)],
                            dtype=np.int64))
    return pts


def _all_offsets(chain, lane_extent) -> list[np.ndarray]:
    """Per-dim relative target coordinates of every (serial point, window
    offsets) combination, in lockstep execution order (with repeats)."""
    pts = []
    for d, e in enumerate(lane_extent):
        vals = np.arange(e, dtype=np.int64)
        for s, lo, hi in (link[d] for link in chain):
            w = np.arange(lo, hi + 1, dtype=np.int64)
            vals = (vals[:, None] * s + w[None, :]).ravel()
        pts.append(vals)
    return pts


def _cross(per_dim: list[np.ndarray]) -> np.ndarray:
    """[n, ndim] cross product with dim 0 varying fastest."""
    grids = np.meshgrid(*per_dim, indexing="ij")
    stacked = np.stack([g.ravel(order="F") for g in grids], axis=-1)
    return stacked


def _thread_coords(n_threads: int, extents) -> np.ndarray:
    """[n_threads, ndim] coordinates, dim 0 fastest."""
    tids = np.arange(n_threads, dtype=np.int64)
    coords = np.empty((n_threads, len(extents)), dtype=np.int64)
    rem = tids
    for d, e in enumerate(extents):
        coords[:, d] = rem % e
        rem = rem // e
    return coords


# Added to every byte address before transaction counting so addresses stay
# non-negative even for out-of-halo reads; a multiple of the 128-byte
# segment/bank period, so it never changes any transaction count.
_ADDR_BIAS = 1 << 40


def _warp_lane_matrix(values: np.ndarray, n_threads: int, warp_size: int,
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Pad a per-thread vector to [warps, warp_size]; second result is the
    active-lane mask (tail warps have inactive lanes)."""
    warps = math.ceil(n_threads / warp_size)
    out = np.zeros((warps, warp_size), dtype=np.int64)
    out.ravel()[:n_threads] = values
    mask = np.zeros((warps, warp_size), dtype=bool)
    mask.ravel()[:n_threads] = True
    return out, mask


# ---------------------------------------------------------------------------
# Featurization
# ---------------------------------------------------------------------------

def featurize(state, graph: PipelineGraph, params: MachineParams,
              _concrete: ConcreteSchedule | None = None,
              ) -> dict[tuple[str, int], ScheduleFeatures]:
    """Full per-(func, stage) feature map for a scheduled state.

    Partially scheduled states are featurized with provisional tilings for
    funcs still awaiting their second-phase decision; only scheduled funcs
    get feature rows.
    """
    cs = _concrete or resolve(state, graph, params, provisional=True)
    algo = algorithm_features(graph)
    out: dict[tuple[str, int], ScheduleFeatures] = {}

    for func, cf in cs.funcs.items():
        if cf.kind == "external":
            continue
        node = graph.func(func)
        if cf.kind == "inline":
            fs = _featurize_inline(cs, graph, params, cf)
            fs.algorithm = algo[(func, 0)]
            fs.expr_branching = float(_stage_branching(node.stages[0]))
            out[(func, 0)] = fs
            continue
        for si in range(len(node.stages)):
            fs = _featurize_stage(cs, graph, params, cf, si)
            fs.algorithm = algo[(func, si)]
            fs.expr_branching = float(_stage_branching(node.stages[si]))
            out[(func, si)] = fs
    return out


def _stage_branching(stage) -> int:
    if stage.expr_tree is not None:
        return expr_branching(stage.expr_tree)
    return 2 if stage.ops_per_point >= 2 else 1


def _per_block_box(cf):
    """Box of points this stage computes within one block."""
    return cf.block_box


def _parallel_features(fs, cs, params, cf, kern):
    n = cf.n_threads
    kernel_threads = kern.threads_per_block
    ws = params.warp_size
    active_warps = math.ceil(n / ws)
    fs.num_blocks = float(kern.num_blocks)
    fs.num_warps_per_block = float(math.ceil(kernel_threads / ws))
    fs.num_active_warps_per_block = float(active_warps)
    fs.num_threads_per_block = float(n)
    fs.warp_lane_utilization = n / (ws * active_warps)
    fs.idle_lane_wastage = (ws * active_warps - n) / params.max_threads_per_block
    fs.block_occupancy = kernel_threads / params.max_threads_per_block
    compute_occupancy(fs, params, shared_bytes=kern.shared_bytes,
                      kernel_threads=kernel_threads)
    fs.num_tasks = float(kern.num_blocks)
    fs.inner_parallelism = float(n)
    fs.num_cores = float(params.num_sms)
    fs.tasks_per_core = kern.num_blocks / params.num_sms


def compute_occupancy(fs: ScheduleFeatures, params: MachineParams,
                      shared_bytes: int, kernel_threads: int) -> ScheduleFeatures:
    """Fill the occupancy-limit features from the kernel's resource usage.

    Active blocks per SM = min of the block limit, the shared-memory limit,
    and the warp limit; occupancies are ratios against the hardware maxima.
    A kernel with no shared allocation consumes none of that resource.
    """
    ws = params.warp_size
    warps_per_block = max(1, math.ceil(kernel_threads / ws))
    if shared_bytes > 0:
        blocks_by_shared = max(1, params.shared_mem_per_sm // shared_bytes)
        fs.shared_mem_occupancy = min(
            1.0, shared_bytes / params.shared_mem_per_block_limit)
    else:
        blocks_by_shared = params.max_active_blocks_per_sm
        fs.shared_mem_occupancy = 0.0
    fs.shared_mem_block_limit_factor = (
        min(blocks_by_shared, params.max_active_blocks_per_sm)
        / params.max_active_blocks_per_sm)
    active_blocks = min(params.max_active_blocks_per_sm, blocks_by_shared,
                        params.max_active_warps_per_sm // warps_per_block)
    active_blocks = max(1, active_blocks)
    aw = min(params.max_active_warps_per_sm, active_blocks * warps_per_block)
    fs.max_warp_occupancy = aw / params.max_active_warps_per_sm
    fs.max_block_occupancy = active_blocks / params.max_active_blocks_per_sm
    return fs


def compute_efficiencies(fs: ScheduleFeatures, params: MachineParams,
                         used_load_bytes: dict[str, float],
                         stored_bytes: float, store_tier: str | None,
                         store_transactions: float) -> ScheduleFeatures:
    """Fill efficiency features: used bytes over transferred bytes, in (0, 1].

    Transferred bytes = transactions times transaction size (a full segment
    for global memory, one word per bank across all banks for shared).
    Tiers with no transactions keep efficiency 1.
    """
    gtx = params.global_transaction_bytes
    stx = params.shared_banks * params.bank_width_bytes
    if fs.num_global_mem_loads_per_block > 0:
        fs.global_mem_load_efficiency = min(
            1.0, used_load_bytes["global"] / (fs.num_global_mem_loads_per_block * gtx))
    if fs.num_shared_mem_loads_per_block > 0:
        fs.shared_mem_load_efficiency = min(
            1.0, used_load_bytes["shared"] / (fs.num_shared_mem_loads_per_block * stx))
    if store_tier == "global" and store_transactions > 0:
        fs.global_mem_store_efficiency = min(
            1.0, stored_bytes / (store_transactions * gtx))
    elif store_tier == "shared" and store_transactions > 0:
        fs.shared_mem_store_efficiency = min(
            1.0, stored_bytes / (store_transactions * stx))
    return fs


def _read_products(cs, reads, box):
    """Per (tier, producer): grid products of the reads' footprints over `box`."""
    grouped: dict[tuple[str, str], list] = {}
    for r in reads:
        prod = []
        for d, iv in enumerate(box):
            prod.append(chain_footprint([iv], [link[d] for link in r.chain]))
        grouped.setdefault((r.tier, r.producer), []).append(prod)
    return grouped


def _unique_by_tier(cs, graph, grouped):
    """(bytes, lines) per tier from grouped grid products."""
    bytes_by = {"global": 0, "shared": 0, "register": 0}
    lines_by = {"global": 0, "shared": 0, "register": 0}
    for (tier, producer), products in grouped.items():
        eb = graph.func(producer).elem_bytes
        bytes_by[tier] += union_volume(products) * eb
        lines_by[tier] += union_lines(products)
    return bytes_by, lines_by


def _featurize_stage(cs, graph, params, cf, si) -> ScheduleFeatures:
    node = graph.func(cf.func)
    kern = cs.kernel_for(cf.kernel)
    fs = ScheduleFeatures()
    _parallel_features(fs, cs, params, cf, kern)

    total_points = cf.points_per_block * kern.num_blocks
    fs.num_scalars = float(total_points)
    fs.points_computed_per_thread = float(cf.points_per_thread)
    fs.num_realizations = float(cf.realizations)
    fs.num_productions = float(cf.realizations)

    reads = cf.reads_per_stage[si] if si < len(cf.reads_per_stage) else []
    own_reads = [r for r in reads if r.owner == cf.func]

    # per-realization uniques
    grouped = _read_products(cs, own_reads, cf.region)
    b, l = _unique_by_tier(cs, graph, grouped)
    fs.unique_global_bytes_read_per_realization = float(b["global"])
    fs.unique_shared_bytes_read_per_realization = float(b["shared"])
    fs.unique_register_bytes_read_per_realization = float(b["register"])
    fs.unique_global_lines_read_per_realization = float(l["global"])
    fs.unique_shared_lines_read_per_realization = float(l["shared"])
    fs.unique_register_lines_read_per_realization = float(l["register"])

    # per-thread uniques (thread 0 of block 0; all threads are congruent)
    lane_box = [(b0, b0 + e - 1) for b0, e in zip(cf.lane_base, cf.lane_extent)]
    grouped_t = _read_products(cs, own_reads, lane_box)
    b, l = _unique_by_tier(cs, graph, grouped_t)
    fs.unique_global_bytes_read_per_thread = float(b["global"])
    fs.unique_shared_bytes_read_per_thread = float(b["shared"])
    fs.unique_register_bytes_read_per_thread = float(b["register"])
    fs.unique_global_lines_read_per_thread = float(l["global"])
    fs.unique_shared_lines_read_per_thread = float(l["shared"])
    fs.unique_register_lines_read_per_thread = float(l["register"])

    # allocation bytes touched per realization
    alloc_by = {"global": 0, "shared": 0, "register": 0}
    for (tier, producer) in grouped:
        pcf = cs.funcs[producer]
        alloc_by[tier] += pcf.alloc_bytes * graph.func(producer).elem_bytes
    fs.global_allocation_bytes_read_per_realization = float(alloc_by["global"])
    fs.shared_allocation_bytes_read_per_realization = float(alloc_by["shared"])
    fs.register_allocation_bytes_read_per_realization = float(alloc_by["register"])

    # bytes written per block
    eb = node.elem_bytes
    written = cf.points_per_block * eb
    pb_box = _per_block_box(cf)
    innermost = (pb_box[0][1] - pb_box[0][0] + 1) * eb
    setattr(fs, f"{cf.tier}_bytes_at_task", float(written))
    setattr(fs, f"{cf.tier}_innermost_bytes_at_task", float(innermost))

    # transactions (block 0)
    loads, used_load = _count_stage_loads(cs, graph, params, cf, own_reads)
    fs.num_global_mem_loads_per_block = float(loads["global"])
    fs.num_shared_mem_loads_per_block = float(loads["shared"])
    stores = _count_stage_stores(cs, params, cf, eb)
    if cf.tier == "global":
        fs.num_global_mem_stores_per_block = float(stores)
    elif cf.tier == "shared":
        fs.num_shared_mem_stores_per_block = float(stores)

    compute_efficiencies(fs, params, used_load_bytes=used_load,
                         stored_bytes=written, store_tier=cf.tier,
                         store_transactions=stores)

    # working set at the thread level
    ws = 0
    if cf.tier == "register":
        ws += cf.alloc_bytes * eb
    for other in cs.funcs.values():
        if other.kind == "fuse_at_thread" and other.consumer == cf.func:
            ws += other.alloc_bytes * graph.func(other.func).elem_bytes
    if cf.unrolled:  # staged load buffers
        ws += fs.unique_global_bytes_read_per_thread
        ws += fs.unique_shared_bytes_read_per_thread
    fs.working_set_at_thread = float(ws)
    fs.working_set = float(cf.alloc_bytes * eb)

    # per-point and per-task uniques (all tiers combined)
    point_box = [(b0, b0) for b0, _ in lane_box]
    grouped_p = _read_products(cs, own_reads, point_box)
    b, l = _unique_by_tier(cs, graph, grouped_p)
    fs.unique_bytes_read_per_point = float(sum(b.values()))
    fs.unique_lines_read_per_point = float(sum(l.values()))
    grouped_blk = _read_products(cs, own_reads, pb_box)
    b, l = _unique_by_tier(cs, graph, grouped_blk)
    fs.unique_bytes_read_per_task = float(sum(b.values()))
    fs.unique_lines_read_per_task = float(sum(l.values()))
    return fs


def _lane_origin_addrs(cs, cf, read, params):
    """Per-thread byte address of the chain origin, plus relative point arrays.

    Returns (origins [n_threads], rel point products) where a lane's j-th
    staged load address is origin + rel_addr[j].
    """
    pcf = cs.funcs[read.producer]
    los, strides = _alloc_layout(pcf, read.elem_bytes)
    coords = _thread_coords(cf.n_threads, cf.context_thread_extents)
    ndim = len(cf.lane_extent)
    total_stride = [math.prod(link[d][0] for link in read.chain) for d in range(ndim)]
    origin = np.zeros(cf.n_threads, dtype=np.int64)
    for d in range(ndim):
        base = cf.lane_base[d] * total_stride[d]
        origin += (coords[:, d] * (cf.lane_coeff[d] * total_stride[d]) + base - los[d]) \
            * strides[d]
    return origin, strides


def _count_stage_loads(cs, graph, params, cf, reads):
    """Per-tier load transactions for block 0 and the used (unique) bytes."""
    loads = {"global": 0, "shared": 0}
    used = {"global": 0, "shared": 0}
    pb_box = _per_block_box(cf)
    grouped_blk = _read_products(cs, reads, pb_box)
    for (tier, producer), products in grouped_blk.items():
        if tier in used:
            used[tier] += union_volume(products) * graph.func(producer).elem_bytes
    for r in reads:
        if r.tier not in loads:
            continue
        if cf.unrolled:
            per_dim = _rel_points(r.chain, cf.lane_extent)
        else:
            per_dim = _all_offsets(r.chain, cf.lane_extent)
        rel = _cross(per_dim)
        pcf = cs.funcs[r.producer]
        _, strides = _alloc_layout(pcf, r.elem_bytes)
        rel_addr = rel @ strides
        origin, _ = _lane_origin_addrs(cs, cf, r, params)
        # [warps, lanes] per instruction
        base, mask = _warp_lane_matrix(origin, cf.n_threads, params.warp_size)
        addrs = base[None, :, :] + rel_addr[:, None, None] + _ADDR_BIAS
        addrs[np.broadcast_to(~mask[None, :, :], addrs.shape)] = -1
        loads[r.tier] += _count_transactions_rows(
            addrs.reshape(-1, params.warp_size), r.tier, params)
    return loads, used


def _count_stage_stores(cs, params, cf, elem_bytes):
    """Store transactions for block 0 into this stage's own allocation."""
    if cf.tier not in ("global", "shared"):
        return 0
    los, strides = _alloc_layout(cf, elem_bytes)
    coords = _thread_coords(cf.n_threads, cf.context_thread_extents)
    origin = np.zeros(cf.n_threads, dtype=np.int64)
    for d in range(len(cf.lane_extent)):
        origin += (coords[:, d] * cf.lane_coeff[d] + cf.lane_base[d] - los[d]) * strides[d]
    rel = _cross([np.arange(e, dtype=np.int64) for e in cf.lane_extent])
    rel_addr = rel @ strides
    base, mask = _warp_lane_matrix(origin, cf.n_threads, params.warp_size)
    addrs = base[None, :, :] + rel_addr[:, None, None] + _ADDR_BIAS
    addrs[np.broadcast_to(~mask[None, :, :], addrs.shape)] = -1
    return _count_transactions_rows(addrs.reshape(-1, params.warp_size), cf.tier, params)


def _featurize_inline(cs, graph, params, cf) -> ScheduleFeatures:
    """Inlined stages: evaluated inside their primary consumer's loops."""
    fs = ScheduleFeatures()
    host = cs.funcs.get(cf.inline_primary) if cf.inline_primary else None
    if host is None:
        fs.inlined_calls = float(max(1, cf.inline_calls))
        fs.num_scalars = float(cf.inline_calls)
        return fs
    kern = cs.kernel_for(host.kernel)
    _parallel_features(fs, cs, params, host, kern)
    fs.inlined_calls = float(cf.inline_calls)
    fs.num_scalars = float(cf.inline_calls)
    denom = kern.num_blocks * host.n_threads
    fs.points_computed_per_thread = cf.inline_calls / denom if denom else 0.0

    reads = cf.reads_per_stage[0] if cf.reads_per_stage else []
    # per-thread uniques in the host's context
    lane_box = [(b0, b0 + e - 1) for b0, e in zip(host.lane_base, host.lane_extent)]
    grouped_t = _read_products(cs, reads, lane_box)
    b, l = _unique_by_tier(cs, graph, grouped_t)
    fs.unique_global_bytes_read_per_thread = float(b["global"])
    fs.unique_shared_bytes_read_per_thread = float(b["shared"])
    fs.unique_register_bytes_read_per_thread = float(b["register"])
    fs.unique_global_lines_read_per_thread = float(l["global"])
    fs.unique_shared_lines_read_per_thread = float(l["shared"])
    fs.unique_register_lines_read_per_thread = float(l["register"])

    loads, used_load = _count_stage_loads(cs, graph, params, host, reads)
    fs.num_global_mem_loads_per_block = float(loads["global"])
    fs.num_shared_mem_loads_per_block = float(loads["shared"])
    compute_efficiencies(fs, params, used_load_bytes=used_load,
                         stored_bytes=0.0, store_tier=None, store_transactions=0)

    grouped_blk = _read_products(cs, reads, host.block_box)
    b, l = _unique_by_tier(cs, graph, grouped_blk)
    fs.unique_bytes_read_per_task = float(sum(b.values()))
    fs.unique_lines_read_per_task = float(sum(l.values()))

    point_box = [(b0, b0) for b0, _ in lane_box]
    grouped_p = _read_products(cs, reads, point_box)
    b, l = _unique_by_tier(cs, graph, grouped_p)
    fs.unique_bytes_read_per_point = float(sum(b.values()))
    fs.unique_lines_read_per_point = float(sum(l.values()))
    return fs


def format_features(feats: dict[tuple[str, int], ScheduleFeatures]) -> str:
    """Ordered name=value text dump (the versioned external format)."""
    lines = [f"# feature_version={FEATURE_VERSION}"]
    for (func, si) in sorted(feats):
        lines.append(f"[{func} stage {si}]")
        fs = feats[(func, si)]
        for name in FEATURE_ORDER:
            lines.append(f"{name}={getattr(fs, name):.17g}")
    return "\n".join(lines) + "\n"
