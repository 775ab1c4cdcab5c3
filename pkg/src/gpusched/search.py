"""Multi-pass beam search over scheduling decisions.

Funcs are scheduled in reverse topological order, starting from the output.
Phase 1 picks each func's compute location (block-fused funcs are serial
tiled immediately); phase 2 tiles the root funcs it deferred.  After every
phase the candidate pool is bucketed by structural hash, sampled, costed,
and cut back to the beam width.

Across passes, structures whose representatives ranked in the bottom half
of their phase are remembered by hash; when they reappear in a later pass
their cost is penalized, demoting them in the queue without removing them.
The hash depth used for bucketing and penalties is the pass index, so early
passes treat coarse structures as equivalent and later passes distinguish
finer detail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .costmodel import CostModelWeights, _forward, stage_cost_basis
from .featurize import featurize
from .loopnest import (Decision, LoopNestState, ScheduleError, apply_decision,
                       initial_state)
from .machine import MachineParams
from .options import (DEFAULT_THRESHOLDS, DEFAULT_TILING, Thresholds,
                      TilingConfig, enumerate_compute_locations,
                      enumerate_serial_tilings, enumerate_thread_tilings, prune)
from .pipeline import PipelineGraph
from .sampling import bucket_candidates, sample_representatives


class SearchError(Exception):
    pass


@dataclass(frozen=True)
class SearchConfig:
    beam_size: int = 32
    num_passes: int = 5
    penalty_factor: float = 2.0
    freeze_enabled: bool = False
    seed: int = 0
    sampling: bool = True           # test hook: False evaluates every candidate
    explore_temperature: float = 0.0  # >0: seed-driven stochastic beam cuts
    tiling: TilingConfig = DEFAULT_TILING
    thresholds: Thresholds = DEFAULT_THRESHOLDS
    restrict_placements: tuple[str, ...] | None = None
    frozen_decisions: tuple[tuple[str, Decision], ...] = ()

    def __post_init__(self):
        if self.beam_size < 1 or self.num_passes < 1:
            raise ValueError("beam_size and num_passes must be >= 1")
        if self.penalty_factor <= 1:
            raise ValueError("penalty_factor must be > 1")
        if self.explore_temperature < 0:
            raise ValueError("explore_temperature must be >= 0")


@dataclass
class BadHashMemo:
    """Hashes whose evaluated representatives ranked poorly, per depth."""

    flagged: set[tuple[int, int]] = field(default_factory=set)

    def record(self, depth: int, h: int):
        self.flagged.add((depth, h))

    def is_flagged(self, depth: int, h: int) -> bool:
        return (depth, h) in self.flagged


def apply_pass_penalty(queue: list, state: LoopNestState, pass_index: int,
                       memo: BadHashMemo, penalty_factor: float) -> list:
    """Insert a costed state, penalizing it if its hash is known bad.

    The hash depth is the pass index; the penalty reorders the queue but
    never drops a state.
    """
    cost = state.cost
    if memo.is_flagged(pass_index, state.structural_hash(pass_index)):
        cost = cost * penalty_factor
    queue.append((cost, state))
    return queue


class CostEvaluator:
    """Predicted-cost evaluation with a per-schedule featurization cache.

    The closed-form cost is linear in the network's coefficients, so each
    schedule caches its per-stage (features, basis) once; swapping weights
    (as autotuning does) only re-runs the small network.
    """

    def __init__(self, weights: CostModelWeights, params: MachineParams):
        self.weights = weights
        self.params = params
        self._basis_cache: dict = {}

    def stage_basis(self, state: LoopNestState, graph: PipelineGraph):
        key = (id(graph), state.decisions)
        hit = self._basis_cache.get(key)
        if hit is None:
            feats = featurize(state, graph, self.params)
            hit = []
            for skey, f in feats.items():
                g, h = stage_cost_basis(f)
                hit.append((skey, f.algorithm.to_vector(), f.to_vector(), g, h))
            self._basis_cache[key] = hit
        return hit

    def cost(self, state: LoopNestState, graph: PipelineGraph,
             ) -> tuple[float, dict[tuple[str, int], float]]:
        per_stage = {}
        total = 0.0
        for skey, xa, xs, g, h in self.stage_basis(state, graph):
            coeffs, _ = _forward(self.weights, xa, xs)
            c = float(g @ coeffs) + h
            per_stage[skey] = c
            total += c
        return total, per_stage


def _select_representatives(candidates: list[LoopNestState],
                            config: SearchConfig, pass_index: int,
                            phase_seed: int, validate) -> tuple[list, list]:
    """Sampled valid representatives plus the prune reports of rejects.

    Pruning runs only on drawn representatives; when one is rejected the
    bucket's RNG stream draws a replacement, so each bucket still yields up
    to max(1, floor(log2 B)) *valid* states without validating the whole
    candidate pool.
    """
    from .sampling import representatives_per_bucket

    reports: list = []
    if not config.sampling:
        kept = []
        for c in candidates:
            rep = validate(c)
            if rep is None:
                kept.append(c)
            else:
                reports.append(rep)
        return kept, reports
    buckets = bucket_candidates(candidates, depth=pass_index, rng_seed=phase_seed)
    kept = []
    for h in sorted(buckets.buckets):
        bucket = buckets.buckets[h]
        quota = representatives_per_bucket(len(bucket))
        stream = np.random.default_rng((phase_seed, h))
        taken = 0
        for i in stream.permutation(len(bucket)):
            rep = validate(bucket[int(i)])
            if rep is None:
                kept.append(bucket[int(i)])
                taken += 1
                if taken == quota:
                    break
            else:
                reports.append(rep)
    return kept, reports


def _cut(candidates: list[LoopNestState], evaluator: CostEvaluator,
         graph: PipelineGraph, config: SearchConfig, pass_index: int,
         memo: BadHashMemo, phase_seed: int, validate) -> tuple[list, list]:
    """Sample, prune, cost, penalize, and keep the best beam_size states."""
    if not candidates:
        return [], []
    reps, reports = _select_representatives(candidates, config, pass_index,
                                            phase_seed, validate)
    if not reps:
        return [], reports
    queue: list = []
    costed = []
    for s in reps:
        total, _ = evaluator.cost(s, graph)
        s = s.with_cost(total)
        costed.append(s)
        apply_pass_penalty(queue, s, pass_index, memo, config.penalty_factor)
    if config.explore_temperature > 0:
        # Stochastic cut: rank by log-cost plus Gumbel noise, so a sample's
        # seed picks among good structures with cost-weighted probability
        # instead of always taking the argmin.  Temperature 0 is exact sort.
        rng = np.random.default_rng((phase_seed, 0x657870))
        noise = rng.gumbel(size=len(queue)) * config.explore_temperature
        queue = [(math.log(max(c, 1e-300)) + n, s)
                 for (c, s), n in zip(queue, noise)]
    queue.sort(key=lambda e: e[0])
    # Flag the bottom half of this phase's evaluated structures at every
    # depth a later pass may bucket at.
    if len(costed) > 1:
        by_cost = sorted(costed, key=lambda s: s.cost)
        for s in by_cost[len(by_cost) // 2:]:
            for depth in range(1, config.num_passes + 1):
                memo.record(depth, s.structural_hash(depth))
    return [s for _, s in queue[:config.beam_size]], reports


def _phase1_candidates(state: LoopNestState, func: str, graph: PipelineGraph,
                       config: SearchConfig) -> list[LoopNestState]:
    out = []
    options = enumerate_compute_locations(state, func, graph)
    if config.restrict_placements is not None:
        kept = [d for d in options if d.kind in config.restrict_placements]
        options = kept or [d for d in options if d.kind == "compute_root"]
    node = graph.func(func)
    for d in options:
        if d.kind == "fuse_at_block":
            # Block-level producers are serial tiled immediately.
            for serial in enumerate_serial_tilings(node.extents, config=config.tiling):
                out.append(apply_decision(
                    state, func, replace(d, serial=serial)))
        else:
            out.append(apply_decision(state, func, d))
    return out


def _phase2_candidates(state: LoopNestState, func: str, graph: PipelineGraph,
                       config: SearchConfig) -> list[LoopNestState]:
    node = graph.func(func)
    out = []
    for serial in enumerate_serial_tilings(node.extents, config=config.tiling):
        post = tuple(math.ceil(e / s) for e, s in zip(node.extents, serial))
        for thread in enumerate_thread_tilings(post, config=config.tiling):
            d = Decision("compute_root", serial=serial, thread=thread)
            try:
                out.append(apply_decision(state, func, d))
            except ScheduleError:
                continue
    return out


def _run_pass(graph, params, config, evaluator, memo, pass_index,
              ) -> tuple[list[LoopNestState], list]:
    frozen = dict(config.frozen_decisions)
    state0 = initial_state(graph)
    if frozen:
        state0 = replace(state0, frozen=frozenset(frozen))
    beam = [state0]
    last_reports: list = []
    funcs = state0.schedulable_funcs()
    phase = 0

    def validate(c):
        return prune(c, graph, params, config.thresholds)

    def advance(candidates):
        nonlocal beam, last_reports
        beam, reports = _cut(
            candidates, evaluator, graph, config, pass_index, memo,
            phase_seed=config.seed * 10007 + pass_index * 101 + phase,
            validate=validate)
        if not beam:
            last_reports = reports

    for func in funcs:
        if not beam:
            break
        if func in frozen:
            beam = [apply_decision(s, func, frozen[func]) for s in beam]
            continue
        candidates = []
        for s in beam:
            candidates.extend(_phase1_candidates(s, func, graph, config))
        phase += 1
        advance(candidates)

    # Phase 2: deferred 3-level tiling of root funcs, scheduling order.
    for func in funcs:
        if not beam:
            break
        if func in frozen:
            continue
        if not any(s.placement_kind(func) == "compute_root"
                   and s.decision(func).serial is None for s in beam):
            continue
        candidates = []
        for s in beam:
            d = s.decision(func)
            if d.kind == "compute_root" and d.serial is None:
                candidates.extend(_phase2_candidates(s, func, graph, config))
            else:
                candidates.append(s)
        phase += 1
        advance(candidates)

    return beam, last_reports


def schedule_pipeline(graph: PipelineGraph, params: MachineParams,
                      config: SearchConfig, cost_model: CostModelWeights,
                      ) -> list[LoopNestState]:
    """Beam search; returns the final beam sorted by predicted cost.

    Every returned state is fully scheduled and carries its predicted cost.
    """
    evaluator = cost_model if isinstance(cost_model, CostEvaluator) \
        else CostEvaluator(cost_model, params)
    memo = BadHashMemo()
    beam: list[LoopNestState] = []
    reports: list = []
    for pass_index in range(1, config.num_passes + 1):
        beam, reports = _run_pass(graph, params, config, evaluator, memo, pass_index)
    if not beam:
        detail = "; ".join(f"{r.reason}: {r.detail}" for r in reports[:5])
        raise SearchError(f"beam is empty after pruning ({detail or 'no candidates'})")
    final = []
    for s in beam:
        total, _ = evaluator.cost(s, graph)
        final.append(s.with_cost(total))
    final.sort(key=lambda s: s.cost)
    return final


def freeze_prepass(graph: PipelineGraph, params: MachineParams,
                   config: SearchConfig, cost_model: CostModelWeights,
                   ) -> tuple[frozenset, tuple[tuple[str, Decision], ...]]:
    """Cheap pre-search that decides which funcs the main search may vary.

    Placements are restricted to compute_root and inline; the best result's
    per-func cost sums rank the funcs, and all but the max(1, floor(log2 N))
    most expensive are frozen at their pre-pass decisions.
    """
    pre_cfg = replace(config, restrict_placements=("compute_root", "inline"),
                      freeze_enabled=False, frozen_decisions=())
    evaluator = cost_model if isinstance(cost_model, CostEvaluator) \
        else CostEvaluator(cost_model, params)
    ranked = schedule_pipeline(graph, params, pre_cfg, evaluator)
    best = ranked[0]
    _, per_stage = evaluator.cost(best, graph)
    per_func: dict[str, float] = {}
    for (func, _si), c in per_stage.items():
        per_func[func] = per_func.get(func, 0.0) + c
    funcs = best.schedulable_funcs()
    n_free = max(1, int(math.floor(math.log2(len(funcs))))) if funcs else 0
    by_cost = sorted(funcs, key=lambda f: (-per_func.get(f, 0.0), f))
    free = set(by_cost[:n_free])
    frozen = tuple((f, best.decision(f)) for f in funcs if f not in free)
    return frozenset(f for f, _ in frozen), frozen


def schedule_with_freezing(graph: PipelineGraph, params: MachineParams,
                           config: SearchConfig, cost_model: CostModelWeights,
                           ) -> list[LoopNestState]:
    """Full entry point: optional freeze pre-pass, then the main search."""
    evaluator = cost_model if isinstance(cost_model, CostEvaluator) \
        else CostEvaluator(cost_model, params)
    if config.freeze_enabled:
        _, frozen = freeze_prepass(graph, params, config, evaluator)
        config = replace(config, frozen_decisions=frozen)
    return schedule_pipeline(graph, params, config, evaluator)


def exhaustive_schedules(graph: PipelineGraph, params: MachineParams,
                         config: SearchConfig) -> list[LoopNestState]:
    """Every fully scheduled state reachable with the same options and
    pruning the beam search uses.  Test oracle; exponential, small inputs only."""
    results: list[LoopNestState] = []

    def phase2(state, funcs):
        if not funcs:
            if prune(state, graph, params, config.thresholds) is None:
                results.append(state)
            return
        func, rest = funcs[0], funcs[1:]
        d = state.decision(func)
        if d.kind == "compute_root" and d.serial is None:
            for nxt in _phase2_candidates(state, func, graph, config):
                phase2(nxt, rest)
        else:
            phase2(state, rest)

    def phase1(state, funcs):
        if not funcs:
            phase2(state, state.schedulable_funcs())
            return
        func, rest = funcs[0], funcs[1:]
        for nxt in _phase1_candidates(state, func, graph, config):
            if prune(nxt, graph, params, config.thresholds) is not None:
                continue
            phase1(nxt, rest)

    s0 = initial_state(graph)
    phase1(s0, s0.schedulable_funcs())
    return results
