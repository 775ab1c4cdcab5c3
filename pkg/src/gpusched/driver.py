"""Operating modes: One Shot, Top-k, and Autotune.

One Shot generates a batch of schedules (one beam-search sample plus many
greedy samples differing only by seed) and picks the best by predicted cost
alone; spilling schedules are filtered out first.  Top-k additionally
benchmarks the k best predictions and keeps the fastest.  Autotune starts
from random cost-model weights and iterates generate / benchmark / retrain,
returning the fastest schedule seen.

Benchmarking means running the in-repo machine oracle; there is no GPU
execution anywhere in this package.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

from .costmodel import (CostModelWeights, TrainConfig, TrainingSample,
                        init_weights, train)
from .loopnest import LoopNestState, schedule_dump
from .machine import MachineParams, OracleResult, simulate_runtime
from .pipeline import PipelineGraph
from .search import CostEvaluator, SearchConfig, schedule_with_freezing


@dataclass(frozen=True)
class RunConfig:
    mode: str = "one_shot"              # one_shot | top_k | autotune
    samples_per_batch: int = 80
    beam_samples: int = 1
    greedy_samples: int = 79
    k: int = 5
    iterations: int = 20
    seed: int = 0
    beam_size: int = 32
    num_passes: int = 5
    freeze_enabled: bool = False
    explore_temperature: float = 0.25   # stochastic-cut noise for greedy samples
    search: SearchConfig | None = None  # overrides tiling/threshold knobs
    output_dir: str | None = None

    def __post_init__(self):
        if self.mode not in ("one_shot", "top_k", "autotune"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.beam_samples + self.greedy_samples != self.samples_per_batch:
            raise ValueError("beam_samples + greedy_samples must equal samples_per_batch")


@dataclass
class SampleRecord:
    state: LoopNestState = field(repr=False)
    predicted_cost: float = 0.0
    oracle: OracleResult | None = None
    spilled: bool = False
    spill_bytes: int = 0
    seed: int = 0
    batch_index: int = 0
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps({
            "schedule": schedule_dump(self.state),
            "predicted_cost": self.predicted_cost,
            "oracle_runtime": self.oracle.runtime if self.oracle else None,
            "spilled": self.spilled,
            "spill_bytes": self.spill_bytes,
            "seed": self.seed,
            "batch_index": self.batch_index,
            "error": self.error,
        }, indent=1)


def post_compile_filter(records: list[SampleRecord]) -> list[SampleRecord]:
    """Drop schedules that spill registers.

    If every record spills, keep those whose spill volume is within 50% of
    the least-spilling record instead of returning nothing.
    """
    clean = [r for r in records if not r.spilled]
    if clean:
        return clean
    if not records:
        return []
    least = min(r.spill_bytes for r in records)
    return [r for r in records if r.spill_bytes <= 1.5 * least]


def _search_config(config: RunConfig, beam_size: int, passes: int,
                   seed: int, temperature: float = 0.0) -> SearchConfig:
    base = config.search or SearchConfig()
    return replace(base, beam_size=beam_size, num_passes=passes, seed=seed,
                   freeze_enabled=config.freeze_enabled,
                   explore_temperature=temperature)


def generate_batch(graph: PipelineGraph, params: MachineParams,
                   config: RunConfig, weights: CostModelWeights,
                   batch_index: int = 0,
                   evaluator: CostEvaluator | None = None) -> list[SampleRecord]:
    """One batch: beam_samples beam searches + greedy_samples greedy descents.

    Greedy samples differ only by seed, which varies both their hierarchical
    sampling draws and their stochastic beam cuts (explore_temperature);
    beam samples run deterministic cuts and exploit the model.  Spill flags
    come from the oracle's spill predicate (no timing is recorded here).
    """
    evaluator = evaluator or CostEvaluator(weights, params)
    evaluator.weights = weights
    records: list[SampleRecord] = []
    base_seed = config.seed + 7919 * batch_index
    specs = [(config.beam_size, config.num_passes, 0.0)] * config.beam_samples \
        + [(1, 1, config.explore_temperature)] * config.greedy_samples
    for i, (bs, passes, temp) in enumerate(specs):
        seed = base_seed + i
        cfg = _search_config(config, bs, passes, seed, temperature=temp)
        ranked = schedule_with_freezing(graph, params, cfg, evaluator)
        best = ranked[0]
        spill = simulate_runtime(best, graph, params)
        records.append(SampleRecord(
            state=best, predicted_cost=best.cost,
            spilled=spill.spilled_registers, spill_bytes=spill.spill_bytes,
            seed=seed, batch_index=batch_index))
    return records


def _persist(records: list[SampleRecord], config: RunConfig,
             best: SampleRecord | None):
    if config.output_dir is None:
        return
    for r in records:
        d = os.path.join(config.output_dir, f"batch_{r.batch_index:03d}")
        os.makedirs(d, exist_ok=True)
        with open(os.path.join(d, f"sample_{r.seed}.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(r.to_json())
    if best is not None:
        with open(os.path.join(config.output_dir, "best.schedule"), "w",
                  encoding="utf-8") as fh:
            fh.write(schedule_dump(best.state))


def run_one_shot(graph: PipelineGraph, params: MachineParams, config: RunConfig,
                 weights: CostModelWeights) -> tuple[SampleRecord, list[SampleRecord]]:
    """Pick the best schedule by predicted cost alone (no benchmarking)."""
    records = generate_batch(graph, params, config, weights)
    survivors = post_compile_filter(records)
    if not survivors:
        raise RuntimeError("every generated sample was filtered out")
    best = min(survivors, key=lambda r: r.predicted_cost)
    _persist(records, config, best)
    return best, records


def run_top_k(graph: PipelineGraph, params: MachineParams, config: RunConfig,
              weights: CostModelWeights,
              oracle=simulate_runtime) -> tuple[SampleRecord, list[SampleRecord]]:
    """Benchmark the k best predictions and return the fastest."""
    records = generate_batch(graph, params, config, weights)
    survivors = post_compile_filter(records)
    if not survivors:
        raise RuntimeError("every generated sample was filtered out")
    survivors.sort(key=lambda r: r.predicted_cost)
    top = survivors[:config.k]
    for r in top:
        r.oracle = oracle(r.state, graph, params)
    best = min(top, key=lambda r: r.oracle.runtime)
    _persist(records, config, best)
    return best, records


@dataclass
class AutotuneResult:
    best: SampleRecord
    records: list[SampleRecord]
    weights: CostModelWeights
    weights_trajectory: list[CostModelWeights]
    best_runtime_per_iteration: list[float]


def run_autotune(graph: PipelineGraph, params: MachineParams, config: RunConfig,
                 oracle=simulate_runtime,
                 train_config: TrainConfig | None = None) -> AutotuneResult:
    """Iterate generate -> benchmark -> retrain from random initial weights.

    Oracle failures on individual samples are recorded and skipped.  The
    returned best is the fastest benchmarked sample across all iterations.
    """
    weights = init_weights(config.seed)
    evaluator = CostEvaluator(weights, params)
    trajectory = [weights.copy()]
    dataset: list[TrainingSample] = []
    all_records: list[SampleRecord] = []
    per_iter_best: list[float] = []
    tc = train_config or TrainConfig(seed=config.seed)

    for it in range(config.iterations):
        records = generate_batch(graph, params, config, weights,
                                 batch_index=it, evaluator=evaluator)
        iter_best = float("inf")
        for r in records:
            try:
                r.oracle = oracle(r.state, graph, params)
            except Exception as e:  # keep tuning even if one sample fails
                r.error = str(e)
                continue
            iter_best = min(iter_best, r.oracle.runtime)
            stages = [(xa, xs, g, h) for _k, xa, xs, g, h
                      in evaluator.stage_basis(r.state, graph)]
            dataset.append(TrainingSample(
                stages=stages, runtime=r.oracle.runtime,
                pipeline_id=graph.name, schedule_id=f"{it}/{r.seed}"))
        all_records.extend(records)
        per_iter_best.append(iter_best)
        if len(dataset) >= 2 and len({s.runtime for s in dataset}) >= 2:
            result = train(dataset, tc, init=weights)
            weights = result.weights
            evaluator.weights = weights
            trajectory.append(weights.copy())

    benchmarked = [r for r in all_records if r.oracle is not None]
    if not benchmarked:
        raise RuntimeError("no sample was successfully benchmarked")
    best = min(benchmarked, key=lambda r: r.oracle.runtime)
    _persist(all_records, config, best)
    return AutotuneResult(best=best, records=all_records, weights=weights,
                          weights_trajectory=trajectory,
                          best_runtime_per_iteration=per_iter_best)
