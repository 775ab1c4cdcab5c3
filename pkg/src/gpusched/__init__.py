"""GPU autoscheduler for multi-stage array pipelines.

Enumerates fusion and tiling schedules for a pipeline of array stages,
samples the space hierarchically by loop-nest structure, and ranks
candidates with a featurization-driven hybrid cost model.
"""

from .pipeline import (AccessPattern, FuncNode, PipelineError, PipelineGraph,
                       StageDef, load_pipeline, parse_pipeline)
from .machine import (LimitViolation, MachineParams, OracleResult,
                      simulate_runtime, validate_limits)
from .loopnest import (Decision, LoopNestState, LoopNode, ScheduleError,
                       apply_decision, initial_state, lower, pretty_print,
                       replay_schedule, schedule_dump, structural_hash)
from .resolve import ConcreteSchedule, resolve
from .featurize import (AlgorithmFeatures, FEATURE_ORDER, ScheduleFeatures,
                        count_memory_transactions, expr_branching, featurize)
from .pipeline import builtin_pipeline
from .options import (Thresholds, TilingConfig, enumerate_compute_locations,
                      enumerate_tilings, prune)
from .sampling import (bucket_candidates, representatives_per_bucket,
                       sample_representatives)
from .costmodel import (CostModelWeights, TrainConfig, init_weights,
                        load_weights, pipeline_cost, predict_coefficients,
                        save_weights, stage_cost, train)
from .search import (CostEvaluator, SearchConfig, SearchError,
                     exhaustive_schedules, schedule_pipeline,
                     schedule_with_freezing)
from .driver import (AutotuneResult, RunConfig, SampleRecord, generate_batch,
                     post_compile_filter, run_autotune, run_one_shot,
                     run_top_k)

__version__ = "0.1.0"

__all__ = [
    "AccessPattern", "AlgorithmFeatures", "AutotuneResult",
    "ConcreteSchedule", "CostEvaluator", "CostModelWeights", "Decision",
    "FEATURE_ORDER", "FuncNode", "LimitViolation", "LoopNestState", "LoopNode",
    "MachineParams", "OracleResult", "PipelineError", "PipelineGraph",
    "RunConfig", "SampleRecord", "ScheduleError", "ScheduleFeatures",
    "SearchConfig", "SearchError", "StageDef", "Thresholds", "TilingConfig",
    "TrainConfig", "apply_decision", "bucket_candidates", "builtin_pipeline",
    "count_memory_transactions", "enumerate_compute_locations",
    "enumerate_tilings", "exhaustive_schedules", "expr_branching",
    "featurize", "generate_batch", "init_weights", "initial_state",
    "load_pipeline", "load_weights", "lower", "parse_pipeline",
    "pipeline_cost", "post_compile_filter", "predict_coefficients",
    "pretty_print", "prune", "replay_schedule", "representatives_per_bucket",
    "resolve", "run_autotune", "run_one_shot", "run_top_k",
    "sample_representatives", "save_weights", "schedule_dump",
    "schedule_pipeline", "schedule_with_freezing", "simulate_runtime",
    "stage_cost", "structural_hash", "train", "validate_limits",
]
