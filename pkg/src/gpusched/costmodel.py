"""Hybrid cost model: learned coefficients inside a closed-form stage cost.

A small two-tower network maps (algorithm features, log-compressed schedule
features) to 30 positive coefficients per stage; the closed-form stage cost
combines those coefficients with the featurization.  The stage cost is
linear in the coefficients, which the trainer exploits: each stage reduces
to a basis pair (g, h) with cost = g . c + h, so backpropagation only has
to pass through the network.

Training is plain SGD with momentum on squared error between log predicted
cost and log measured runtime, implemented directly in numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .featurize import ALGO_DIM, SCHED_DIM, AlgorithmFeatures, ScheduleFeatures

WEIGHTS_VERSION = 1
NUM_COEFFICIENTS = 30
EMBED_DIM = 32
HIDDEN_DIM = 64
_EPS = 1e-8


# ---------------------------------------------------------------------------
# Closed-form stage cost
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostBreakdown:
    compute: float
    load: float
    store: float
    malloc: float
    parallelism: float
    working_set: float

    @property
    def total(self) -> float:
        return (self.compute + self.store + self.load + self.malloc
                + self.parallelism + self.working_set)


def stage_cost(f: ScheduleFeatures, c) -> CostBreakdown:
    """Closed-form per-stage cost for one coefficient vector.

    Transcribed term by term; transaction counts enter the load cost
    unweighted, scaled by inverse efficiency for non-inlined stages.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (NUM_COEFFICIENTS,):
        raise ValueError(f"expected {NUM_COEFFICIENTS} coefficients, got {c.shape}")
    if np.any(c <= 0):
        raise ValueError("coefficients must be strictly positive")
    inlined = f.inlined_calls > 0

    compute_cost = f.num_scalars * (c[3] if inlined else c[1])
    num_threads = f.num_blocks * f.num_threads_per_block
    points_computed = num_threads * f.points_computed_per_thread
    compute_cost += points_computed * (c[4] if inlined else c[19])
    idle_core_wastage = (math.ceil(f.num_tasks / f.num_cores)
                         / max(1.0, f.tasks_per_core))
    compute_cost *= idle_core_wastage
    if not inlined:
        compute_cost /= 1.0 - f.idle_lane_wastage

    load_cost = f.num_realizations * (
        c[5] * f.unique_global_lines_read_per_realization
        + c[16] * f.unique_shared_lines_read_per_realization
        + c[8] * f.unique_register_lines_read_per_realization
        + c[6] * f.unique_global_bytes_read_per_realization
        + c[20] * f.unique_shared_bytes_read_per_realization
        + c[7] * f.unique_register_bytes_read_per_realization
        + c[18] * f.unique_global_lines_read_per_thread
        + c[17] * f.unique_shared_lines_read_per_thread
        + c[2] * f.unique_register_lines_read_per_thread
        + c[13] * f.unique_global_bytes_read_per_thread
        + c[11] * f.unique_shared_bytes_read_per_thread
        + c[0] * f.unique_register_bytes_read_per_thread) \
        + c[10] * f.num_scalars * f.unique_bytes_read_per_point \
        + c[12] * f.num_scalars * f.unique_lines_read_per_point \
        + c[14] * f.num_tasks * f.unique_bytes_read_per_task \
        + c[15] * f.num_tasks * f.unique_lines_read_per_task

    global_mem_load_cost = f.num_blocks * f.num_global_mem_loads_per_block
    if not inlined:
        global_mem_load_cost *= 1.0 / f.global_mem_load_efficiency
    shared_mem_load_cost = f.num_blocks * f.num_shared_mem_loads_per_block
    if not inlined:
        shared_mem_load_cost *= 1.0 / f.shared_mem_load_efficiency
    load_cost += global_mem_load_cost + shared_mem_load_cost

    shared_mem_store_cost = c[29] * f.num_blocks * f.num_shared_mem_stores_per_block
    global_mem_store_cost = c[21] * f.num_blocks * f.num_global_mem_stores_per_block
    if not inlined:
        global_mem_store_cost *= 1.0 / f.global_mem_store_efficiency
    store_cost = shared_mem_store_cost + global_mem_store_cost
    if f.inner_parallelism > 1:
        store_cost += c[22] * f.num_scalars / max(1.0, f.global_innermost_bytes_at_task)

    cost_of_malloc = c[24] * f.num_realizations
    cost_of_parallel_launches = f.num_productions * (
        c[25] if f.inner_parallelism > 1 else 0.0)
    cost_of_parallel_tasks = f.num_productions * (f.inner_parallelism - 1) * c[26]
    cost_of_parallelism = cost_of_parallel_tasks + cost_of_parallel_launches
    cost_of_working_set = f.working_set * c[9]

    return CostBreakdown(compute=compute_cost, load=load_cost, store=store_cost,
                         malloc=cost_of_malloc, parallelism=cost_of_parallelism,
                         working_set=cost_of_working_set)


def stage_cost_basis(f: ScheduleFeatures) -> tuple[np.ndarray, float]:
    """(g, h) with stage total cost = g . c + h for any coefficient vector c.

    The stage cost is linear in the coefficients; h collects the unweighted
    transaction terms.  This is what training and fast re-ranking use.
    """
    g = np.zeros(NUM_COEFFICIENTS)
    h = 0.0
    inlined = f.inlined_calls > 0

    idle_core_wastage = (math.ceil(f.num_tasks / f.num_cores)
                         / max(1.0, f.tasks_per_core))
    scale = idle_core_wastage
    if not inlined:
        scale /= 1.0 - f.idle_lane_wastage
    points_computed = (f.num_blocks * f.num_threads_per_block
                       * f.points_computed_per_thread)
    g[3 if inlined else 1] += f.num_scalars * scale
    g[4 if inlined else 19] += points_computed * scale

    r = f.num_realizations
    g[5] += r * f.unique_global_lines_read_per_realization
    g[16] += r * f.unique_shared_lines_read_per_realization
    g[8] += r * f.unique_register_lines_read_per_realization
    g[6] += r * f.unique_global_bytes_read_per_realization
    g[20] += r * f.unique_shared_bytes_read_per_realization
    g[7] += r * f.unique_register_bytes_read_per_realization
    g[18] += r * f.unique_global_lines_read_per_thread
    g[17] += r * f.unique_shared_lines_read_per_thread
    g[2] += r * f.unique_register_lines_read_per_thread
    g[13] += r * f.unique_global_bytes_read_per_thread
    g[11] += r * f.unique_shared_bytes_read_per_thread
    g[0] += r * f.unique_register_bytes_read_per_thread
    g[10] += f.num_scalars * f.unique_bytes_read_per_point
    g[12] += f.num_scalars * f.unique_lines_read_per_point
    g[14] += f.num_tasks * f.unique_bytes_read_per_task
    g[15] += f.num_tasks * f.unique_lines_read_per_task

    gml = f.num_blocks * f.num_global_mem_loads_per_block
    sml = f.num_blocks * f.num_shared_mem_loads_per_block
    if not inlined:
        gml /= f.global_mem_load_efficiency
        sml /= f.shared_mem_load_efficiency
    h += gml + sml

    g[29] += f.num_blocks * f.num_shared_mem_stores_per_block
    gms = f.num_blocks * f.num_global_mem_stores_per_block
    if not inlined:
        gms /= f.global_mem_store_efficiency
    g[21] += gms
    if f.inner_parallelism > 1:
        g[22] += f.num_scalars / max(1.0, f.global_innermost_bytes_at_task)

    g[24] += f.num_realizations
    if f.inner_parallelism > 1:
        g[25] += f.num_productions
    g[26] += f.num_productions * (f.inner_parallelism - 1)
    g[9] += f.working_set
    return g, h


# ---------------------------------------------------------------------------
# Two-tower coefficient network
# ---------------------------------------------------------------------------

_TENSOR_NAMES = ("algo_w", "algo_b", "sched_w", "sched_b",
                 "head_w", "head_b", "out_w", "out_b")


def _tensor_shapes(embed_dim: int, hidden_dim: int) -> dict[str, tuple[int, ...]]:
    return {
        "algo_w": (ALGO_DIM, embed_dim), "algo_b": (embed_dim,),
        "sched_w": (SCHED_DIM, embed_dim), "sched_b": (embed_dim,),
        "head_w": (2 * embed_dim, hidden_dim), "head_b": (hidden_dim,),
        "out_w": (hidden_dim, NUM_COEFFICIENTS), "out_b": (NUM_COEFFICIENTS,),
    }


@dataclass
class CostModelWeights:
    tensors: dict[str, np.ndarray]
    version: int = WEIGHTS_VERSION

    def __post_init__(self):
        try:
            embed = self.tensors["algo_b"].shape[0]
            hidden = self.tensors["head_b"].shape[0]
        except KeyError as e:
            raise ValueError(f"missing weight tensor {e}")
        for name, shape in _tensor_shapes(embed, hidden).items():
            t = self.tensors.get(name)
            if t is None or t.shape != shape:
                raise ValueError(f"weight tensor {name} must have shape {shape}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"weight tensor {name} contains non-finite values")

    @property
    def embed_dim(self) -> int:
        return self.tensors["algo_b"].shape[0]

    def copy(self) -> "CostModelWeights":
        return CostModelWeights({k: v.copy() for k, v in self.tensors.items()},
                                version=self.version)


def init_weights(seed: int = 0, embed_dim: int = EMBED_DIM,
                 hidden_dim: int = HIDDEN_DIM) -> CostModelWeights:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _tensor_shapes(embed_dim, hidden_dim).items():
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = shape[0]
            tensors[name] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
    # Bias the output toward small positive coefficients at init.
    tensors["out_b"] += -2.0
    return CostModelWeights(tensors)


def save_weights(weights: CostModelWeights, path):
    lines = [f"gpusched-cost-model {weights.version}"]
    for name in _TENSOR_NAMES:
        t = weights.tensors[name]
        lines.append(f"tensor {name} {' '.join(str(d) for d in t.shape)}")
        lines.append(" ".join(f"{v:.17g}" for v in t.ravel()))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_weights(path) -> CostModelWeights:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    magic = lines[0].split()
    if magic[:1] != ["gpusched-cost-model"]:
        raise ValueError(f"{path}: not a cost model weights file")
    version = int(magic[1])
    if version != WEIGHTS_VERSION:
        raise ValueError(f"{path}: weights version {version}, expected {WEIGHTS_VERSION}")
    tensors = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] != "tensor":
            raise ValueError(f"{path}: expected tensor header, got {lines[i]!r}")
        name = parts[1]
        shape = tuple(int(d) for d in parts[2:])
        vals = np.array([float(v) for v in lines[i + 1].split()])
        tensors[name] = vals.reshape(shape)
        i += 2
    return CostModelWeights(tensors, version=version)


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _forward(weights: CostModelWeights, algo_vec, sched_vec):
    t = weights.tensors
    xa = np.asarray(algo_vec, dtype=np.float64)
    xs = np.log1p(np.asarray(sched_vec, dtype=np.float64))
    if xa.shape != (ALGO_DIM,) or xs.shape != (SCHED_DIM,):
        raise ValueError(
            f"feature dims {xa.shape}/{xs.shape} do not match weights version "
            f"{weights.version} ({ALGO_DIM}/{SCHED_DIM})")
    za = xa @ t["algo_w"] + t["algo_b"]
    ea = np.maximum(za, 0.0)
    zs = xs @ t["sched_w"] + t["sched_b"]
    es = np.maximum(zs, 0.0)
    h1 = np.concatenate([ea, es])
    zh = h1 @ t["head_w"] + t["head_b"]
    eh = np.maximum(zh, 0.0)
    zo = eh @ t["out_w"] + t["out_b"]
    coeffs = _softplus(zo) + _EPS
    cache = (xa, xs, za, zs, h1, zh, eh, zo)
    return coeffs, cache


def _backward(weights: CostModelWeights, cache, dcoeffs, grads: dict):
    t = weights.tensors
    xa, xs, za, zs, h1, zh, eh, zo = cache
    dzo = dcoeffs * np.exp(-np.logaddexp(0.0, -zo))  # softplus' = sigmoid, stable
    grads["out_w"] += np.outer(eh, dzo)
    grads["out_b"] += dzo
    deh = dzo @ t["out_w"].T
    dzh = deh * (zh > 0)
    grads["head_w"] += np.outer(h1, dzh)
    grads["head_b"] += dzh
    dh1 = dzh @ t["head_w"].T
    embed = za.shape[0]
    dza = dh1[:embed] * (za > 0)
    dzs = dh1[embed:] * (zs > 0)
    grads["algo_w"] += np.outer(xa, dza)
    grads["algo_b"] += dza
    grads["sched_w"] += np.outer(xs, dzs)
    grads["sched_b"] += dzs


def predict_coefficients(algo_features, schedule_features,
                         weights: CostModelWeights) -> np.ndarray:
    """Positive coefficient vector for one stage (pure and deterministic)."""
    if isinstance(algo_features, AlgorithmFeatures):
        algo_features = algo_features.to_vector()
    if isinstance(schedule_features, ScheduleFeatures):
        schedule_features = schedule_features.to_vector()
    coeffs, _ = _forward(weights, algo_features, schedule_features)
    return coeffs


def pipeline_cost(feats: dict, weights: CostModelWeights,
                  ) -> tuple[float, dict[tuple[str, int], CostBreakdown]]:
    """Total predicted cost (sum over stages) plus per-stage breakdowns."""
    breakdown = {}
    total = 0.0
    for key, f in feats.items():
        c = predict_coefficients(f.algorithm.to_vector(), f.to_vector(), weights)
        b = stage_cost(f, c)
        breakdown[key] = b
        total += b.total
    return total, breakdown


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainingSample:
    """One benchmarked schedule: per-stage feature vectors plus runtime."""

    stages: list  # (algo_vec, sched_vec, g, h) per stage
    runtime: float
    pipeline_id: str = ""
    schedule_id: str = ""

    def __post_init__(self):
        if self.runtime <= 0:
            raise ValueError("measured runtime must be positive")


def make_training_sample(feats: dict, runtime: float, pipeline_id: str = "",
                         schedule_id: str = "") -> TrainingSample:
    stages = []
    for f in feats.values():
        g, h = stage_cost_basis(f)
        stages.append((f.algorithm.to_vector(), f.to_vector(), g, h))
    return TrainingSample(stages=stages, runtime=runtime,
                          pipeline_id=pipeline_id, schedule_id=schedule_id)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 100
    seed: int = 0


@dataclass
class TrainResult:
    weights: CostModelWeights
    final_loss: float
    loss_history: list[float] = field(default_factory=list)


def predicted_total(weights: CostModelWeights, sample: TrainingSample) -> float:
    total = 0.0
    for xa, xs, g, h in sample.stages:
        coeffs, _ = _forward(weights, xa, xs)
        total += float(g @ coeffs) + h
    return total


def train(dataset: list[TrainingSample], hyper: TrainConfig | None = None,
          init: CostModelWeights | None = None) -> TrainResult:
    """SGD with momentum on squared log-cost vs log-runtime error.

    Gradients flow through the network only; the closed-form cost
    contributes its coefficient basis g directly.
    """
    if len(dataset) < 2 or len({s.runtime for s in dataset}) < 2:
        raise ValueError("training needs >= 2 samples with >= 2 distinct runtimes")
    hyper = hyper or TrainConfig()
    weights = (init or init_weights(hyper.seed)).copy()
    velocity = {k: np.zeros_like(v) for k, v in weights.tensors.items()}
    rng = np.random.default_rng(hyper.seed)
    history = []

    for _epoch in range(hyper.epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for i in order:
            sample = dataset[i]
            per_stage = []
            total = 0.0
            for xa, xs, g, h in sample.stages:
                coeffs, cache = _forward(weights, xa, xs)
                per_stage.append((coeffs, cache, g))
                total += float(g @ coeffs) + h
            if not math.isfinite(total) or total <= 0:
                raise ValueError(
                    f"non-finite or non-positive predicted cost for sample "
                    f"{sample.pipeline_id}/{sample.schedule_id}")
            err = math.log(total) - math.log(sample.runtime)
            epoch_loss += err * err
            grads = {k: np.zeros_like(v) for k, v in weights.tensors.items()}
            dtotal = 2.0 * err / total
            for coeffs, cache, g in per_stage:
                _backward(weights, cache, dtotal * g, grads)
            for k in weights.tensors:
                velocity[k] = hyper.momentum * velocity[k] - hyper.learning_rate * grads[k]
                weights.tensors[k] += velocity[k]
        history.append(epoch_loss / len(dataset))

    return TrainResult(weights=weights, final_loss=history[-1], loss_history=history)
