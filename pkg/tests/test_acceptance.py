"""End-to-end acceptance checks.

Each test exercises one headline property of the scheduler against an
independent oracle (closed-form count, brute-force enumeration, naive
interpreter, finite differences, or the machine oracle) and prints a
PASS line with the measured quantity.
"""

import math
import statistics
import time

import numpy as np
import pytest

from gpusched.costmodel import (
    NUM_COEFFICIENTS,
    TrainConfig,
    TrainingSample,
    _backward,
    _forward,
    init_weights,
    stage_cost,
)
from gpusched.driver import (
    RunConfig,
    SampleRecord,
    post_compile_filter,
    run_autotune,
    run_one_shot,
    run_top_k,
)
from gpusched.featurize import ALGO_DIM, FEATURE_ORDER, SCHED_DIM, ScheduleFeatures, featurize
from gpusched.loopnest import Decision, apply_decision, initial_state, structural_hash
from gpusched.machine import MachineParams
from gpusched.options import (
    TilingConfig,
    enumerate_compute_locations,
    enumerate_serial_tilings,
    enumerate_thread_tilings,
    enumerate_tilings,
)
from gpusched.pipeline import builtin_pipeline, parse_pipeline
from gpusched.sampling import (
    bucket_candidates,
    representatives_per_bucket,
    sample_representatives,
)
from gpusched.search import CostEvaluator, SearchConfig, exhaustive_schedules, freeze_prepass, schedule_pipeline, schedule_with_freezing

from conftest import CHAIN3_SRC, DIAMOND_SRC, OPEN_THRESHOLDS, make_chain_src
from oracles import MEMORY_FEATURES, interpret_memory_features, reference_stage_cost


def _single_func_src(extents):
    dims = ", ".join(f"d{i}={e}" for i, e in enumerate(extents))
    read = " ".join(f"dim d{i} stride 1 lo 0 hi 0" for i in range(len(extents)))
    return (f"func src dims ({dims}) bytes 4 external\n"
            f"func out dims ({dims}) bytes 4\n"
            f"stage out ops add=1\n"
            f"read out from src {read}\n"
            f"output out\n")


def _menus_with_t_choices(t):
    choices = tuple(2 ** i for i in range(t))  # 1, 2, 4, ...
    return TilingConfig(serial_powers=choices, odd_serial=(),
                        innermost_thread=choices, outer_thread=choices,
                        unroll_budget=10 ** 9)


def _all_tiled_states(graph, serial_opts, thread_opts):
    base = apply_decision(initial_state(graph), "out", Decision("compute_root"))
    return [apply_decision(base, "out",
                           Decision("compute_root", serial=s, thread=t))
            for s in serial_opts for t in thread_opts]


def test_acceptance_01_combinatorics_and_sample_bound():
    """T=4 tile choices per dim per level on a 2-dim stage enumerate to
    exactly T^(2d) options, and sampling stays within the log2 bound."""
    t0 = time.monotonic()
    d, t = 2, 4
    graph = parse_pipeline(_single_func_src((256,) * d))
    opts = enumerate_tilings((256,) * d, config=_menus_with_t_choices(t))
    n_enum = len(opts.serial_options) * len(opts.thread_options)
    assert n_enum == t ** (2 * d) == 256

    states = _all_tiled_states(graph, opts.serial_options, opts.thread_options)
    assert len(states) == n_enum
    buckets = bucket_candidates(states, depth=3, rng_seed=0)
    selected = sample_representatives(buckets)
    bound = sum(representatives_per_bucket(len(b)) for b in buckets.buckets.values())
    assert len(selected) <= bound
    elapsed = time.monotonic() - t0
    assert elapsed < 1.0
    print(f"\nACCEPTANCE 1 PASS: {n_enum} options = 4^(2*2); "
          f"{len(selected)} sampled <= {bound}; {elapsed:.2f}s")


def test_acceptance_02_sampling_scaling():
    """Selected-candidate counts grow like d*log T while enumeration grows
    like T^(2d) (log-log slopes within 20%)."""
    t0 = time.monotonic()
    xs, sel, enum = [], [], []
    for t in (2, 4, 8):
        for d in (1, 2, 3):
            cfg = _menus_with_t_choices(t)
            opts = enumerate_tilings((256,) * d, config=cfg)
            n_enum = len(opts.serial_options) * len(opts.thread_options)
            assert n_enum == t ** (2 * d)  # enumeration exactly T^(2d)
            n_sel = representatives_per_bucket(n_enum)
            if n_enum <= 4096:
                # verify the formula by actually bucketing and sampling
                graph = parse_pipeline(_single_func_src((256,) * d))
                states = _all_tiled_states(graph, opts.serial_options,
                                           opts.thread_options)
                buckets = bucket_candidates(states, depth=3, rng_seed=0)
                assert len(buckets.buckets) == 1  # extents never hashed
                assert len(sample_representatives(buckets)) == n_sel
            xs.append(d * math.log(t))
            sel.append(n_sel)
            enum.append(n_enum)
    sel_slope = np.polyfit(np.log(xs), np.log(sel), 1)[0]
    enum_slope = np.polyfit(np.log(xs), np.log(enum), 1)[0]
    assert 0.8 <= sel_slope <= 1.2        # selected ~ d * log T
    assert enum_slope > 1.5               # enumeration grows much faster
    ratio = [e / x for e, x in zip(np.log(enum), xs)]
    assert max(ratio) == pytest.approx(min(ratio), rel=1e-9)  # log enum = 2d log T
    elapsed = time.monotonic() - t0
    assert elapsed < 10.0
    print(f"\nACCEPTANCE 2 PASS: selected slope {sel_slope:.2f} (target 1±0.2), "
          f"enum slope {enum_slope:.2f}; {elapsed:.2f}s")


def _random_schedule(graph, rng, tiling=None):
    from gpusched.options import DEFAULT_TILING
    tiling = tiling or DEFAULT_TILING
    state = initial_state(graph)
    for func in state.schedulable_funcs():
        menu = enumerate_compute_locations(state, func, graph)
        d = menu[rng.integers(len(menu))]
        if d.kind == "fuse_at_block":
            serials = enumerate_serial_tilings(graph.func(func).extents, config=tiling)
            d = Decision(d.kind, consumer=d.consumer,
                         serial=serials[rng.integers(len(serials))])
        state = apply_decision(state, func, d)
    for func in state.schedulable_funcs():
        d = state.decision(func)
        if d.kind == "compute_root" and d.serial is None:
            ext = graph.func(func).extents
            serials = enumerate_serial_tilings(ext, config=tiling)
            serial = serials[rng.integers(len(serials))]
            post = tuple(math.ceil(e / s) for e, s in zip(ext, serial))
            threads = enumerate_thread_tilings(post, config=tiling)
            thread = threads[rng.integers(len(threads))]
            state = apply_decision(state, func,
                                   Decision("compute_root", serial=serial,
                                            thread=thread))
    return state


def test_acceptance_03_hash_refinement(chain3, diamond):
    """Equal structural hash at depth d+1 implies equality at depth d over
    1000+ random pairs, and the coarse/fine split scenario is constructible."""
    t0 = time.monotonic()
    rng = np.random.default_rng(0)
    pairs = 0
    for graph in (chain3, diamond):
        pool = [_random_schedule(graph, rng) for _ in range(70)]
        for i in range(len(pool)):
            for j in range(i + 1, len(pool)):
                a, b = pool[i], pool[j]
                pairs += 1
                for depth in range(5):
                    if structural_hash(a, depth + 1) == structural_hash(b, depth + 1):
                        assert structural_hash(a, depth) == structural_hash(b, depth)
    assert pairs >= 1000

    # Two fusion targets: identical at depth 1, distinct at depth 2.
    base = initial_state(diamond)
    base = apply_decision(base, "out", Decision("compute_root"))
    base = apply_decision(base, "b",
                          Decision("fuse_at_block", consumer="out", serial=(1, 1)))
    base = apply_decision(base, "c",
                          Decision("fuse_at_block", consumer="out", serial=(1, 1)))
    s_b = apply_decision(base, "a",
                         Decision("fuse_at_block", consumer="b", serial=(1, 1)))
    s_c = apply_decision(base, "a",
                         Decision("fuse_at_block", consumer="c", serial=(1, 1)))
    assert structural_hash(s_b, 1) == structural_hash(s_c, 1)
    assert structural_hash(s_b, 2) != structural_hash(s_c, 2)
    elapsed = time.monotonic() - t0
    print(f"\nACCEPTANCE 3 PASS: {pairs} pairs, 0 refinement violations; "
          f"coarse-equal/fine-distinct pair constructed; {elapsed:.2f}s")


TINY2_SRC = """
func in dims (x=8, y=8) bytes 4 external
func f dims (x=8, y=8) bytes 4
stage f ops add=2
read f from in dim x stride 1 lo -1 hi 1 dim y stride 1 lo 0 hi 0
func g dims (x=8, y=8) bytes 4
stage g ops mul=1
read g from f dim x stride 1 lo 0 hi 0 dim y stride 1 lo -1 hi 1
output g
"""

TINY_FORK_SRC = """
func in dims (x=8, y=8) bytes 4 external
func b dims (x=8, y=8) bytes 4
stage b ops add=2
read b from in dim x stride 1 lo -1 hi 1 dim y stride 1 lo 0 hi 0
func c dims (x=8, y=8) bytes 4
stage c ops mul=2
read c from in dim x stride 1 lo 0 hi 0 dim y stride 1 lo -1 hi 1
func out dims (x=8, y=8) bytes 4
stage out ops add=1
read out from b dim x stride 1 lo 0 hi 0 dim y stride 1 lo 0 hi 0
read out from c dim x stride 1 lo 0 hi 0 dim y stride 1 lo 0 hi 0
output out
"""


def test_acceptance_04_search_matches_exhaustive(params):
    """With sampling disabled and an oversized beam, search returns exactly
    the exhaustive-enumeration cost minimum on every tiny pipeline."""
    t0 = time.monotonic()
    pipelines = [
        parse_pipeline(_single_func_src((8, 8)), name="tiny1"),
        parse_pipeline(TINY2_SRC, name="tiny2"),
        parse_pipeline(CHAIN3_SRC, name="tiny3"),
        parse_pipeline(TINY_FORK_SRC, name="tiny_fork"),
    ]
    weights = init_weights(seed=0)
    for graph in pipelines:
        assert len(initial_state(graph).schedulable_funcs()) <= 3
        assert all(e <= 8 for f in graph.funcs for e in f.extents)
        tiling = TilingConfig(serial_powers=(1, 2), odd_serial=(),
                              innermost_thread=(4, 8), outer_thread=(2, 4))
        cfg = SearchConfig(beam_size=10 ** 6, num_passes=1, sampling=False,
                           thresholds=OPEN_THRESHOLDS, tiling=tiling)
        evaluator = CostEvaluator(weights, params)
        beam = schedule_pipeline(graph, params, cfg, evaluator)
        space = exhaustive_schedules(graph, params, cfg)
        best = min(evaluator.cost(s, graph)[0] for s in space)
        assert beam[0].cost == best, graph.name
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    print(f"\nACCEPTANCE 4 PASS: search == exhaustive minimum on "
          f"{len(pipelines)} pipelines; {elapsed:.2f}s")


SELF_READ_SRC = """
func in dims (x=16, y=16) bytes 4 external
func f dims (x=16, y=16) bytes 4
stage f ops add=1
read f from in dim x stride 1 lo 0 hi 0 dim y stride 1 lo 0 hi 0
stage f ops add=2
read f from f dim x stride 1 lo -2 hi 2 dim y stride 1 lo 0 hi 0
func g dims (x=16, y=16) bytes 4
stage g ops add=1
read g from f dim x stride 1 lo 0 hi 0 dim y stride 1 lo -1 hi 1
output g
"""

STRIDED_SRC = """
func in dims (x=16, y=16) bytes 2 external
func half dims (x=8, y=8) bytes 8
stage half ops add=3
read half from in dim x stride 2 lo 0 hi 1 dim y stride 2 lo 0 hi 1
func out dims (x=8, y=8) bytes 4
stage out ops mul=1
read out from half dim x stride 1 lo -1 hi 1 dim y stride 1 lo 0 hi 0
output out
"""


def test_acceptance_05_featurizer_matches_interpreter(chain2, chain3, diamond, params):
    """Every bytes/lines/transaction feature equals the naive per-access
    interpreter on 50+ randomized small schedules."""
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    graphs = [chain2, chain3, diamond,
              parse_pipeline(SELF_READ_SRC, name="self_read"),
              parse_pipeline(STRIDED_SRC, name="strided")]
    checked = 0
    while checked < 60:
        graph = graphs[checked % len(graphs)]
        state = _random_schedule(graph, rng)
        feats = featurize(state, graph, params)
        expected = interpret_memory_features(state, graph, params)
        for key, want in expected.items():
            got = feats[key]
            for name in MEMORY_FEATURES:
                assert getattr(got, name) == want[name], \
                    f"{graph.name} {key} {name}: {getattr(got, name)} != {want[name]}"
        checked += 1
    elapsed = time.monotonic() - t0
    assert elapsed < 60.0
    print(f"\nACCEPTANCE 5 PASS: exact agreement on {checked} schedules x "
          f"{len(MEMORY_FEATURES)} features; {elapsed:.2f}s")


def test_acceptance_06_formula_fidelity():
    """stage_cost with unit coefficients matches an independent transcription
    of the closed-form listing on 100 random feature vectors."""
    t0 = time.monotonic()
    rng = np.random.default_rng(0)
    ones = np.ones(NUM_COEFFICIENTS)
    for i in range(100):
        values = {name: float(rng.uniform(0.5, 10.0)) for name in FEATURE_ORDER}
        values["inlined_calls"] = float(rng.integers(16, 256)) if i % 3 == 0 else 0.0
        values["idle_lane_wastage"] = float(rng.uniform(0.0, 0.6))
        f = ScheduleFeatures(**values)
        ours = stage_cost(f, ones).total
        ref = reference_stage_cost(f, ones)
        assert ours == pytest.approx(ref, rel=1e-12)
    elapsed = time.monotonic() - t0
    assert elapsed < 1.0
    print(f"\nACCEPTANCE 6 PASS: 100 random vectors within 1e-12; {elapsed:.2f}s")


def test_acceptance_07_gradient_check():
    """Backprop matches central finite differences on a 4-unit-tower net."""
    t0 = time.monotonic()
    rng = np.random.default_rng(11)
    weights = init_weights(seed=1, embed_dim=4, hidden_dim=4)
    stages = [(rng.uniform(0, 3, ALGO_DIM), rng.uniform(0, 50, SCHED_DIM),
               rng.uniform(0.01, 1.0, NUM_COEFFICIENTS), rng.uniform(0, 5))
              for _ in range(2)]
    sample = TrainingSample(stages=stages, runtime=2.5)

    def loss_and_grads():
        total = 0.0
        caches = []
        for xa, xs, g, h in sample.stages:
            coeffs, cache = _forward(weights, xa, xs)
            caches.append((cache, g))
            total += float(g @ coeffs) + h
        err = math.log(total) - math.log(sample.runtime)
        grads = {k: np.zeros_like(v) for k, v in weights.tensors.items()}
        for cache, g in caches:
            _backward(weights, cache, (2.0 * err / total) * g, grads)
        return err * err, grads

    _, grads = loss_and_grads()
    eps, worst, checked = 1e-6, 0.0, 0
    for name, tensor in weights.tensors.items():
        flat = tensor.reshape(-1)
        for i in rng.choice(flat.size, size=min(25, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_and_grads()
            flat[i] = orig - eps
            lm, _ = loss_and_grads()
            flat[i] = orig
            fd = (lp - lm) / (2 * eps)
            an = grads[name].reshape(-1)[i]
            rel = abs(fd - an) / max(1e-6, abs(fd), abs(an))
            worst = max(worst, rel)
            assert rel < 1e-4, f"{name}[{i}]"
            checked += 1
    elapsed = time.monotonic() - t0
    assert elapsed < 10.0
    print(f"\nACCEPTANCE 7 PASS: {checked} partials, worst rel err "
          f"{worst:.2e} < 1e-4; {elapsed:.2f}s")


def test_acceptance_08_freezing_arithmetic(params):
    """16 stages -> exactly 4 left unfrozen; frozen decisions bit-identical
    before and after the main search."""
    t0 = time.monotonic()
    graph = parse_pipeline(make_chain_src(16, extent=32), name="chain16")
    tiling = TilingConfig(serial_powers=(1, 2), odd_serial=(),
                          innermost_thread=(16,), outer_thread=(4, 16),
                          unroll_budget=64)
    cfg = SearchConfig(beam_size=4, num_passes=2, seed=0, tiling=tiling,
                       thresholds=OPEN_THRESHOLDS, freeze_enabled=True)
    frozen_set, frozen = freeze_prepass(graph, params, cfg, init_weights(seed=0))
    assert len(frozen_set) == 16 - 4
    beam = schedule_with_freezing(graph, params, cfg, init_weights(seed=0))
    want = dict(frozen)
    for s in beam:
        got = dict(s.decisions)
        for func, d in want.items():
            assert got[func] == d
    elapsed = time.monotonic() - t0
    print(f"\nACCEPTANCE 8 PASS: 12 of 16 funcs frozen, decisions identical "
          f"across {len(beam)} results; {elapsed:.2f}s")


def test_acceptance_11_spill_filter_rule(chain2):
    """Post-compile spill filtering, including the all-spill 50% fallback."""
    t0 = time.monotonic()
    from conftest import schedule_all_root
    state = schedule_all_root(chain2)

    def rec(spilled, bytes_, seed):
        return SampleRecord(state=state, predicted_cost=1.0, spilled=spilled,
                            spill_bytes=bytes_, seed=seed)

    clean, bad = rec(False, 0, 0), rec(True, 64, 1)
    assert post_compile_filter([clean, bad]) == [clean]
    keep_all = [rec(False, 0, i) for i in range(3)]
    assert post_compile_filter(keep_all) == keep_all
    all_spill = [rec(True, b, i) for i, b in enumerate([100, 150, 151, 400])]
    assert [r.spill_bytes for r in post_compile_filter(all_spill)] == [100, 150]
    elapsed = time.monotonic() - t0
    print(f"\nACCEPTANCE 11 PASS: drop/identity/50%-fallback all exact; "
          f"{elapsed:.2f}s")


def test_acceptance_09_autotune_learning():
    """Iterated benchmark-and-retrain beats the first iteration's best.

    On the 9-func stencil chain and the conv pipeline, 10 iterations x 16
    samples against the machine oracle: the overall best runtime improves
    at least 1.3x over the best of iteration 1, median over 5 seeds.
    """
    t0 = time.monotonic()
    params = MachineParams()
    medians = {}
    for name in ("stencil_chain", "conv"):
        graph = builtin_pipeline(name)
        improvements = []
        for seed in range(5):
            cfg = RunConfig(mode="autotune", samples_per_batch=16,
                            beam_samples=1, greedy_samples=15, iterations=10,
                            seed=seed, beam_size=8, num_passes=2)
            res = run_autotune(graph, params, cfg,
                               train_config=TrainConfig(epochs=20, seed=seed))
            per = res.best_runtime_per_iteration
            assert len(per) == 10
            improvements.append(per[0] / min(per))
        medians[name] = statistics.median(improvements)
        assert medians[name] >= 1.3, (name, improvements)
    elapsed = time.monotonic() - t0
    assert elapsed < 600.0
    print(f"\nACCEPTANCE 9 PASS: median improvement "
          f"{medians['stencil_chain']:.2f}x (stencil_chain), "
          f"{medians['conv']:.2f}x (conv), both >= 1.3x; {elapsed:.0f}s")


def test_acceptance_10_mode_ordering():
    """Median winner runtime: Top-5 <= One Shot and Autotune <= Top-5."""
    from gpusched.machine import simulate_runtime

    t0 = time.monotonic()
    params = MachineParams()
    suite = ("blur", "conv", "stencil_chain")
    one_shot, top5, autotune = [], [], []
    for name in suite:
        graph = builtin_pipeline(name)
        for seed in range(5):
            base = dict(samples_per_batch=8, beam_samples=1, greedy_samples=7,
                        seed=seed, beam_size=8, num_passes=2)
            weights = init_weights(seed=seed)
            rec, _ = run_one_shot(graph, params,
                                  RunConfig(mode="one_shot", **base), weights)
            one_shot.append(simulate_runtime(rec.state, graph, params).runtime)
            rec, _ = run_top_k(graph, params,
                               RunConfig(mode="top_k", k=5, **base), weights)
            top5.append(rec.oracle.runtime)
            res = run_autotune(graph, params,
                               RunConfig(mode="autotune", iterations=4, **base),
                               train_config=TrainConfig(epochs=20, seed=seed))
            autotune.append(res.best.oracle.runtime)
    med = {k: statistics.median(v) for k, v in
           (("one_shot", one_shot), ("top5", top5), ("autotune", autotune))}
    assert med["top5"] <= med["one_shot"]
    assert med["autotune"] <= med["top5"]
    elapsed = time.monotonic() - t0
    assert elapsed < 900.0
    print(f"\nACCEPTANCE 10 PASS: median runtimes one-shot {med['one_shot']:.3g} "
          f">= top-5 {med['top5']:.3g} >= autotune {med['autotune']:.3g}; "
          f"{elapsed:.0f}s")
