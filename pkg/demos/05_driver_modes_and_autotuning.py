"""Driving the scheduler end to end: one-shot, top-k, and autotuning.

Three ways to use the searcher against a machine model.  One-shot trusts
the cost model and takes its single best schedule.  Top-k benchmarks the
k best predictions and keeps the measured winner.  Autotune closes the
loop: benchmark a batch, retrain the cost model on the measurements,
search again with the improved model, repeat.
"""

from gpusched.costmodel import TrainConfig, init_weights
from gpusched.driver import RunConfig, run_autotune, run_one_shot, run_top_k
from gpusched.machine import MachineParams, simulate_runtime
from gpusched.pipeline import builtin_pipeline


def main():
    graph = builtin_pipeline("conv")
    params = MachineParams()
    weights = init_weights(seed=0)

    # Mode 1: one shot.  Pure prediction, one oracle call at the end.
    cfg = RunConfig(mode="one_shot", samples_per_batch=8, beam_samples=1,
                    greedy_samples=7, seed=0, beam_size=8, num_passes=2)
    best, _records = run_one_shot(graph, params, cfg, weights)
    measured = simulate_runtime(best.state, graph, params)
    print(f"one-shot: predicted {best.predicted_cost:.4g}, "
          f"measured {measured.runtime:.3g} s")

    # Mode 2: top-5.  Benchmark the five best predictions, keep the winner.
    cfg = RunConfig(mode="top_k", k=5, samples_per_batch=8, beam_samples=1,
                    greedy_samples=7, seed=0, beam_size=8, num_passes=2)
    best5, records5 = run_top_k(graph, params, cfg, weights)
    n_bench = sum(1 for r in records5 if r.oracle is not None)
    print(f"top-5:    measured winner {best5.oracle.runtime:.3g} s "
          f"({n_bench} schedules benchmarked)")

    # Mode 3: autotune.  Search / benchmark / retrain for a few rounds.
    cfg = RunConfig(mode="autotune", samples_per_batch=8, beam_samples=1,
                    greedy_samples=7, iterations=4, seed=0,
                    beam_size=8, num_passes=2)
    res = run_autotune(graph, params, cfg,
                       train_config=TrainConfig(epochs=30, seed=0))
    print("autotune best runtime per iteration:")
    for i, r in enumerate(res.best_runtime_per_iteration, start=1):
        print(f"  iter {i}: {r:.3g} s")
    per = res.best_runtime_per_iteration
    n_measured = sum(1 for r in res.records if r.oracle is not None)
    print(f"improvement over first iteration: {per[0] / min(per):.2f}x "
          f"({n_measured} measurements collected)")


if __name__ == "__main__":
    main()
