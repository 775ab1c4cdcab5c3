"""Featurizing a schedule and pricing it with the hybrid cost model.

The featurizer simulates one representative block exactly: coalesced
global transactions, shared-memory bank conflicts, unique bytes and cache
lines touched per realization/thread/point, occupancy limits.  A small
two-tower network maps (algorithm, schedule) features to positive
coefficients for a closed-form cost expression; the prediction is the sum
of per-stage closed-form terms.
"""

import numpy as np

from gpusched.costmodel import init_weights, pipeline_cost, predict_coefficients
from gpusched.featurize import count_memory_transactions, featurize
from gpusched.loopnest import Decision, apply_decision, initial_state
from gpusched.machine import MachineParams
from gpusched.pipeline import builtin_pipeline


def main():
    params = MachineParams()

    # Warp-level transaction counting, the featurizer's innermost primitive:
    print("one warp loading 32 consecutive floats:",
          count_memory_transactions([4 * i for i in range(32)], "global", params),
          "transactions (perfectly coalesced)")
    print("one warp striding 128 bytes apart:   ",
          count_memory_transactions([128 * i for i in range(32)], "global", params),
          "transactions (fully scattered)")
    print("32 lanes, one shared-memory bank:    ",
          count_memory_transactions([128 * i for i in range(32)], "shared", params),
          "serialized accesses (worst-case bank conflict)")

    graph = builtin_pipeline("blur")
    s = initial_state(graph)
    s = apply_decision(s, "blur_y", Decision("compute_root"))
    s = apply_decision(s, "blur_x",
                       Decision("fuse_at_block", consumer="blur_y", serial=(1, 2)))
    s = apply_decision(s, "blur_y",
                       Decision("compute_root", serial=(1, 2), thread=(32, 4)))

    feats = featurize(s, graph, params)
    print("\nper-stage features (selection):")
    for (func, si), f in sorted(feats.items()):
        print(f"  {func}/{si}: blocks={f.num_blocks:.0f} "
              f"threads/block={f.num_threads_per_block:.0f} "
              f"global_loads/block={f.num_global_mem_loads_per_block:.0f} "
              f"shared_loads/block={f.num_shared_mem_loads_per_block:.0f} "
              f"load_eff(g)={f.global_mem_load_efficiency:.2f} "
              f"warp_occ={f.max_warp_occupancy:.2f}")

    weights = init_weights(seed=0)
    total, breakdown = pipeline_cost(feats, weights)
    print("\ncost model breakdown (untrained weights):")
    for key, b in sorted(breakdown.items()):
        print(f"  {key}: compute={b.compute:.3g} load={b.load:.3g} "
              f"store={b.store:.3g} total={b.total:.3g}")
    print(f"pipeline total: {total:.3g}")

    f0 = next(iter(feats.values()))
    coeffs = predict_coefficients(f0.algorithm, f0, weights)
    print(f"\nnetwork emits {coeffs.size} positive coefficients, e.g. "
          f"{np.array2string(coeffs[:4], precision=3)} ...")


if __name__ == "__main__":
    main()
