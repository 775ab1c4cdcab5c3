"""Searching the schedule space: enumeration, hashing, sampling, beam.

The option space is tiny per decision but exponential per pipeline.  The
search copes with three tools: structural hashing (schedules differing
only in tile extents share a bucket), hierarchical sampling (log2(B)
representatives per bucket), and a multi-pass beam whose bucketing depth
grows with the pass index while known-bad structures are penalized.
"""

from gpusched.costmodel import init_weights
from gpusched.loopnest import Decision, apply_decision, initial_state, structural_hash
from gpusched.machine import MachineParams, simulate_runtime
from gpusched.options import enumerate_compute_locations, enumerate_tilings
from gpusched.pipeline import builtin_pipeline
from gpusched.sampling import bucket_candidates, sample_representatives
from gpusched.search import SearchConfig, schedule_pipeline


def main():
    graph = builtin_pipeline("stencil_chain")
    params = MachineParams()

    # Per-func option menus:
    state = initial_state(graph)
    state = apply_decision(state, "s8", Decision("compute_root"))
    menu = enumerate_compute_locations(state, "s7", graph)
    print("placement menu for s7 once s8 is scheduled:")
    for d in menu:
        print(f"  {d.kind}" + (f" into {d.consumer}" if d.consumer else ""))
    opts = enumerate_tilings(graph.func("s8").extents)
    print(f"tiling menu for s8: {len(opts.serial_options)} serial x "
          f"{len(opts.thread_options)} thread vectors")

    # Structural hashing groups tiling variants of one structure:
    variants = []
    for serial in [(1, 1), (2, 2), (4, 4)]:
        s = initial_state(graph)
        for func in s.schedulable_funcs():
            s = apply_decision(s, func, Decision("compute_root"))
        for func in s.schedulable_funcs():
            s = apply_decision(s, func, Decision(
                "compute_root", serial=serial, thread=(32, 4)))
        variants.append(s)
    hashes = {structural_hash(v, 3) for v in variants}
    print(f"\n3 tiling variants -> {len(hashes)} structural hash (depth 3)")
    buckets = bucket_candidates(variants, depth=3, rng_seed=0)
    reps = sample_representatives(buckets)
    print(f"hierarchical sampling keeps {len(reps)} representative(s) "
          f"of the bucket of {len(variants)}")

    # Full beam search:
    weights = init_weights(seed=0)
    cfg = SearchConfig(beam_size=8, num_passes=2, seed=0)
    beam = schedule_pipeline(graph, params, cfg, weights)
    best = beam[0]
    print(f"\nbeam search over {graph.name}: beam of {len(beam)}, "
          f"best predicted cost {best.cost:.4g}")
    result = simulate_runtime(best, graph, params)
    print(f"machine-oracle runtime of the winner: {result.runtime:.3g} s")
    kinds = {}
    for func, d in best.decisions:
        kinds[d.kind] = kinds.get(d.kind, 0) + 1
    print(f"winner's placement mix: {kinds}")


if __name__ == "__main__":
    main()
