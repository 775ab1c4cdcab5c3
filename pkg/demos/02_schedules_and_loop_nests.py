"""Building GPU schedules by hand and inspecting the derived loop nests.

Each func gets two decisions: a compute location (own kernel, fused into a
consumer's block or thread, or inlined) and, for kernel roots, a 3-level
block/thread/serial tiling.  The resolver turns decisions into concrete
geometry: grids, shared allocations, per-thread footprints.
"""

from gpusched.loopnest import Decision, apply_decision, initial_state, lower, pretty_print
from gpusched.machine import MachineParams, simulate_runtime
from gpusched.pipeline import builtin_pipeline


def main():
    graph = builtin_pipeline("blur")
    params = MachineParams()

    # Schedule 1: every func in its own kernel (no fusion, all traffic global).
    s = initial_state(graph)
    for func in s.schedulable_funcs():
        s = apply_decision(s, func, Decision("compute_root"))
    for func in s.schedulable_funcs():
        s = apply_decision(s, func,
                           Decision("compute_root", serial=(1, 2), thread=(32, 4)))
    root_state = s
    print("=== all compute_root ===")
    print(pretty_print(lower(root_state), params))
    print(f"oracle runtime: {simulate_runtime(root_state, graph, params).runtime:.3g} s")

    # Schedule 2: stage blur_x in shared memory inside blur_y's blocks.
    s = initial_state(graph)
    s = apply_decision(s, "blur_y", Decision("compute_root"))
    s = apply_decision(s, "blur_x",
                       Decision("fuse_at_block", consumer="blur_y", serial=(1, 2)))
    s = apply_decision(s, "blur_y",
                       Decision("compute_root", serial=(1, 2), thread=(32, 4)))
    fused_state = s
    print("\n=== blur_x fused at blur_y's blocks (shared memory) ===")
    print(pretty_print(lower(fused_state), params))
    print(f"oracle runtime: {simulate_runtime(fused_state, graph, params).runtime:.3g} s")

    print("\nFusing trades a kernel launch and global round-trip for halo")
    print("recompute and shared-memory traffic -- the core scheduling choice.")


if __name__ == "__main__":
    main()
