"""Scheduling-option enumeration (placements, tilings) and pruning."""

import math

import pytest

from gpusched.loopnest import Decision, apply_decision, initial_state
from gpusched.machine import validate_limits
from gpusched.options import (
    DEFAULT_TILING,
    Thresholds,
    TilingConfig,
    enumerate_compute_locations,
    enumerate_serial_tilings,
    enumerate_thread_tilings,
    enumerate_tilings,
    prune,
)

from conftest import OPEN_THRESHOLDS, schedule_all_root


# -- Placement menus --------------------------------------------------------

def test_output_gets_only_root(chain2):
    state = initial_state(chain2)
    menu = enumerate_compute_locations(state, "g", chain2)
    assert menu == [Decision("compute_root")]


def test_stencil_producer_full_menu(chain2):
    state = apply_decision(initial_state(chain2), "g", Decision("compute_root"))
    menu = enumerate_compute_locations(state, "f", chain2)
    kinds = [d.kind for d in menu]
    assert kinds.count("compute_root") == 1
    assert "fuse_at_block" in kinds
    assert "fuse_at_thread" in kinds
    assert "inline" in kinds  # 2 ops <= cheap-inline limit


def test_pointwise_producer_always_inlined(diamond):
    # a is single-stage and read pointwise by... b reads with a stencil, so
    # not forced; but a pointwise-only func must collapse to [inline].
    from gpusched.pipeline import parse_pipeline
    src = """
func in dims (x=32) bytes 4 external
func p dims (x=32) bytes 4
stage p ops add=1
read p from in dim x stride 1 lo 0 hi 0
func out dims (x=32) bytes 4
stage out ops add=1
read out from p dim x stride 1 lo 0 hi 0
output out
"""
    graph = parse_pipeline(src)
    state = apply_decision(initial_state(graph), "out", Decision("compute_root"))
    menu = enumerate_compute_locations(state, "p", graph)
    assert menu == [Decision("inline")]


def test_expensive_func_not_inlinable():
    from gpusched.pipeline import parse_pipeline
    src = """
func in dims (x=32) bytes 4 external
func p dims (x=32) bytes 4
stage p ops add=5 mul=5
read p from in dim x stride 1 lo -1 hi 1
func out dims (x=32) bytes 4
stage out ops add=1
read out from p dim x stride 1 lo -1 hi 1
output out
"""
    graph = parse_pipeline(src)
    state = apply_decision(initial_state(graph), "out", Decision("compute_root"))
    kinds = {d.kind for d in enumerate_compute_locations(state, "p", graph)}
    assert "inline" not in kinds  # 10 ops exceeds the cheap-inline limit


def test_menu_skips_unscheduled_consumers(chain3):
    state = apply_decision(initial_state(chain3), "g", Decision("compute_root"))
    # e's only consumer f is unscheduled: no fusions offered
    kinds = {d.kind for d in enumerate_compute_locations(state, "e", chain3)}
    assert kinds <= {"compute_root", "inline"}


# -- Tiling menus -----------------------------------------------------------

def test_serial_menu_powers_of_two():
    opts = enumerate_serial_tilings((128,), thread_context=32)
    flat = sorted(v[0] for v in opts)
    assert flat == [1, 2, 4, 8]  # 128 has no odd divisor leaving a warp multiple


def test_serial_menu_admits_odd_divisor():
    # 96 = 3 * 32: serial 3 leaves a warp-multiple extent
    opts = enumerate_serial_tilings((96,), thread_context=32)
    assert (3,) in opts
    assert all(v[0] != 5 for v in opts)


def test_serial_menu_rejects_odd_nonwarp():
    # 100 / 5 = 20, not a warp multiple -> 5 excluded
    opts = enumerate_serial_tilings((100,), thread_context=32)
    assert all(v[0] not in (3, 5, 7) for v in opts)


def test_serial_menu_unroll_budget():
    opts = enumerate_serial_tilings((128, 128, 128), thread_context=32)
    assert opts
    for vec in opts:
        assert math.prod(vec) <= DEFAULT_TILING.unroll_budget


def test_serial_menu_capped_by_extent():
    opts = enumerate_serial_tilings((2,), thread_context=32)
    assert sorted(v[0] for v in opts) == [1, 2]


def test_thread_menu_innermost_is_first_wide_dim():
    # dim 0 too small for the wide menu -> dim 1 gets {16, 32, 64}
    opts = enumerate_thread_tilings((4, 128))
    dim0 = {v[0] for v in opts}
    dim1 = {v[1] for v in opts}
    assert dim0 == {1, 2, 4}           # narrow menu capped at extent 4
    assert dim1 == {16, 32, 64}


def test_thread_menu_caps_at_extent():
    opts = enumerate_thread_tilings((16,))
    assert {v[0] for v in opts} == {16}  # 32 and 64 collapse into 16


def test_enumerate_tilings_combined_counts():
    config = TilingConfig(serial_powers=(1, 2, 4, 8), odd_serial=(),
                          innermost_thread=(4, 8, 16, 32),
                          outer_thread=(4, 8, 16, 32), unroll_budget=64)
    opts = enumerate_tilings((128, 128), config=config)
    # 4 serial choices per dim (budget 64 allows all 16 pairs), 4 thread
    # choices per dim -> T^d options per level.
    assert len(opts.serial_options) == 16
    assert len(opts.thread_options) == 16


# -- Pruning ----------------------------------------------------------------

def _root_state(graph, serial, thread):
    return schedule_all_root(graph, serial=serial, thread=thread)


def test_prune_passes_reasonable_schedule(chain2, params):
    small = params.override(num_sms=1)
    state = _root_state(chain2, (1, 1), (16, 16))
    assert prune(state, chain2, small, OPEN_THRESHOLDS) is None


def test_prune_excessive_recompute(chain3, params):
    state = initial_state(chain3)
    state = apply_decision(state, "g", Decision("compute_root"))
    state = apply_decision(state, "f", Decision("fuse_at_thread", consumer="g"))
    state = apply_decision(state, "e", Decision("fuse_at_thread", consumer="f"))
    state = apply_decision(state, "g",
                           Decision("compute_root", serial=(1, 1), thread=(8, 8)))
    # every g point recomputes windows of f and e
    t = Thresholds(recompute_factor=1.5, min_blocks_per_sm_factor=0.0,
                   warp_utilization_floor=0.0, thread_alloc_bytes=10 ** 9)
    report = prune(state, chain3, params.override(num_sms=1), t)
    assert report is not None and report.reason == "excessive_recompute"


def test_prune_idle_sms(chain2, params):
    state = _root_state(chain2, (1, 1), (16, 16))  # 1 block per kernel
    t = Thresholds(min_blocks_per_sm_factor=2.0, recompute_factor=1e9,
                   warp_utilization_floor=0.0, thread_alloc_bytes=10 ** 9)
    report = prune(state, chain2, params, t)  # 80 SMs want >= 160 blocks
    assert report is not None and report.reason == "idle_sms"


def test_prune_poor_warp_utilization(chain2, params):
    # 2x2 = 4 threads per block: 4/32 lanes used
    state = _root_state(chain2, (1, 1), (2, 2))
    t = Thresholds(warp_utilization_floor=0.25, recompute_factor=1e9,
                   min_blocks_per_sm_factor=0.0, thread_alloc_bytes=10 ** 9)
    report = prune(state, chain2, params, t)
    assert report is not None and report.reason == "poor_warp_utilization"


def test_prune_serial_too_large(chain2, params):
    t = Thresholds(unroll_budget=8, recompute_factor=1e9,
                   min_blocks_per_sm_factor=0.0, warp_utilization_floor=0.0,
                   thread_alloc_bytes=10 ** 9)
    state = _root_state(chain2, (4, 4), (4, 4))  # 16 serial points > 8
    report = prune(state, chain2, params, t)
    assert report is not None and report.reason == "serial_too_large"


def test_prune_large_thread_allocation(chain2, params):
    state = initial_state(chain2)
    state = apply_decision(state, "g", Decision("compute_root"))
    state = apply_decision(state, "f", Decision("fuse_at_thread", consumer="g"))
    state = apply_decision(state, "g",
                           Decision("compute_root", serial=(1, 1), thread=(8, 8)))
    t = Thresholds(thread_alloc_bytes=8, recompute_factor=1e9,
                   min_blocks_per_sm_factor=0.0, warp_utilization_floor=0.0)
    report = prune(state, chain2, params, t)
    assert report is not None and report.reason == "thread_alloc_dynamic_or_large"


def test_prune_hardware_limit(chain2, params):
    state = _root_state(chain2, (1, 1), (16, 16))  # 256 threads
    report = prune(state, chain2, params.override(max_threads_per_block=128),
                   OPEN_THRESHOLDS)
    assert report is not None and report.reason == "hardware_limit"


def test_prune_soundness_vs_validate(chain2, chain3, params):
    """Whatever survives pruning also passes the hardware-limit check."""
    tight = params.override(max_threads_per_block=128,
                            shared_mem_per_block_limit=1024)
    for graph in (chain2, chain3):
        ext = graph.func(graph.outputs[0]).extents
        for thread in [(4, 4), (8, 8), (16, 16), (8, 16)]:
            thread = tuple(min(t, e) for t, e in zip(thread, ext))
            state = schedule_all_root(graph, serial=(1, 1), thread=thread)
            if prune(state, graph, tight, OPEN_THRESHOLDS) is None:
                assert validate_limits(state, tight) == []


def test_thresholds_from_file(tmp_path):
    p = tmp_path / "thresholds.txt"
    p.write_text("recompute_factor = 3.5\nthread_alloc_bytes = 512\n")
    t = Thresholds.from_file(p)
    assert t.recompute_factor == 3.5
    assert t.thread_alloc_bytes == 512
    assert t.warp_utilization_floor == Thresholds().warp_utilization_floor


def test_thresholds_from_file_unknown_key(tmp_path):
    p = tmp_path / "thresholds.txt"
    p.write_text("nonsense = 1\n")
    with pytest.raises(ValueError):
        Thresholds.from_file(p)
