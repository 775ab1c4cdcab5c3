import pytest

from gpusched.machine import MachineParams
from gpusched.options import Thresholds
from gpusched.pipeline import parse_pipeline

# Pruning disabled (up to hardware limits), for tests on tiny pipelines.
OPEN_THRESHOLDS = Thresholds(recompute_factor=1e9, min_blocks_per_sm_factor=0.0,
                             warp_utilization_floor=0.0, unroll_budget=64,
                             thread_alloc_bytes=10 ** 9)

CHAIN2_SRC = """
func in dims (x=16, y=16) bytes 4 external
func f dims (x=16, y=16) bytes 4
stage f ops add=2
read f from in dim x stride 1 lo -1 hi 1 dim y stride 1 lo 0 hi 0
func g dims (x=16, y=16) bytes 4
stage g ops add=1 mul=1
read g from f dim x stride 1 lo 0 hi 0 dim y stride 1 lo -1 hi 1
output g
"""

CHAIN3_SRC = """
func in dims (x=8, y=8) bytes 4 external
func e dims (x=8, y=8) bytes 4
stage e ops add=2
read e from in dim x stride 1 lo -1 hi 1 dim y stride 1 lo 0 hi 0
func f dims (x=8, y=8) bytes 4
stage f ops add=2
read f from e dim x stride 1 lo 0 hi 0 dim y stride 1 lo -1 hi 1
func g dims (x=8, y=8) bytes 4
stage g ops mul=2
read g from f dim x stride 1 lo -1 hi 0 dim y stride 1 lo 0 hi 1
output g
"""


# a -> {b, c} -> out: lets one func choose between two fusion targets.
DIAMOND_SRC = """
func in dims (x=16, y=16) bytes 4 external
func a dims (x=16, y=16) bytes 4
stage a ops add=1
read a from in dim x stride 1 lo 0 hi 0 dim y stride 1 lo 0 hi 0
func b dims (x=16, y=16) bytes 4
stage b ops add=2
read b from a dim x stride 1 lo -1 hi 1 dim y stride 1 lo 0 hi 0
func c dims (x=16, y=16) bytes 4
stage c ops mul=2
read c from a dim x stride 1 lo 0 hi 0 dim y stride 1 lo -1 hi 1
func out dims (x=16, y=16) bytes 4
stage out ops add=1
read out from b dim x stride 1 lo 0 hi 0 dim y stride 1 lo 0 hi 0
read out from c dim x stride 1 lo 0 hi 0 dim y stride 1 lo 0 hi 0
output out
"""


def schedule_all_root(graph, serial=(1, 1), thread=(16, 16)):
    """Every func in its own kernel with the given tiling."""
    from gpusched.loopnest import Decision, apply_decision, initial_state

    state = initial_state(graph)
    for func in state.schedulable_funcs():
        state = apply_decision(state, func, Decision("compute_root"))
    for func in state.schedulable_funcs():
        state = apply_decision(
            state, func, Decision("compute_root", serial=serial, thread=thread))
    return state


def make_chain_src(n_stages, extent=16, ops="add=2"):
    """Source text for a linear chain of alternating 3-tap h/v stencils."""
    lines = [f"func in dims (x={extent}, y={extent}) bytes 4 external"]
    prev = "in"
    for i in range(1, n_stages + 1):
        name = f"s{i}"
        lines.append(f"func {name} dims (x={extent}, y={extent}) bytes 4")
        lines.append(f"stage {name} ops {ops}")
        if i % 2 == 1:
            win = "dim x stride 1 lo -1 hi 1 dim y stride 1 lo 0 hi 0"
        else:
            win = "dim x stride 1 lo 0 hi 0 dim y stride 1 lo -1 hi 1"
        lines.append(f"read {name} from {prev} {win}")
        prev = name
    lines.append(f"output {prev}")
    return "\n".join(lines)


@pytest.fixture
def diamond():
    return parse_pipeline(DIAMOND_SRC, name="diamond")


@pytest.fixture
def params():
    return MachineParams()


@pytest.fixture
def chain2():
    return parse_pipeline(CHAIN2_SRC, name="chain2")


@pytest.fixture
def chain3():
    return parse_pipeline(CHAIN3_SRC, name="chain3")
