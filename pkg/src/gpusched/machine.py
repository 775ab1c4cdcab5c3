"""GPU machine description and the desk-scale runtime oracle.

The oracle stands in for compile-and-benchmark: a deterministic roofline-ish
model (max of compute and memory time per kernel, plus launch overhead and a
register-spill penalty).  It deliberately uses a different functional form
than the learned cost model so autotuning has something nontrivial to fit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class MachineParams:
    """Hardware limits; defaults mirror a V100-class device."""

    warp_size: int = 32
    num_sms: int = 80
    max_threads_per_block: int = 1024
    max_active_warps_per_sm: int = 64
    max_active_blocks_per_sm: int = 32
    shared_mem_per_block_limit: int = 48 * 1024
    shared_mem_per_sm: int = 96 * 1024
    registers_per_thread_budget: int = 255
    global_transaction_bytes: int = 32
    shared_banks: int = 32
    bank_width_bytes: int = 4
    # Oracle-only throughput knobs (not hardware limits)
    compute_throughput: float = 2.5e12   # scalar ops/sec at full occupancy
    global_bandwidth: float = 900e9      # bytes/sec
    shared_bandwidth: float = 9e12       # bytes/sec
    kernel_launch_overhead: float = 5e-6  # seconds

    def __post_init__(self):
        for name in ("warp_size", "num_sms", "max_threads_per_block",
                     "max_active_warps_per_sm", "max_active_blocks_per_sm",
                     "shared_mem_per_block_limit", "shared_mem_per_sm",
                     "registers_per_thread_budget", "global_transaction_bytes",
                     "shared_banks", "bank_width_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"MachineParams.{name} must be positive")
        if self.max_threads_per_block % self.warp_size != 0:
            raise ValueError("warp_size must divide max_threads_per_block")

    @property
    def register_bytes_per_thread(self) -> int:
        return self.registers_per_thread_budget * 4

    @classmethod
    def from_file(cls, path) -> "MachineParams":
        """key=value text file; unknown keys rejected, missing keys default."""
        kwargs = {}
        fields = {f: type(getattr(cls(), f)) for f in cls.__dataclass_fields__}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in fields:
                    raise ValueError(f"{path}:{lineno}: unknown machine param {key!r}")
                kwargs[key] = fields[key](value.strip())
        return cls(**kwargs)

    def override(self, **kwargs) -> "MachineParams":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


@dataclass(frozen=True)
class OracleResult:
    runtime: float
    spilled_registers: bool
    spill_bytes: int

    def __post_init__(self):
        if self.runtime <= 0:
            raise ValueError("oracle runtime must be positive")
        if (self.spill_bytes > 0) != self.spilled_registers:
            raise ValueError("spill_bytes > 0 iff spilled_registers")


@dataclass(frozen=True)
class LimitViolation:
    kind: str      # "too_many_threads" | "too_much_shared_memory"
    kernel: str
    detail: str


def validate_limits(state, params: MachineParams) -> list[LimitViolation]:
    """Check per-kernel hardware limits; returns all violations (empty = ok)."""
    from .resolve import resolve
    concrete = resolve(state, state.graph, params, provisional=True)
    out = []
    for kern in concrete.kernels:
        if kern.threads_per_block > params.max_threads_per_block:
            out.append(LimitViolation(
                "too_many_threads", kern.owner,
                f"{kern.threads_per_block} threads/block > {params.max_threads_per_block}"))
        if kern.shared_bytes > params.shared_mem_per_block_limit:
            out.append(LimitViolation(
                "too_much_shared_memory", kern.owner,
                f"{kern.shared_bytes} shared bytes > {params.shared_mem_per_block_limit}"))
    return out


def simulate_runtime(state, graph, params: MachineParams) -> OracleResult:
    """Deterministic stand-in for compiling and benchmarking a schedule.

    Per kernel: max(compute term, memory term) + launch overhead, where the
    compute term scales with points computed over effective SM throughput and
    the memory term with simulated transaction traffic over bandwidth.  A
    multiplicative penalty applies when the per-thread working set exceeds
    the register budget.
    """
    from .featurize import featurize
    from .resolve import resolve

    if not state.fully_scheduled(graph):
        raise ValueError("oracle requires a fully scheduled state")
    violations = validate_limits(state, params)
    if violations:
        raise ValueError(f"hardware limit violation: {violations[0].detail}")

    concrete = resolve(state, graph, params)
    feats = featurize(state, graph, params, _concrete=concrete)

    total = 0.0
    spilled = False
    spill_bytes = 0
    budget = params.register_bytes_per_thread
    for kern in concrete.kernels:
        compute_work = 0.0
        global_bytes = 0.0
        shared_bytes = 0.0
        occupancy = 1.0
        kernel_spill = 0
        for key, f in feats.items():
            func, _stage = key
            if concrete.funcs[func].kernel != kern.owner:
                continue
            ops = f.algorithm.ops_per_point
            compute_work += f.num_scalars * (1.0 + ops)
            global_bytes += f.num_blocks * (
                f.num_global_mem_loads_per_block + f.num_global_mem_stores_per_block
            ) * params.global_transaction_bytes
            shared_bytes += f.num_blocks * (
                f.num_shared_mem_loads_per_block + f.num_shared_mem_stores_per_block
            ) * params.shared_banks * params.bank_width_bytes
            occupancy = min(occupancy, f.max_warp_occupancy)
            ws = int(f.working_set_at_thread)
            if ws > budget:
                kernel_spill = max(kernel_spill, ws - budget)
        blocks = kern.num_blocks
        balance = min(1.0, blocks / (2.0 * params.num_sms))
        utilization = max(1e-3, occupancy * balance)
        compute_time = compute_work / (params.compute_throughput * utilization)
        memory_time = (global_bytes / params.global_bandwidth
                       + shared_bytes / params.shared_bandwidth)
        t = max(compute_time, memory_time)
        if kernel_spill > 0:
            spilled = True
            spill_bytes += kernel_spill
            t *= 2.0 + kernel_spill / budget
        total += t + params.kernel_launch_overhead
    return OracleResult(runtime=total, spilled_registers=spilled, spill_bytes=spill_bytes)
