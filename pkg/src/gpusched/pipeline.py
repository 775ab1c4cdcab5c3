"""Pipeline representation: a DAG of funcs with affine stencil accesses.

A pipeline is a list of funcs.  Each func has a rectangular iteration
domain, one or more stages, and each stage declares its arithmetic
histogram and the producer regions it reads.  Accesses are per-dimension
affine: consumer coordinate x maps to the producer window
[x*stride + lo, x*stride + hi].  That is enough for exact footprint and
bounds analysis with plain interval arithmetic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .boxes import Interval, bounding_box

OP_CLASSES = ("add", "mul", "div", "minmax", "transcendental", "cast", "compare")


class PipelineError(Exception):
    """Raised for malformed pipeline descriptions (cycles, bad references...)."""


@dataclass(frozen=True)
class AccessPattern:
    """One read of `producer`, as a per-consumer-dim (stride, lo, hi) window."""

    producer: str
    dims: tuple[tuple[int, int, int], ...]  # (stride, offset_lo, offset_hi)

    def __post_init__(self):
        for stride, lo, hi in self.dims:
            if stride < 0:
                raise PipelineError(f"negative stride reading {self.producer}")
            if lo > hi:
                raise PipelineError(f"empty window reading {self.producer}: lo {lo} > hi {hi}")

    @property
    def window_volume(self) -> int:
        v = 1
        for _, lo, hi in self.dims:
            v *= hi - lo + 1
        return v

    def is_pointwise(self) -> bool:
        return all(stride == 1 and lo == 0 and hi == 0 for stride, lo, hi in self.dims)


@dataclass(frozen=True)
class StageDef:
    accesses: tuple[AccessPattern, ...] = ()
    op_histogram: dict[str, int] = field(default_factory=dict)
    # Optional expression-tree shape as nested arities, e.g. ((None, None), None)
    # for a binary node over a binary node and a leaf.  Drives the Strahler
    # register-pressure feature; absent means a left-skewed chain is assumed.
    expr_tree: object | None = None

    @property
    def ops_per_point(self) -> int:
        return sum(self.op_histogram.values())


@dataclass(frozen=True)
class FuncNode:
    name: str
    dims: tuple[tuple[str, int], ...]  # (dim name, extent)
    stages: tuple[StageDef, ...]
    elem_bytes: int = 4
    is_external_input: bool = False

    def __post_init__(self):
        if self.elem_bytes not in (1, 2, 4, 8):
            raise PipelineError(f"func {self.name}: elem_bytes must be 1/2/4/8")
        for dname, extent in self.dims:
            if extent < 1:
                raise PipelineError(f"func {self.name}: non-positive extent for {dname}")
        if not self.stages and not self.is_external_input:
            raise PipelineError(f"func {self.name}: needs at least one stage")

    @property
    def extents(self) -> tuple[int, ...]:
        return tuple(e for _, e in self.dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def domain_size(self) -> int:
        v = 1
        for e in self.extents:
            v *= e
        return v


@dataclass(frozen=True)
class PipelineGraph:
    name: str
    funcs: tuple[FuncNode, ...]
    outputs: tuple[str, ...]

    def __post_init__(self):
        if not self.outputs:
            raise PipelineError("pipeline has no output func")
        object.__setattr__(self, "_by_name", {f.name: f for f in self.funcs})
        order = self._toposort()
        object.__setattr__(self, "_topo", order)

    def func(self, name: str) -> FuncNode:
        try:
            return self._by_name[name]
        except KeyError:
            raise PipelineError(f"unknown func {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    @property
    def topo_order(self) -> tuple[str, ...]:
        """Producers before consumers."""
        return self._topo

    def producers_of(self, name: str) -> list[str]:
        return sorted({a.producer for st in self.func(name).stages for a in st.accesses})

    def consumers_of(self, name: str) -> list[str]:
        out = []
        for f in self.funcs:
            if f.name == name:
                continue  # self-reads do not make a func its own consumer
            if any(a.producer == name for st in f.stages for a in st.accesses):
                out.append(f.name)
        return out

    def _toposort(self) -> tuple[str, ...]:
        deps = {}
        for f in self.funcs:
            for st in f.stages:
                for a in st.accesses:
                    if a.producer not in self._by_name:
                        raise PipelineError(
                            f"func {f.name} reads unknown producer {a.producer!r}")
                    p = self._by_name[a.producer]
                    if len(a.dims) != f.ndim or p.ndim != f.ndim:
                        raise PipelineError(
                            f"func {f.name} reads {a.producer} with mismatched rank")
            # self-reads (update stages reading the func's own buffer) are legal
            deps[f.name] = {a.producer for st in f.stages for a in st.accesses
                            if a.producer != f.name}
        order: list[str] = []
        mark: dict[str, int] = {}

        def visit(n, chain):
            if mark.get(n) == 2:
                return
            if mark.get(n) == 1:
                cyc = " -> ".join(chain + [n])
                raise PipelineError(f"cycle detected: {cyc}")
            mark[n] = 1
            for p in sorted(deps[n]):
                visit(p, chain + [n])
            mark[n] = 2
            order.append(n)

        for f in self.funcs:
            visit(f.name, [])
        for out in self.outputs:
            if out not in self._by_name:
                raise PipelineError(f"output {out!r} is not a declared func")
            if self._by_name[out].is_external_input:
                raise PipelineError(f"output {out!r} is an external input")
        return tuple(order)


def required_region(consumer_box: list[Interval], access: AccessPattern) -> list[Interval]:
    """Producer box needed to compute every point of `consumer_box`."""
    out = []
    for (lo, hi), (stride, wlo, whi) in zip(consumer_box, access.dims):
        assert lo <= hi, "empty consumer box"
        out.append((lo * stride + wlo, hi * stride + whi))
    return out


def footprint_at(graph: PipelineGraph, consumer: str, tile: tuple[int, ...],
                 ) -> dict[str, list[Interval]]:
    """Transitive producer regions needed for one consumer tile at the origin.

    Returns a map func -> bounding-box region for every func reachable from
    `consumer` (the consumer itself included, as the tile box).
    """
    cfunc = graph.func(consumer)
    if len(tile) != cfunc.ndim:
        raise PipelineError(f"tile rank {len(tile)} != func rank {cfunc.ndim}")
    regions: dict[str, list[list[Interval]]] = {consumer: [[(0, t - 1) for t in tile]]}
    # Walk consumers-before-producers.
    for name in reversed(graph.topo_order):
        if name not in regions:
            continue
        box = bounding_box(regions[name])
        regions[name] = [box]
        for st in graph.func(name).stages:
            for a in st.accesses:
                regions.setdefault(a.producer, []).append(required_region(box, a))
    return {name: bounding_box(boxes) for name, boxes in regions.items()}


# ---------------------------------------------------------------------------
# Parser for the line-oriented description format:
#   func NAME dims (x=64,y=64) bytes 4 [external]
#   stage NAME ops add=2,mul=1
#   tree NAME ((.,.),.)
#   read NAME from PRODUCER dim x stride 1 lo -1 hi 1 dim y stride 1 lo 0 hi 0
#   output NAME
# ---------------------------------------------------------------------------

_FUNC_RE = re.compile(
    r"func\s+(\w+)\s+dims\s+\(([^)]*)\)\s+bytes\s+(\d+)(\s+external)?\s*$")
_READ_RE = re.compile(r"read\s+(\w+)\s+from\s+(\w+)\s+(.*)$")
_READ_DIM_RE = re.compile(r"dim\s+(\w+)\s+stride\s+(-?\d+)\s+lo\s+(-?\d+)\s+hi\s+(-?\d+)")


def _parse_tree(text: str):
    """Nested-paren expression-tree shapes: '.' is a leaf, (...) an internal node."""
    text = text.replace(",", " ")
    pos = 0

    def node():
        nonlocal pos
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            raise PipelineError("bad tree shape: unexpected end")
        if text[pos] == ".":
            pos += 1
            return None
        if text[pos] != "(":
            raise PipelineError(f"bad tree shape near {text[pos:]!r}")
        pos += 1
        children = []
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos < len(text) and text[pos] == ")":
                pos += 1
                return tuple(children)
            children.append(node())

    result = node()
    return result


def parse_pipeline(text: str, name: str = "pipeline") -> PipelineGraph:
    """Parse the textual pipeline format into a validated PipelineGraph."""
    funcs: dict[str, dict] = {}
    order: list[str] = []
    outputs: list[str] = []

    def err(lineno, msg):
        raise PipelineError(f"line {lineno}: {msg}")

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("func "):
            m = _FUNC_RE.match(line)
            if not m:
                err(lineno, f"bad func declaration: {raw.strip()!r}")
            fname, dimtext, nbytes, external = m.groups()
            if fname in funcs:
                err(lineno, f"duplicate func {fname}")
            dims = []
            for part in dimtext.split(","):
                part = part.strip()
                if not part:
                    continue
                if "=" not in part:
                    err(lineno, f"bad dim spec {part!r}")
                dname, extent = part.split("=")
                try:
                    extent = int(extent)
                except ValueError:
                    err(lineno, f"bad extent {extent!r}")
                if extent < 1:
                    err(lineno, f"func {fname}: non-positive extent {extent} for {dname.strip()}")
                dims.append((dname.strip(), extent))
            funcs[fname] = {
                "dims": tuple(dims),
                "bytes": int(nbytes),
                "external": bool(external),
                "stages": [],
            }
            order.append(fname)
        elif line.startswith("stage "):
            parts = line.split()
            fname = parts[1]
            if fname not in funcs:
                err(lineno, f"stage for undeclared func {fname}")
            hist = {}
            if len(parts) > 2:
                if parts[2] != "ops":
                    err(lineno, f"expected 'ops', got {parts[2]!r}")
                for item in (i for tok in parts[3:] for i in tok.split(",")):
                    if not item:
                        continue
                    op, _, count = item.partition("=")
                    if op not in OP_CLASSES:
                        err(lineno, f"unknown op class {op!r} (known: {', '.join(OP_CLASSES)})")
                    count = int(count)
                    if count < 0:
                        err(lineno, f"negative op count for {op}")
                    hist[op] = count
            funcs[fname]["stages"].append({"ops": hist, "reads": [], "tree": None})
        elif line.startswith("tree "):
            _, fname, rest = line.split(None, 2)
            if fname not in funcs or not funcs[fname]["stages"]:
                err(lineno, f"tree for func {fname} without a stage")
            funcs[fname]["stages"][-1]["tree"] = _parse_tree(rest)
        elif line.startswith("read "):
            m = _READ_RE.match(line)
            if not m:
                err(lineno, f"bad read declaration: {raw.strip()!r}")
            fname, producer, dimtext = m.groups()
            if fname not in funcs:
                err(lineno, f"read for undeclared func {fname}")
            if not funcs[fname]["stages"]:
                funcs[fname]["stages"].append({"ops": {}, "reads": [], "tree": None})
            dims = []
            for dm in _READ_DIM_RE.finditer(dimtext):
                _, stride, lo, hi = dm.groups()
                dims.append((int(stride), int(lo), int(hi)))
            if len(dims) != len(funcs[fname]["dims"]):
                err(lineno, f"read of {producer} has {len(dims)} dims, func {fname} "
                            f"has {len(funcs[fname]['dims'])}")
            try:
                acc = AccessPattern(producer=producer, dims=tuple(dims))
            except PipelineError as e:
                err(lineno, str(e))
            funcs[fname]["stages"][-1]["reads"].append(acc)
        elif line.startswith("output "):
            outputs.append(line.split()[1])
        else:
            err(lineno, f"unrecognized directive: {raw.strip()!r}")

    nodes = []
    for fname in order:
        spec = funcs[fname]
        stages = tuple(
            StageDef(accesses=tuple(st["reads"]), op_histogram=st["ops"], expr_tree=st["tree"])
            for st in spec["stages"]
        )
        if spec["external"] and stages:
            raise PipelineError(f"external input {fname} must not have stages")
        nodes.append(FuncNode(
            name=fname, dims=spec["dims"], stages=stages,
            elem_bytes=spec["bytes"], is_external_input=spec["external"],
        ))
    return PipelineGraph(name=name, funcs=tuple(nodes), outputs=tuple(outputs))


def load_pipeline(path) -> PipelineGraph:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    import os
    return parse_pipeline(text, name=os.path.splitext(os.path.basename(str(path)))[0])


def builtin_pipeline(name: str) -> PipelineGraph:
    """Load one of the packaged benchmark pipelines by name."""
    from importlib import resources
    ref = resources.files(__package__) / "pipelines" / f"{name}.txt"
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        avail = sorted(p.name[:-4] for p in (resources.files(__package__)
                                             / "pipelines").iterdir()
                       if p.name.endswith(".txt"))
        raise PipelineError(f"no builtin pipeline {name!r} (have: {', '.join(avail)})")
    return parse_pipeline(text, name=name)
