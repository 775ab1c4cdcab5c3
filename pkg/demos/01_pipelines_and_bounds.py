"""Describing pipelines and inferring producer footprints.

A pipeline is a DAG of funcs over rectangular integer domains.  Each func
has one or more stages; a stage records an op histogram and the windows it
reads from producers (per-dim stride plus a lo/hi offset range).  From a
consumer tile, interval arithmetic pushes required regions backwards
through the DAG -- the same bounds inference the scheduler uses to size
fused allocations.
"""

from gpusched.pipeline import builtin_pipeline, footprint_at, parse_pipeline

SRC = """
func image dims (x=512, y=512) bytes 4 external
func blur_x dims (x=512, y=512) bytes 4
stage blur_x ops add=2 mul=1
read blur_x from image dim x stride 1 lo -1 hi 1 dim y stride 1 lo 0 hi 0
func blur_y dims (x=512, y=512) bytes 4
stage blur_y ops add=2 mul=1
read blur_y from blur_x dim x stride 1 lo 0 hi 0 dim y stride 1 lo -1 hi 1
output blur_y
"""


def main():
    graph = parse_pipeline(SRC, name="blur")
    print(f"pipeline {graph.name!r}")
    for f in graph.funcs:
        kind = "external input" if f.is_external_input else f"{len(f.stages)} stage(s)"
        print(f"  {f.name}: dims {f.dims}, {kind}")
    print(f"topological order: {' -> '.join(graph.topo_order)}")

    # What does one 32x32 output tile need from each producer?
    tile = (32, 32)
    print(f"\nfootprints for one {tile[0]}x{tile[1]} blur_y tile:")
    for func, box in footprint_at(graph, "blur_y", tile).items():
        vol = 1
        for lo, hi in box:
            vol *= hi - lo + 1
        print(f"  {func}: region {box} ({vol} points)")
    print("\nNote the one-pixel halo growing through each stencil stage --")
    print("this is exactly the overlap a fused schedule recomputes or stages.")

    # The repo ships benchmark pipelines too:
    chain = builtin_pipeline("stencil_chain")
    print(f"\nbuilt-in {chain.name!r}: {len(chain.funcs)} funcs, "
          f"output {chain.outputs[0]!r}")


if __name__ == "__main__":
    main()
