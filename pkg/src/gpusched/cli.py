"""Command-line interface.

Subcommands: schedule (search, optionally One Shot / Top-k driver modes),
featurize (dump per-stage features for a schedule), predict (cost-model
breakdown), train (fit weights to benchmarked samples), autotune (iterated
search against the machine oracle).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace

from .costmodel import (TrainConfig, init_weights, load_weights,
                        make_training_sample, pipeline_cost, save_weights, train)
from .driver import RunConfig, run_autotune, run_one_shot, run_top_k
from .featurize import featurize, format_features
from .loopnest import initial_state, lower, pretty_print, replay_schedule, schedule_dump
from .machine import MachineParams
from .options import (Thresholds, enumerate_compute_locations,
                      enumerate_serial_tilings, enumerate_thread_tilings)
from .pipeline import load_pipeline
from .search import SearchConfig, schedule_with_freezing


def _machine(args) -> MachineParams:
    if getattr(args, "params", None):
        return MachineParams.from_file(args.params)
    return MachineParams()


def _weights(args, seed=0):
    if getattr(args, "weights", None):
        return load_weights(args.weights)
    return init_weights(seed)


def _search_config(args) -> SearchConfig:
    cfg = SearchConfig(
        beam_size=args.beam_size, num_passes=args.passes,
        penalty_factor=args.penalty_factor, freeze_enabled=args.freeze,
        seed=args.seed, sampling=not args.no_sampling)
    if getattr(args, "thresholds", None):
        cfg = replace(cfg, thresholds=Thresholds.from_file(args.thresholds))
    return cfg


def _dump_options(graph, state):
    print("# option counts per func")
    for func in state.schedulable_funcs():
        node = graph.func(func)
        placements = enumerate_compute_locations(state, func, graph)
        serial = enumerate_serial_tilings(node.extents)
        post = tuple(math.ceil(e / s) for e, s in zip(node.extents, serial[0])) \
            if serial else node.extents
        thread = enumerate_thread_tilings(post)
        print(f"{func}: placements={len(placements)} "
              f"({', '.join(d.kind for d in placements)}) "
              f"serial_tilings={len(serial)} thread_tilings={len(thread)}")
        from .loopnest import apply_decision, Decision
        state = apply_decision(state, func, placements[0]
                               if placements[0].kind != "inline"
                               else Decision("compute_root"))


def cmd_schedule(args) -> int:
    graph = load_pipeline(args.pipeline)
    params = _machine(args)
    if args.dump_options:
        _dump_options(graph, initial_state(graph))
        return 0
    weights = _weights(args, seed=args.seed)
    cfg = _search_config(args)
    if args.mode == "beam":
        ranked = schedule_with_freezing(graph, params, cfg, weights)
        best = ranked[0]
    else:
        run_cfg = RunConfig(
            mode="one_shot" if args.mode == "one_shot" else "top_k",
            samples_per_batch=args.samples, beam_samples=1,
            greedy_samples=args.samples - 1, k=args.k, seed=args.seed,
            beam_size=args.beam_size, num_passes=args.passes,
            freeze_enabled=args.freeze, search=cfg,
            output_dir=args.output_dir)
        if args.mode == "one_shot":
            rec, _ = run_one_shot(graph, params, run_cfg, weights)
        else:
            rec, _ = run_top_k(graph, params, run_cfg, weights)
        best = rec.state
    print(pretty_print(best, params))
    print(f"# predicted cost: {best.cost:.6g}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(schedule_dump(best))
        print(f"# schedule dump written to {args.out}")
    return 0


def cmd_featurize(args) -> int:
    graph = load_pipeline(args.pipeline)
    params = _machine(args)
    with open(args.schedule, encoding="utf-8") as fh:
        state = replay_schedule(graph, fh.read())
    state = lower(state)
    feats = featurize(state, graph, params)
    sys.stdout.write(format_features(feats))
    return 0


def cmd_predict(args) -> int:
    graph = load_pipeline(args.pipeline)
    params = _machine(args)
    weights = _weights(args, seed=args.seed)
    with open(args.schedule, encoding="utf-8") as fh:
        state = replay_schedule(graph, fh.read())
    state = lower(state)
    feats = featurize(state, graph, params)
    total, breakdown = pipeline_cost(feats, weights)
    for (func, si), b in sorted(breakdown.items()):
        print(f"{func} stage {si}: compute={b.compute:.6g} load={b.load:.6g} "
              f"store={b.store:.6g} malloc={b.malloc:.6g} "
              f"parallelism={b.parallelism:.6g} working_set={b.working_set:.6g} "
              f"total={b.total:.6g}")
    print(f"total: {total:.6g}")
    return 0


def cmd_train(args) -> int:
    import glob
    import os
    params = _machine(args)
    dataset = []
    for path in sorted(glob.glob(os.path.join(args.dataset, "*.json"))):
        with open(path, encoding="utf-8") as fh:
            rec = json.load(fh)
        graph = load_pipeline(rec["pipeline"])
        state = lower(replay_schedule(graph, rec["schedule"]))
        feats = featurize(state, graph, params)
        dataset.append(make_training_sample(
            feats, rec["runtime"], pipeline_id=graph.name, schedule_id=path))
    tc = TrainConfig(learning_rate=args.lr, momentum=args.momentum,
                     epochs=args.epochs, seed=args.seed)
    result = train(dataset, tc)
    save_weights(result.weights, args.out)
    print(f"trained on {len(dataset)} samples; final loss {result.final_loss:.6g}; "
          f"weights written to {args.out}")
    return 0


def cmd_autotune(args) -> int:
    graph = load_pipeline(args.pipeline)
    params = _machine(args)
    cfg = RunConfig(
        mode="autotune", samples_per_batch=args.batch_size, beam_samples=1,
        greedy_samples=args.batch_size - 1, iterations=args.iterations,
        seed=args.seed, beam_size=args.beam_size, num_passes=args.passes,
        freeze_enabled=args.freeze, search=_search_config(args),
        output_dir=args.output_dir)
    result = run_autotune(graph, params, cfg)
    for i, rt in enumerate(result.best_runtime_per_iteration):
        print(f"iteration {i}: best runtime {rt:.6g} s")
    print(f"best overall: {result.best.oracle.runtime:.6g} s "
          f"(batch {result.best.batch_index}, seed {result.best.seed})")
    if args.weights_out:
        save_weights(result.weights, args.weights_out)
        print(f"final weights written to {args.weights_out}")
    return 0


def _add_search_flags(p):
    p.add_argument("--beam-size", type=int, default=32)
    p.add_argument("--passes", type=int, default=5)
    p.add_argument("--freeze", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-sampling", action="store_true")
    p.add_argument("--penalty-factor", type=float, default=2.0)
    p.add_argument("--thresholds", help="prune thresholds key=value file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gpusched",
                                 description="GPU autoscheduler for array pipelines")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="search for a schedule")
    p.add_argument("pipeline")
    p.add_argument("--params", help="machine parameters key=value file")
    p.add_argument("--weights", help="cost model weights file")
    p.add_argument("--mode", choices=("beam", "one_shot", "top_k"), default="beam")
    p.add_argument("--samples", type=int, default=80, help="batch size for driver modes")
    p.add_argument("-k", type=int, default=5, help="schedules to benchmark in top_k")
    p.add_argument("--out", help="write a replayable schedule dump here")
    p.add_argument("--output-dir", help="persist per-sample records here")
    p.add_argument("--dump-options", action="store_true",
                   help="print option counts per func and exit")
    _add_search_flags(p)
    p.set_defaults(fn=cmd_schedule)

    p = sub.add_parser("featurize", help="dump per-stage features for a schedule")
    p.add_argument("pipeline")
    p.add_argument("--schedule", required=True, help="schedule dump file")
    p.add_argument("--params")
    p.set_defaults(fn=cmd_featurize)

    p = sub.add_parser("predict", help="cost breakdown for a schedule")
    p.add_argument("pipeline")
    p.add_argument("--schedule", required=True)
    p.add_argument("--weights")
    p.add_argument("--params")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("train", help="fit cost model weights to benchmarked samples")
    p.add_argument("--dataset", required=True,
                   help="directory of sample JSON files (pipeline, schedule, runtime)")
    p.add_argument("--out", required=True, help="weights output file")
    p.add_argument("--params")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("autotune", help="iterated search against the machine oracle")
    p.add_argument("pipeline")
    p.add_argument("--params")
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=80)
    p.add_argument("--output-dir")
    p.add_argument("--weights-out")
    _add_search_flags(p)
    p.set_defaults(fn=cmd_autotune)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error (file): {e}", file=sys.stderr)
    except ValueError as e:
        print(f"error (input): {e}", file=sys.stderr)
    except Exception as e:
        print(f"error ({type(e).__name__}): {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
