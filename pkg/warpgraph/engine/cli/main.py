import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from colorama import Fore

from warpgraph.engine import Warpgraph
from warpgraph.engine.adjoint.suite import run_grad_check
from warpgraph.engine.bench import discover_systems, run_benchmark, write_curves_svg, write_oracle_factors
from warpgraph.engine.config import default_thread_count
from warpgraph.engine.errors import (
    ConfigError,
    DegenerateScene,
    DimensionMismatch,
    FormatError,
    IoError,
    WarpgraphError,
)
from warpgraph.engine.frames import load_feature_map, load_frame_dir
from warpgraph.engine.graph import load_graph_json
from warpgraph.engine.solver import PreconditionerKind
from warpgraph.engine.synth import (
    JumpLevel,
    SceneConfig,
    evaluate,
    export_scene,
    filter_pair,
    generate_scene,
    load_gt_flow,
    load_scene,
    scene_dir_name,
)
from warpgraph.engine.tracker import TrackerConfig, export_result, refine_with_depth, track
from warpgraph.engine.utils import parse_seed_range

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_CHECK_FAILED = 3

INPUT_ERRORS = (IoError, FormatError, ConfigError, DimensionMismatch)


def _say(color: str, message: str):
    print(color + message + Fore.RESET)


def _report_error(e: BaseException):
    payload = {"error": type(e).__name__, "message": str(e)}
    path = getattr(e, "path", None)
    if path:
        payload["path"] = path
    print(json.dumps(payload), file=sys.stderr)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tracker_config(args, **overrides) -> TrackerConfig:
    cfg = TrackerConfig.from_file(args.config)
    if getattr(args, "preconditioner", None):
        overrides["preconditioner"] = {
            "kind": args.preconditioner,
            "factor_path": getattr(args, "factor", None),
        }
    return cfg.with_updates(**overrides) if overrides else cfg


def _evaluation(graph, gt_path: Optional[str]) -> Optional[dict]:
    if not gt_path:
        return None
    report = evaluate(graph, load_gt_flow(gt_path))
    _say(Fore.GREEN, f"EPE mean {report.epe_mean:.6f} m, median {report.epe_median:.6f} m")
    return report.to_json()


def cmd_track(args) -> int:
    source = load_frame_dir(args.source)
    target = load_frame_dir(args.target)
    features = None
    if args.features_source or args.features_target:
        if not (args.features_source and args.features_target):
            raise ConfigError("--features-source and --features-target go together")
        features = (load_feature_map(args.features_source), load_feature_map(args.features_target))

    overrides = {"dump_systems": True} if args.dump_systems else {}
    if features is not None:
        overrides["feature_source"] = "loaded_nrfm"
    cfg = _tracker_config(args, **overrides)
    out = _out_dir(args)
    dump_dir = out / "systems" if cfg.dump_systems else None

    result = track(source, target, features=features, cfg=cfg, dump_dir=dump_dir)
    if args.refine:
        refined = refine_with_depth(result, source, target, cfg)
        result.graph = refined.graph
        result.energy_history.extend(refined.energy_history[1:])
        result.energy_breakdown.extend(refined.energy_breakdown[1:])
        result.solve_reports.extend(refined.solve_reports)
        result.step_sizes.extend(refined.step_sizes)

    export_result(result, out, _evaluation(result.graph, args.gt), include_timings=not args.no_timings)
    _say(Fore.GREEN, f"energy {result.energy_history[0]:.6g} -> {result.energy_history[-1]:.6g}, wrote {out}")
    return EXIT_OK


def cmd_refine(args) -> int:
    source = load_frame_dir(args.source)
    target = load_frame_dir(args.target)
    graph = load_graph_json(args.graph)
    result = refine_with_depth(graph, source, target, _tracker_config(args))
    out = _out_dir(args)
    export_result(result, out, _evaluation(result.graph, args.gt), include_timings=not args.no_timings)
    _say(Fore.GREEN, f"refined over {len(result.step_sizes)} accepted steps, wrote {out}")
    return EXIT_OK


def cmd_bench_pcg(args) -> int:
    systems = discover_systems(args.corpus)
    if not systems:
        raise IoError(f"no .nrab systems in {args.corpus}", path=args.corpus)
    kinds = [PreconditionerKind(k.strip()) for k in args.kinds.split(",") if k.strip()]
    out = _out_dir(args)
    factors_dir = args.factors
    if args.write_oracle_factors:
        factors_dir = factors_dir or str(out / "factors")
        written = write_oracle_factors(systems, factors_dir)
        _say(Fore.GREEN, f"wrote {len(written)} exact-inverse factors to {factors_dir}")

    report = run_benchmark(
        systems,
        kinds,
        factors_dir=factors_dir,
        tol=args.tol,
        max_iters=args.max_iters,
        with_kappa=not args.no_kappa,
        threads=args.threads,
    )
    report.write(out)
    if args.svg:
        write_curves_svg(report.curves(), out / "bench_curves.svg")

    for failure, message in report.failures:
        _say(Fore.YELLOW, f"{failure}: {message}")
    if report.all_failed:
        _say(Fore.RED, "every system failed")
        return EXIT_INTERNAL
    print(report.summary().to_string(index=False))
    return EXIT_OK


def _scene_configs(args):
    levels = [JumpLevel.parse(level) for level in args.levels.split(",") if level.strip()]
    seeds = parse_seed_range(args.seeds if args.seeds is not None else str(args.seed))
    for seed in seeds:
        for level in levels:
            yield seed, SceneConfig(width=args.width, height=args.height, jump_level=level)


def _export_synthetic(out: Path, seed: int, cfg: SceneConfig) -> int:
    try:
        scene = generate_scene(seed, cfg)
    except DegenerateScene as e:
        _say(Fore.YELLOW, f"seed {seed} level {cfg.jump_level.value}: {e}")
        return 0
    verdict = filter_pair(scene.source, scene.target, scene.pixel_flow())
    export_scene(
        scene,
        out / scene_dir_name(seed, cfg.jump_level),
        extra_meta={"pair_filter": verdict.to_json()},
    )
    return 1


def cmd_gen_synth(args) -> int:
    out = _out_dir(args)
    written = 0
    for seed, cfg in _scene_configs(args):
        token = Warpgraph.set_association_properties({"seed": seed, "jump_level": cfg.jump_level.value})
        try:
            written += _export_synthetic(out, seed, cfg)
        finally:
            Warpgraph.clear_association_properties(token)
    _say(Fore.GREEN, f"wrote {written} scenes to {out}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    results = run_grad_check(probes=args.probes, seed=args.seed)
    failed = False
    for result in results:
        color = Fore.GREEN if result.passed else Fore.RED
        verdict = "PASS" if result.passed else "FAIL"
        _say(
            color,
            f"{result.name:<20} worst {result.worst_rel_error:.3e}  "
            f"threshold {result.threshold:.0e}  probes {result.probes:>4}  {verdict}",
        )
        failed |= not result.passed
    if args.out:
        path = _out_dir(args) / "grad_check.json"
        path.write_text(json.dumps([r.to_json() for r in results], indent=2))
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_eval(args) -> int:
    graph = load_graph_json(args.result)
    report = evaluate(graph, load_gt_flow(args.gt))
    print(json.dumps(report.to_json(), indent=2))
    return EXIT_OK


def cmd_dump_systems(args) -> int:
    if not args.scenes and args.seeds is None:
        raise ConfigError("dump-systems needs --scenes or --seeds")
    out = _out_dir(args)
    base = _tracker_config(args, dump_systems=True)
    pairs = [(Path(d).name, load_scene(d)) for d in args.scenes or []]
    if args.seeds is not None:
        for seed, cfg in _scene_configs(args):
            try:
                pairs.append((scene_dir_name(seed, cfg.jump_level), generate_scene(seed, cfg)))
            except DegenerateScene as e:
                _say(Fore.YELLOW, f"seed {seed} level {cfg.jump_level.value}: {e}")

    dumped = 0
    for name, scene in pairs:
        result = track(scene.source, scene.target, cfg=base.with_updates(run_id=name), dump_dir=out)
        dumped += len(result.dumped_systems)
    _say(Fore.GREEN, f"dumped {dumped} systems from {len(pairs)} pairs into {out}")
    return EXIT_OK


def _add_output_flags(parser):
    parser.add_argument("--gt", help="gt_flow.json to report EPE against")
    parser.add_argument("--no-timings", action="store_true", help="omit wall-clock fields from telemetry")


def _add_scene_flags(parser, seeds_default=None):
    parser.add_argument("--seeds", default=seeds_default, help='seed range such as "0..4" or "1,3"')
    parser.add_argument("--levels", default="2,4,8,16", help="frame-jump levels")
    parser.add_argument("--width", type=int, default=320)
    parser.add_argument("--height", type=int, default=240)


def _global_flags(suppress_defaults: bool = False) -> argparse.ArgumentParser:
    """Flags every subcommand accepts, before or after its name.

    The copy attached to the subparsers suppresses its defaults so a flag
    given before the subcommand is not reset by the subparser.
    """

    def default(value):
        return argparse.SUPPRESS if suppress_defaults else value

    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--threads", type=int, default=default(None), help="worker threads for corpus benchmarking")
    parent.add_argument("--seed", type=int, default=default(0))
    parent.add_argument("--out", default=default("."), help="output directory")
    parent.add_argument("--config", default=default(None), help="JSON tracker config; flags override it")
    parent.add_argument("--verbose", action="store_true", default=default(False))
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warpgraph",
        description="Non-rigid RGB-D frame-pair tracking",
        parents=[_global_flags()],
    )
    common = _global_flags(suppress_defaults=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_command(name: str, **kwargs) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_command("track", help="track a target frame onto a source frame")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--features-source")
    p.add_argument("--features-target")
    p.add_argument("--refine", action="store_true", help="run depth-only refinement afterwards")
    p.add_argument("--dump-systems", action="store_true")
    p.add_argument("--preconditioner", choices=[k.value for k in PreconditionerKind])
    p.add_argument("--factor", help="NRPC factor for loaded preconditioners")
    _add_output_flags(p)
    p.set_defaults(handler=cmd_track)

    p = add_command("refine", help="depth-only refinement of a saved graph")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--graph", required=True)
    _add_output_flags(p)
    p.set_defaults(handler=cmd_refine)

    p = add_command("bench-pcg", help="benchmark preconditioners over an NRAB corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kinds", default="identity,block_jacobi,incomplete_cholesky")
    p.add_argument("--factors", help="directory holding <system>.<kind>.nrpc factors")
    p.add_argument("--write-oracle-factors", action="store_true")
    p.add_argument("--tol", type=float, default=1e-6, help="absolute residual target")
    p.add_argument("--max-iters", type=int, default=None, help="iteration cap (default 10 per unknown)")
    p.add_argument("--no-kappa", action="store_true")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(handler=cmd_bench_pcg)

    p = add_command("gen-synth", help="generate synthetic scene pairs")
    _add_scene_flags(p)
    p.set_defaults(handler=cmd_gen_synth)

    p = add_command("grad-check", help="finite-difference check of all derivatives")
    p.add_argument("--probes", type=int, default=200)
    p.set_defaults(handler=cmd_grad_check)

    p = add_command("eval", help="compare a result graph to ground-truth flow")
    p.add_argument("--result", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(handler=cmd_eval)

    p = add_command("dump-systems", help="collect GN systems from tracking runs")
    p.add_argument("--scenes", nargs="*", help="exported scene directories")
    _add_scene_flags(p)
    p.set_defaults(handler=cmd_dump_systems)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.threads is None:
        args.threads = default_thread_count()
    Warpgraph.init(app_name="warpgraph")

    try:
        return args.handler(args)
    except INPUT_ERRORS as e:
        _report_error(e)
        return EXIT_INPUT
    except WarpgraphError as e:
        _report_error(e)
        return EXIT_INTERNAL
    except Exception as e:
        logging.exception("unexpected failure")
        _report_error(e)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
