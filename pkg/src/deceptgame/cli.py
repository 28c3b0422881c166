"""Command-line entry point: ``deceptgame <subcommand> ...``."""

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import __version__
from .errors import DeceptGameError, FixedPointError, ModelError, NoStrongStrategy
from .experiment import ExperimentSpec, rows_to_csv, run_experiment
from .game import set_default_tolerance, validate, worst_case_value
from .io import (
    deceiver_strategy_from_dict,
    dump_json,
    labels_from_dict,
    labels_to_dict,
    load_config,
    load_json,
    load_posg,
    load_strategy_sets,
    network_config_from_file,
    save_posg,
    solve_result_to_dict,
    strategy_set_to_list,
)
from .milp import build_milp, build_robust_milp_export, export_milp
from .netsec import BASELINES, NetworkConfig, baseline_strategy, generate, state_counts
from .robust import solve_milp_bnb
from .synthesis import SynthesisConfig, generate_strategy_set

EXIT_OK, EXIT_USAGE, EXIT_MODEL, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 2, 3, 4, 5

log = logging.getLogger("deceptgame")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _int_list(text):
    return [int(x) for x in text.replace(",", " ").split()]


def _positive_list(text):
    values = _int_list(text)
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _emit(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        parent = os.path.dirname(out)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _network_config(args):
    cfg = network_config_from_file(args.config) if args.config else NetworkConfig()
    overrides = {}
    if args.layers is not None:
        overrides["layers"] = args.layers
    if args.discount is not None:
        overrides["discount"] = args.discount
    return replace(cfg, **overrides) if overrides else cfg


def cmd_generate(args):
    config = _network_config(args)
    posg, labels = generate(config)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    save_posg(posg, os.path.join(out, "model.json"))
    dump_json(labels_to_dict(labels), os.path.join(out, "labels.json"))
    meta = {"config": config.to_dict(), "counts": state_counts(config.layers),
            "generated": {"states": len(posg.states),
                          "deceiver_states": len(posg.deceiver_states),
                          "infiltrator_states": len(posg.infiltrator_states)}}
    dump_json(meta, os.path.join(out, "meta.json"))
    print(f"wrote {len(posg.states)} states to {out}")
    return EXIT_OK


def cmd_validate(args):
    posg = load_posg(args.model)
    report = validate(posg)
    for v in report:
        print(f"{v.kind}: {v.message} at {v.location}")
    if report:
        return EXIT_MODEL
    print("valid")
    return EXIT_OK


def cmd_synth(args):
    posg = load_posg(args.model)
    cfg = SynthesisConfig(
        strength_threshold=args.kappa,
        n_strategies=args.N,
        restarts=args.restarts or 2 * args.N + 10,
        memory=args.memory,
        rng_seed=args.seed,
        allow_weak_fill=args.allow_weak_fill,
    )
    result = generate_strategy_set(posg, cfg)
    text = dump_json(strategy_set_to_list(result))
    _emit(text, args.out)
    if args.out not in (None, "-"):
        stats = dict(result.stats, threshold=result.threshold, k=result.memory,
                     returned=len(result.strategies))
        dump_json(stats, args.out + ".stats.json")
    return EXIT_OK


def _solve_groups(posg, paths):
    groups = load_strategy_sets(paths, posg)
    results = {}
    for k in sorted(groups):
        game, strategies = groups[k]
        problem = build_milp(game, strategies)
        results[k] = (game, strategies, solve_milp_bnb(game, strategies, problem))
    return results


def cmd_solve(args):
    posg = load_posg(args.model)
    results = _solve_groups(posg, args.strategies)
    if len(results) == 1:
        (_, _, res), = results.values()
        payload = solve_result_to_dict(res)
    else:
        # Mixed memory sizes: one program per size, the worst of them is reported.
        payload = {"per_memory": {str(k): solve_result_to_dict(r)
                                  for k, (_, _, r) in results.items()},
                   "value": max(r.value for _, _, r in results.values())}
    _emit(dump_json(payload), args.out)
    return EXIT_OK


def cmd_eval(args):
    posg = load_posg(args.model)
    groups = load_strategy_sets(args.strategies, posg)
    worst = None
    for k in sorted(groups):
        game, strategies = groups[k]
        if args.policy == "optimal":
            problem = build_milp(game, strategies)
            value = solve_milp_bnb(game, strategies, problem).value
        elif args.policy in BASELINES:
            if not args.labels:
                raise DeceptGameError("baseline policies need --labels")
            labels = labels_from_dict(load_json(args.labels))
            value, _ = worst_case_value(game, baseline_strategy(game, labels, args.policy),
                                        strategies)
        else:
            strategy = deceiver_strategy_from_dict(load_json(args.policy))
            value, _ = worst_case_value(game, strategy, strategies)
        worst = value if worst is None else max(worst, value)
    _emit(f"{worst!r}\n", args.out)
    return EXIT_OK


def cmd_export_milp(args):
    posg = load_posg(args.model)
    groups = load_strategy_sets(args.strategies, posg)
    if len(groups) != 1:
        raise DeceptGameError("export needs strategies of a single memory size")
    (game, strategies), = groups.values()
    _emit(export_milp(build_milp(game, strategies)), args.out)
    return EXIT_OK


def cmd_export_robust_milp(args):
    _emit(build_robust_milp_export(load_posg(args.model)), args.out)
    return EXIT_OK


def cmd_experiment(args):
    settings = load_config(args.spec) if args.spec else {}
    network = NetworkConfig.from_dict(settings.pop("network", {}))
    if args.config:
        network = network_config_from_file(args.config)
    model = labels = None
    model_path = args.model or settings.pop("model", None)
    labels_path = args.labels or settings.pop("labels", None)
    if model_path:
        model = load_posg(model_path)
        labels = labels_from_dict(load_json(labels_path)) if labels_path else None

    def pick(name, cli_value, default):
        if cli_value is not None:
            return cli_value
        return settings.pop(name, default)

    fmt = pick("format", args.format, None)
    spec = ExperimentSpec(
        layers=tuple(pick("layers", args.layers, [4])),
        memory=tuple(pick("memory", args.memory, [1, 2])),
        sizes=tuple(pick("sizes", args.N, [5, 20, 50])),
        seeds=tuple(pick("seeds", args.seeds, [args.seed])),
        out_dir=args.out or settings.pop("out_dir", "results"),
        formats=("csv", "json") if fmt is None else (fmt,),
        network=network,
        restarts=pick("restarts", args.restarts, None),
        threshold=pick("kappa", args.kappa, None),
        model=model,
        labels=labels,
    )
    rows, summary = run_experiment(spec)
    sys.stdout.write(rows_to_csv(rows))
    if summary["violations"]:
        log.warning("ordering checks flagged %d violation(s); see summary.json",
                    len(summary["violations"]))
    return EXIT_INFEASIBLE if summary["failed_rows"] == summary["rows"] else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="deceptgame", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", help="output file or directory ('-' for stdout)")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--tol", type=float, default=None,
                        help="fixed-point residual tolerance (default 1e-10)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a network game model")
    p.add_argument("--layers", type=_positive_int, default=None)
    p.add_argument("--discount", type=float, default=None)
    p.add_argument("--config", help="JSON/TOML network configuration")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", parents=[common], help="check model invariants")
    p.add_argument("model")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", parents=[common], help="synthesize infiltrator strategies")
    p.add_argument("model")
    p.add_argument("-k", "--memory", type=_positive_int, default=1)
    p.add_argument("-N", type=_positive_int, default=10)
    p.add_argument("--kappa", type=float, default=None,
                   help="strength threshold (default: value of the uniform strategy)")
    p.add_argument("--restarts", type=_positive_int, default=None)
    p.add_argument("--allow-weak-fill", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve", parents=[common], help="robust deceiver strategy")
    p.add_argument("model")
    p.add_argument("strategies", nargs="+")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", parents=[common], help="worst-case value of a deceiver policy")
    p.add_argument("model")
    p.add_argument("policy", help="optimal | always_engage | always_block | solve-result file")
    p.add_argument("strategies", nargs="+")
    p.add_argument("--labels", help="labels file written by 'generate'")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-milp", parents=[common], help="LP-format stage-2 program")
    p.add_argument("model")
    p.add_argument("strategies", nargs="+")
    p.set_defaults(func=cmd_export_milp)

    p = sub.add_parser("export-robust-milp", parents=[common],
                       help="annotated robust program with symbolic infiltrator probabilities")
    p.add_argument("model")
    p.set_defaults(func=cmd_export_robust_milp)

    p = sub.add_parser("experiment", parents=[common], help="sweep layers x memory x N x seeds")
    p.add_argument("--spec", help="JSON/TOML experiment specification")
    p.add_argument("--config", help="JSON/TOML network configuration")
    p.add_argument("--model", help="model file to use instead of the network generator")
    p.add_argument("--labels")
    p.add_argument("--layers", type=_positive_list, default=None)
    p.add_argument("--memory", "-k", type=_positive_list, default=None)
    p.add_argument("-N", type=_positive_list, default=None)
    p.add_argument("--seeds", type=_int_list, default=None)
    p.add_argument("--restarts", type=_positive_int, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.tol is not None:
            set_default_tolerance(args.tol)
        return args.func(args)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except NoStrongStrategy as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except FixedPointError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (DeceptGameError, ValueError, OSError) as exc:
        # Bad inputs: mismatched strategy files, unreadable paths, malformed configs.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
