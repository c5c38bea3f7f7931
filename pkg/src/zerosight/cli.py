"""Command line entry point: ``zerosight <subcommand> ...``.

Exit status is 0 on success, 2 on a configuration error and 3 when training
aborts on a non-finite value.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import RunConfig
from .exceptions import ConfigurationError, NumericalError, ShapeError
from .serialization import FormatError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _synth_gen(args) -> int:
    from .data import synth_gen
    info = synth_gen(args.classes, args.per_class, args.size, args.seed, args.out)
    print(f"wrote {args.classes * args.per_class} images to {args.out} "
          f"(nearest-centroid accuracy {info['nearest_centroid_accuracy']:.3f})")
    return EXIT_OK


def _train(args) -> int:
    from .harness import train
    config = RunConfig.load(args.config)
    if args.output_dir:
        config = config.replace(output_dir=args.output_dir)
    result = train(config)
    if result.history:
        last = result.history[-1]
        print(f"epoch {last['epoch']} total loss {last['total']:.6f}")
    print(f"checkpoints in {result.output_dir}")
    return EXIT_OK


def _print_report(report) -> None:
    for name, value in report.rows():
        print(f"{name}\t{value}")


def _eval(args) -> int:
    from .harness import evaluate, evaluate_embedding_files
    if args.embeddings:
        if not args.labels:
            raise ConfigurationError("--embeddings needs --labels")
        report = evaluate_embedding_files(args.embeddings, args.labels, args.mode, args.kmeans_seed or 0,
                                          args.output_dir)
    else:
        if not args.checkpoint:
            raise ConfigurationError("eval needs --checkpoint or --embeddings")
        config = RunConfig.load(args.config) if args.config else None
        report, _ = evaluate(args.checkpoint, config, mode=args.mode, kmeans_seed=args.kmeans_seed,
                             output_dir=args.output_dir)
    _print_report(report)
    return EXIT_OK


def _ablate(args) -> int:
    from .harness import ablation_grid
    config = RunConfig.load(args.config)
    if args.output_dir:
        config = config.replace(output_dir=args.output_dir)
    path = ablation_grid(config)
    print(path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _gradcheck(args) -> int:
    from .gradcheck import CHECKS, run_check
    names = [args.op] if args.op else list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigurationError(f"unknown op {unknown[0]!r}; choose from {', '.join(CHECKS)}")
    failed = 0
    for name in names:
        worst, tol = run_check(name, range(args.seeds))
        ok = worst <= tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name:<20} max rel err {worst:.3e} (tol {tol:.0e})")
    return EXIT_OK if not failed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zerosight", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="write a synthetic shapes dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_synth_gen)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", help="override output_dir from the config")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or an embedding dump")
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=("zsl", "gzsl"), default=None)
    p.add_argument("--config", help="config to use instead of the run.cfg beside the checkpoint")
    p.add_argument("--embeddings", help=".ten embedding matrix to score directly")
    p.add_argument("--labels", help="index,label[,seen] CSV matching --embeddings")
    p.add_argument("--kmeans-seed", type=int, default=None)
    p.add_argument("--output-dir")
    p.set_defaults(func=_eval)

    p = sub.add_parser("ablate", help="run the six-row ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.set_defaults(func=_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--op", help="run a single registered check")
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "eval" and args.mode is None and args.embeddings:
        args.mode = "zsl"
    try:
        return args.func(args)
    except (ConfigurationError, ShapeError, FormatError, FileNotFoundError) as exc:
        print(f"zerosight: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"zerosight: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
