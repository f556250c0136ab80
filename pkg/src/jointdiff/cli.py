"""Command line interface: ``jointdiff {synth,diffuse,eval,train}``.

Exit codes: 0 success, 2 I/O failure, 3 config parse failure,
4 invalid input (malformed file, shape mismatch, bad arguments).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import fileio
from .errors import JointDiffError
from .joint import DiffusionConfig, ProblemInstance, Reference, run_joint_diffusion, tune_hyperparameters
from .ranking import ranking_accuracy, train_linear_ranker
from .synthetic import ToyConfig, run_toy_experiment

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_INVALID = 0, 2, 3, 4

logger = logging.getLogger("jointdiff")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> DiffusionConfig:
    return fileio.read_config(path) if path else DiffusionConfig()


def _check_pairs(pairs, n, path):
    if pairs.size and pairs.max() >= n:
        raise UsageError(f"{path}: index {int(pairs.max())} out of range for {n} instances")


def cmd_synth(args) -> int:
    dcfg = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_toy_experiment(ToyConfig(seed=args.seed), dcfg)
    for name, report in (("gt", result.ground_truth), ("initial", result.initial), ("refined", result.refined)):
        fileio.write_matrix(out / f"{name}.csv", report.matrix)
        if args.heatmap:
            fileio.write_pgm(out / f"{name}.pgm", report.matrix)
    return EXIT_OK


def _read_instance(args) -> ProblemInstance:
    refs_pred = args.ref_pred or []
    refs_feat = args.ref_feat or []
    couples = args.couple or []
    if not refs_pred and not refs_feat:
        raise UsageError("at least one reference required")
    if not len(refs_pred) == len(refs_feat) == len(couples):
        raise UsageError(
            f"got {len(refs_pred)} --ref-pred, {len(refs_feat)} --ref-feat and {len(couples)} --couple; "
            "each reference needs all three"
        )
    main_pred = fileio.read_predictions(args.main_pred)
    main_feat = fileio.read_features(args.main_feat)
    n = main_pred.size
    if main_feat.shape[0] != n:
        raise UsageError(f"{args.main_feat}: {main_feat.shape[0]} rows, but {args.main_pred} has {n} values")
    refs = []
    for pred_path, feat_path, couple in zip(refs_pred, refs_feat, couples):
        pred = fileio.read_predictions(pred_path)
        feat = fileio.read_features(feat_path)
        if feat.shape[0] != pred.size:
            raise UsageError(f"{feat_path}: {feat.shape[0]} rows, but {pred_path} has {pred.size} values")
        if couple == "full":
            if pred.size != n:
                raise UsageError(f"{pred_path}: full coupling needs {n} values, got {pred.size}")
            pairs = None
        else:
            pairs = fileio.read_index_pairs(couple)
            if pairs.size and (pairs[:, 0].max() >= n or pairs[:, 1].max() >= pred.size):
                raise UsageError(f"{couple}: coupling index out of range")
        refs.append(Reference(features=feat, predictions=pred, couples=pairs))
    val = fileio.read_index_pairs(args.val_pairs)
    _check_pairs(val, n, args.val_pairs)
    return ProblemInstance(features=main_feat, predictions=main_pred, refs=refs, val_pairs=val)


def cmd_diffuse(args) -> int:
    inst = _read_instance(args)
    cfg = _load_config(args.config)
    if args.auto_tune:
        cfg = tune_hyperparameters(inst, base=cfg)
        logger.info("tuned config: %s", cfg)
    refined, state = run_joint_diffusion(inst, cfg)
    logger.info("outer iterations %d, validation history %s", state.outer_iterations, state.val_history)
    fileio.write_predictions(args.out, refined)
    acc = ranking_accuracy(refined, inst.val_pairs)
    sys.stdout.write(f"accuracy={fileio.format_accuracy(acc)}\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = fileio.read_predictions(args.pred)
    pairs = fileio.read_index_pairs(args.pairs)
    _check_pairs(pairs, pred.size, args.pairs)
    sys.stdout.write(f"accuracy={fileio.format_accuracy(ranking_accuracy(pred, pairs))}\n")
    return EXIT_OK


def cmd_train(args) -> int:
    feat = fileio.read_features(args.feat)
    pairs = fileio.read_index_pairs(args.pairs)
    _check_pairs(pairs, feat.shape[0], args.pairs)
    val = None
    if args.val_pairs:
        val = fileio.read_index_pairs(args.val_pairs)
        _check_pairs(val, feat.shape[0], args.val_pairs)
    ranker = train_linear_ranker(feat, pairs, val_pairs=val)
    fileio.write_predictions(args.out, ranker.predict(feat))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jointdiff", description="Joint manifold diffusion for predictor combination.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="run the twelve-task toy experiment and write metric matrices")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--heatmap", action="store_true", help="also write grayscale PGM heatmaps")
    p.add_argument("--config", help="diffusion config file (key = value)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("diffuse", help="refine a main predictor against references")
    p.add_argument("--main-pred", required=True)
    p.add_argument("--main-feat", required=True)
    p.add_argument("--ref-pred", action="append", help="repeat once per reference")
    p.add_argument("--ref-feat", action="append", help="repeat once per reference")
    p.add_argument("--couple", action="append", help="coupling pairs file per reference, or 'full'")
    p.add_argument("--val-pairs", required=True)
    p.add_argument("--config")
    p.add_argument("--auto-tune", action="store_true", help="grid-search hyperparameters first")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("eval", help="ranking accuracy of predictions on pairs")
    p.add_argument("--pred", required=True)
    p.add_argument("--pairs", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="fit a linear ranker and write its predictions")
    p.add_argument("--feat", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--val-pairs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"jointdiff: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except fileio.ConfigError as exc:
        print(f"jointdiff: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, fileio.DataFormatError, JointDiffError, ValueError) as exc:
        print(f"jointdiff: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"jointdiff: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
