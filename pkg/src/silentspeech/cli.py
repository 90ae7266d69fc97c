"""Command line front end.

Each subcommand runs one pipeline stage against the directories named in an
INI config (or the built-in desk-scale defaults); `run-all` chains every
stage, and `report` collects finished cells into a comparison table plus a
WER-versus-K figure.

Exit codes: 0 success, 1 stage failure, 2 usage error, 3 missing input
artifact (an earlier stage was not run).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import decoder, experiment, scoring
from .corpus import load_transcripts
from .experiment import ExperimentConfig, MissingArtifact


def _config_from_args(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = experiment.load_config(experiment._require(args.config))
    else:
        cfg = ExperimentConfig()
    overrides = {}
    for attr, key in (("seed", "seed"), ("feature", "feature_kind"), ("k", "k"),
                      ("corpus_dir", "corpus_dir"), ("work_dir", "work_dir"),
                      ("results_dir", "results_dir")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="INI", help="experiment config file")
    sub.add_argument("--seed", type=int, help="override the experiment seed")
    sub.add_argument("--feature", choices=("dct", "dae"),
                     help="override the feature kind")
    sub.add_argument("--k", type=int, help="override features per modality")
    sub.add_argument("--corpus-dir", dest="corpus_dir", type=Path)
    sub.add_argument("--work-dir", dest="work_dir", type=Path)
    sub.add_argument("--results-dir", dest="results_dir", type=Path)


def cmd_gen_corpus(args) -> int:
    cfg = _config_from_args(args)
    manifest = experiment.stage_gen_corpus(cfg)
    print(f"wrote {len(manifest.train_ids)} train / {len(manifest.test_ids)} "
          f"test utterances to {cfg.corpus_dir}")
    return 0


def cmd_extract_dct(args) -> int:
    cfg = _config_from_args(args)
    outputs = experiment.stage_extract_dct(cfg)
    print(f"wrote {len(outputs)} feature files to {experiment.features_dir(cfg)}")
    return 0


def cmd_train_dae(args) -> int:
    cfg = _config_from_args(args)
    outputs = experiment.stage_train_dae(cfg)
    for p in outputs:
        print(f"wrote {p}")
    return 0


def cmd_extract_dae(args) -> int:
    cfg = _config_from_args(args)
    outputs = experiment.stage_extract_dae(cfg)
    print(f"wrote {len(outputs)} feature files to {experiment.features_dir(cfg)}")
    return 0


def cmd_mvn_stats(args) -> int:
    cfg = _config_from_args(args)
    print(f"wrote {experiment.stage_mvn_stats(cfg)}")
    return 0


def cmd_train_gmm(args) -> int:
    cfg = _config_from_args(args)
    print(f"wrote {experiment.stage_train_gmm(cfg)}")
    return 0


def cmd_align(args) -> int:
    cfg = _config_from_args(args)
    print(f"wrote {experiment.stage_align(cfg)}")
    return 0


def cmd_train_dnn(args) -> int:
    cfg = _config_from_args(args)
    print(f"wrote {experiment.stage_train_dnn(cfg)}")
    return 0


def cmd_build_graph(args) -> int:
    cfg = _config_from_args(args)
    print(f"wrote {experiment.stage_build_graph(cfg)}")
    return 0


def cmd_decode(args) -> int:
    cfg = _config_from_args(args)
    systems = ("gmm", "dnn") if args.system == "both" else (args.system,)
    for system in systems:
        for p in experiment.stage_decode(cfg, system):
            print(f"wrote {p}")
    return 0


def cmd_score(args) -> int:
    if args.ref or args.hyp:
        if not (args.ref and args.hyp):
            print("error: --ref and --hyp must be given together",
                  file=sys.stderr)
            return 2
        refs = {u: t.words for u, t in
                load_transcripts(experiment._require(args.ref)).items()}
        hyps = decoder.read_hypotheses(experiment._require(args.hyp))
        report = scoring.score_corpus(refs, hyps)
        print(scoring.format_report(report))
        return 0
    cfg = _config_from_args(args)
    out = experiment.stage_score(cfg)
    print((out.parent / "report.txt").read_text(), end="")
    print(f"wrote {out}")
    return 0


def cmd_report(args) -> int:
    cfg = _config_from_args(args)
    print(experiment.compare_features_report(cfg.results_dir))
    print(f"\nwrote {cfg.results_dir / 'summary.csv'} and "
          f"{cfg.results_dir / 'wer_vs_k.png'}")
    return 0


def cmd_run_all(args) -> int:
    cfg = _config_from_args(args)
    features = args.features.split(",") if args.features else [cfg.feature_kind]
    ks = [int(x) for x in args.k_values.split(",")] if args.k_values else [cfg.k]
    table = ""
    for kind in features:
        for k in ks:
            cell = dataclasses.replace(cfg, feature_kind=kind, k=k)
            print(f"=== running {cell.tag} ===")
            table = experiment.run_all(cell)
    print(table)
    return 0


_COMMANDS = [
    ("gen-corpus", cmd_gen_corpus, "synthesize a desk-scale corpus"),
    ("extract-dct", cmd_extract_dct, "DCT features for every utterance"),
    ("train-dae", cmd_train_dae, "pretrain + fine-tune per-modality autoencoders"),
    ("extract-dae", cmd_extract_dae, "autoencoder features for every utterance"),
    ("mvn-stats", cmd_mvn_stats, "train-set mean/variance for normalization"),
    ("train-gmm", cmd_train_gmm, "flat start + Viterbi-EM monophone training"),
    ("align", cmd_align, "force-align the training set"),
    ("train-dnn", cmd_train_dnn, "pretrain + cross-entropy train the hybrid net"),
    ("build-graph", cmd_build_graph, "compile the bigram decoding graph"),
    ("decode", cmd_decode, "Viterbi decode the test set"),
    ("score", cmd_score, "word error rate from references and hypotheses"),
    ("report", cmd_report, "collect finished cells into a comparison table"),
    ("run-all", cmd_run_all, "every stage in order, optionally over a grid"),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="silentspeech",
        description="silent speech recognition pipeline on tongue/lip image streams")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, func, help_text in _COMMANDS:
        sub = subs.add_parser(name, help=help_text)
        _add_common(sub)
        sub.set_defaults(func=func)
        if name == "decode":
            sub.add_argument("--system", choices=("gmm", "dnn", "both"),
                             default="both")
        elif name == "score":
            sub.add_argument("--ref", help="reference transcripts file")
            sub.add_argument("--hyp", help="hypothesis transcripts file")
        elif name == "run-all":
            sub.add_argument("--features", metavar="KIND[,KIND]",
                             help="feature kinds to run (default: configured)")
            sub.add_argument("--k-values", dest="k_values", metavar="K[,K]",
                             help="K values to run (default: configured)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
