"""Command-line surface: one subcommand per pipeline stage plus end-to-end
runs, all sharing the key = value config format.

Every subcommand is deterministic given its config and seed. Outputs go to
a fresh directory (or an explicitly forced one) holding the artifacts plus
a manifest that echoes the effective configuration, so a manifest alone
reproduces a run. Exit codes: 0 on success, 1 on usage errors, 2 on data
errors (bad files, malformed configs, impossible requests).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from kmerdiff.encode import EncodingError
from kmerdiff.evaluate import EvalError, cross_validate, evaluate_model, fit_model, learning_curve
from kmerdiff.explain import (
    ExplainError,
    incremental_auc_curve,
    rank_features,
    write_curve_tsv,
    write_ranking_tsv,
)
from kmerdiff.fasta import FastaParseError, SequenceRecord, parse_fasta, sequence_stats
from kmerdiff.kselect import KSelectError, scan_k, write_report_tsv
from kmerdiff.models import ModelError, load_model, save_model
from kmerdiff.pipeline import (
    _MODEL_ALIASES,
    _FIELD_TYPES,
    _stage_seeds,
    ConfigError,
    PipelineError,
    RunConfig,
    balance_stage,
    compare_encodings,
    compare_models,
    encode_stage,
    load_config,
    prepare_out_dir,
    read_encoded_dir,
    run_pipeline,
    select_top_features_quiet,
    write_encoded_dir,
    write_evaluation,
    write_manifest,
)
from kmerdiff.sampling import SamplingError, train_test_split, write_id_list
from kmerdiff.svgplot import svg_bar_chart, svg_line_chart
from kmerdiff.synth import SynthError, generate_dataset, sample_motifs, write_dataset

_SCHEMES = ("sequential", "onehot", "kmer", "graph", "image")
_DEFAULT_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
_THREADS_ENV = "KMERDIFF_THREADS"

_DATA_ERRORS = (
    ConfigError,
    PipelineError,
    FastaParseError,
    EncodingError,
    SamplingError,
    ModelError,
    EvalError,
    KSelectError,
    ExplainError,
    SynthError,
    OSError,
)


class _Parser(argparse.ArgumentParser):
    """argparse reserves exit code 2 for usage errors; here 2 means a data
    error, so usage problems are remapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _positive_int(raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {raw!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _default_threads() -> int:
    raw = os.environ.get(_THREADS_ENV, "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


# --- shared plumbing ---------------------------------------------------------------


def _effective_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the --config file, then --set pairs, then any
    dedicated flag whose destination names a config key."""
    overrides: dict[str, object] = {}
    for item in getattr(args, "set", None) or []:
        key, eq, raw = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = raw.strip()
    for key in _FIELD_TYPES:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return load_config(getattr(args, "config", None), overrides)


def _prepare_out(args: argparse.Namespace) -> Path:
    return prepare_out_dir(args.out, getattr(args, "force", False))


def _emit_manifest(out: Path, config: RunConfig, inputs: dict[str, str] | None = None) -> None:
    path = write_manifest(config, out, threads=1)
    if inputs:
        with open(path, "a", encoding="utf-8") as fh:
            for name, value in sorted(inputs.items()):
                fh.write(f"# input {name} = {value}\n")


def _read_corpus(paths: Sequence[str]) -> list[SequenceRecord]:
    records: list[SequenceRecord] = []
    for path in paths:
        records.extend(parse_fasta(path))
    if not records:
        raise PipelineError(f"no sequences found in {', '.join(paths)}")
    return records


def _float_list(raw: str, flag: str) -> list[float]:
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {raw!r}") from None


def _comparison_lines(label: str, rows) -> list[str]:
    with_cv = any(row.cv_mean is not None for row in rows)
    header = [label, "accuracy", "precision", "recall", "f1", "auc"]
    if with_cv:
        header += ["cv_accuracy_mean", "cv_accuracy_sd", "cv_auc_mean", "cv_auc_sd"]
    lines = ["\t".join(header)]
    for row in rows:
        report = row.report
        values = [
            row.name,
            repr(report.accuracy),
            repr(report.precision),
            repr(report.recall),
            repr(report.f1),
            repr(row.auc),
        ]
        if with_cv:
            if row.cv_mean is None:
                values += ["-", "-", "-", "-"]
            else:
                values += [
                    repr(row.cv_mean["accuracy"]),
                    repr(row.cv_sd["accuracy"]),
                    repr(row.cv_mean["auc"]),
                    repr(row.cv_sd["auc"]),
                ]
        lines.append("\t".join(values))
    return lines


def _ranking_names(dictionary, n_cols: int) -> list[str] | None:
    if dictionary is not None and len(dictionary) == n_cols:
        return dictionary.kmers
    return None


def _write_shap_summary(out: Path, ranking, names, top_n: int) -> None:
    top = ranking.entries[:top_n]
    if not top or top[0][1] <= 0.0:
        return
    svg_bar_chart(
        out / "shap_summary.svg",
        labels=[names[col] if names else f"col{col}" for col, _ in top],
        values=[score for _, score in top],
        title="mean |SHAP| by feature",
        x_label="mean |SHAP|",
    )


# --- subcommands ---------------------------------------------------------------


def cmd_stats(args: argparse.Namespace) -> int:
    rows = []
    outliers = []
    for path in args.fasta:
        records = list(parse_fasta(path))
        stats = sequence_stats(records)
        rows.append((path, stats))
        for index, length in stats.iqr_outliers:
            outliers.append((path, records[index].id, length))
    lines = ["file\tcount\tmin\tmedian\tmean\tmax\toutliers"]
    for path, s in rows:
        if s.count == 0:
            lines.append(f"{path}\t0\t-\t-\t-\t-\t0")
        else:
            lines.append(
                f"{path}\t{s.count}\t{s.min}\t{s.median!r}\t{s.mean!r}\t{s.max}"
                f"\t{len(s.iqr_outliers)}"
            )
    if args.out is None:
        print("\n".join(lines))
        return 0
    out = _prepare_out(args)
    (out / "stats.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with open(out / "outliers.tsv", "w", encoding="utf-8") as fh:
        fh.write("file\tsequence_id\tlength\n")
        for path, record_id, length in outliers:
            fh.write(f"{path}\t{record_id}\t{length}\n")
    _emit_manifest(out, _effective_config(args), {f"fasta{i}": p for i, p in enumerate(args.fasta)})
    print(f"wrote {out / 'stats.tsv'}")
    return 0


def cmd_select_k(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    corpus = _read_corpus(args.fasta)
    out = _prepare_out(args)
    report, spectra = scan_k(
        corpus,
        config.k_min,
        config.k_max,
        config.k_step,
        threads=args.threads,
        smooth_window=config.smooth_window,
    )
    _emit_manifest(out, config, {f"fasta{i}": p for i, p in enumerate(args.fasta)})
    write_report_tsv(report, out / "report.tsv")
    ks = [float(row.k) for row in report.per_k]
    estimates = [float(row.genomic_kmers) for row in report.per_k]
    svg_line_chart(
        out / "estimate.svg",
        [("genomic k-mers", ks, estimates)],
        title=f"k selection (chosen k = {report.chosen_k})",
        x_label="k",
        y_label="estimated genomic k-mers",
    )
    series = []
    for spectrum in spectra:
        xs = sorted(spectrum.histogram)
        series.append(
            (f"k={spectrum.k}", [float(x) for x in xs], [float(spectrum.histogram[x]) for x in xs])
        )
    svg_line_chart(
        out / "spectra.svg",
        series,
        title="k-mer abundance spectra",
        x_label="abundance",
        y_label="distinct k-mers",
        log_y=True,
    )
    print(f"chosen_k\t{report.chosen_k}")
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    records0 = list(parse_fasta(args.class0))
    records1 = list(parse_fasta(args.class1)) if args.class1 else []
    records = records0 + records1
    if not records:
        raise PipelineError("empty corpus")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise PipelineError("duplicate sequence ids across the input files")
    labels = np.array([0] * len(records0) + [1] * len(records1), dtype=np.int64)
    out = _prepare_out(args)
    ds, _ = encode_stage(config, records, labels, out)
    inputs = {"class0": args.class0}
    if args.class1:
        inputs["class1"] = args.class1
    _emit_manifest(out, config, inputs)
    print(f"encoded {ds.features.n_rows} rows x {ds.features.n_cols} columns ({config.scheme})")
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    ds, dictionary, scheme = read_encoded_dir(args.dataset)
    train, test = train_test_split(ds, config.train_ratio, seed=_stage_seeds(config.seed)["split"])
    out = _prepare_out(args)
    _emit_manifest(out, config, {"dataset": args.dataset})
    write_encoded_dir(train, scheme, dictionary, out / "train")
    write_encoded_dir(test, scheme, dictionary, out / "test")
    write_id_list(train.ids, out / "train_ids.txt")
    write_id_list(test.ids, out / "test_ids.txt")
    print(f"split {len(ds)} rows into {len(train)} train / {len(test)} test")
    return 0


def cmd_balance(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    ds, dictionary, scheme = read_encoded_dir(args.dataset)
    out = _prepare_out(args)
    balanced = balance_stage(config, ds, _stage_seeds(config.seed)["smote"], out)
    write_encoded_dir(balanced, scheme, dictionary, out)
    _emit_manifest(out, config, {"dataset": args.dataset})
    before, after = ds.class_counts(), balanced.class_counts()
    print(f"balanced {before[0]}/{before[1]} to {after[0]}/{after[1]} (class0/class1)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    ds, dictionary, _ = read_encoded_dir(args.dataset)
    model = fit_model(
        config.model_kind,
        ds,
        config.train_config(_stage_seeds(config.seed)["model"]),
        threads=args.threads,
    )
    if dictionary is not None:
        model = replace(model, dictionary_hash=dictionary.content_hash())
    out = _prepare_out(args)
    _emit_manifest(out, config, {"dataset": args.dataset})
    save_model(model, out / "model.txt")
    print(f"trained {config.model_kind}: {len(model.trees)} trees on {len(ds)} rows")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_model(args.model_path)
    ds, _, _ = read_encoded_dir(args.dataset)
    report, roc = evaluate_model(model, ds)
    out = _prepare_out(args)
    _emit_manifest(out, _effective_config(args), {"model": args.model_path, "dataset": args.dataset})
    write_evaluation(out, report, roc)
    print(f"accuracy\t{report.accuracy!r}")
    print(f"auc\t{roc.auc!r}")
    return 0


def cmd_cross_validate(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    ds, _, _ = read_encoded_dir(args.dataset)
    seeds = _stage_seeds(config.seed)
    result = cross_validate(
        ds,
        config.cv_folds,
        config.model_kind,
        config.train_config(seeds["cv"]),
        seed=seeds["cv"],
        use_smote=config.use_smote,
        smote_neighbors=config.smote_neighbors,
        threads=args.threads,
    )
    out = _prepare_out(args)
    _emit_manifest(out, config, {"dataset": args.dataset})
    keys = ("accuracy", "precision", "recall", "f1", "auc")
    with open(out / "cv.tsv", "w", encoding="utf-8") as fh:
        fh.write("fold\t" + "\t".join(keys) + "\n")
        for fold in result.folds:
            report = fold.report
            row = (report.accuracy, report.precision, report.recall, report.f1, fold.auc)
            fh.write(f"{fold.fold}\t" + "\t".join(repr(v) for v in row) + "\n")
        fh.write("mean\t" + "\t".join(repr(result.mean[k]) for k in keys) + "\n")
        fh.write("sd\t" + "\t".join(repr(result.sd[k]) for k in keys) + "\n")
    print(f"cv_accuracy\t{result.mean['accuracy']!r}")
    print(f"cv_auc\t{result.mean['auc']!r}")
    return 0


def cmd_learning_curve(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    ds, _, _ = read_encoded_dir(args.dataset)
    fractions = (
        _float_list(args.fractions, "--fractions")
        if args.fractions
        else list(_DEFAULT_FRACTIONS)
    )
    seeds = _stage_seeds(config.seed)
    points = learning_curve(
        ds,
        fractions,
        config.model_kind,
        config.train_config(seeds["model"]),
        seed=seeds["split"],
        train_ratio=config.train_ratio,
    )
    if not points:
        raise EvalError("every fraction was skipped; the dataset is too small")
    out = _prepare_out(args)
    _emit_manifest(out, config, {"dataset": args.dataset})
    with open(out / "curve.tsv", "w", encoding="utf-8") as fh:
        fh.write("fraction\tn_train\ttrain_accuracy\tvalidation_accuracy\n")
        for p in points:
            fh.write(
                f"{p.fraction!r}\t{p.n_train}\t{p.train_accuracy!r}\t{p.validation_accuracy!r}\n"
            )
    xs = [p.fraction for p in points]
    svg_line_chart(
        out / "curve.svg",
        [
            ("train", xs, [p.train_accuracy for p in points]),
            ("validation", xs, [p.validation_accuracy for p in points]),
        ],
        title="learning curve",
        x_label="training fraction",
        y_label="accuracy",
    )
    print(f"wrote {len(points)} curve points")
    return 0


def cmd_compare_encodings(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    schemes = args.schemes.split(",") if args.schemes else ["sequential", "onehot", "kmer"]
    rows = compare_encodings(config, schemes, threads=args.threads)
    out = _prepare_out(args)
    _emit_manifest(out, config)
    lines = _comparison_lines("scheme", rows)
    (out / "table.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def cmd_compare_models(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    kinds = args.models.split(",") if args.models else ["tree", "forest", "gbdt"]
    rows = compare_models(config, kinds, folds=args.folds, threads=args.threads)
    out = _prepare_out(args)
    _emit_manifest(out, config)
    lines = _comparison_lines("model", rows)
    (out / "table.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    model = load_model(args.model_path)
    ds, dictionary, _ = read_encoded_dir(args.dataset)
    ranking = rank_features(model, ds, threads=args.threads)
    names = _ranking_names(dictionary, model.n_cols)
    out = _prepare_out(args)
    _emit_manifest(out, config, {"model": args.model_path, "dataset": args.dataset})
    write_ranking_tsv(ranking, out / "ranking.tsv", names=names)
    _write_shap_summary(out, ranking, names, config.explain_top)
    shown = ranking.entries[: config.explain_top]
    for rank, (col, score) in enumerate(shown, start=1):
        name = names[col] if names else f"col{col}"
        print(f"{rank}\t{name}\t{score!r}")
    return 0


def cmd_select_features(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    train_ds, dictionary, _ = read_encoded_dir(args.train_dir)
    test_ds, _, _ = read_encoded_dir(args.test_dir)
    seeds = _stage_seeds(config.seed)
    model = fit_model(
        config.model_kind, train_ds, config.train_config(seeds["model"]), threads=args.threads
    )
    ranking = rank_features(model, test_ds, threads=args.threads)
    max_m = min(config.max_m, train_ds.features.n_cols)
    if max_m < 1:
        raise PipelineError("the dataset has no feature columns to select from")
    curve = incremental_auc_curve(
        ranking,
        train_ds,
        test_ds,
        kind=config.model_kind,
        config=config.train_config(seeds["model"]),
        max_m=max_m,
        cv_folds=config.selection_cv_folds,
        cv_seed=seeds["selection_cv"],
    )
    chosen = select_top_features_quiet(curve, config.epsilon, config.patience)
    curve = replace(curve, chosen_m=chosen)
    out = _prepare_out(args)
    _emit_manifest(out, config, {"test": args.test_dir, "train": args.train_dir})
    names = _ranking_names(dictionary, model.n_cols)
    write_ranking_tsv(ranking, out / "ranking.tsv", names=names)
    write_curve_tsv(curve, out / "curve.tsv")
    series = [("test AUC", curve.m_values, curve.test_auc)]
    if curve.cv_auc is not None:
        series.append(("CV AUC", curve.m_values, curve.cv_auc))
    svg_line_chart(
        out / "curve.svg",
        series,
        title="incremental-AUC feature selection",
        x_label="top-m features",
        y_label="AUC",
    )
    print(f"chosen_m\t{chosen}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    motifs: tuple[str, ...] = ()
    if config.insertions_per_sequence > 0 and config.n_class1 > 0:
        motifs = sample_motifs(
            config.n_motifs,
            config.motif_length,
            config.gc_content,
            seed=_stage_seeds(config.seed)["motifs"],
        )
    result = generate_dataset(config.synth_spec(motifs))
    out = _prepare_out(args)
    _emit_manifest(out, config)
    write_dataset(result, out)
    print(
        f"wrote {len(result.class0)} class-0 and {len(result.class1)} class-1 sequences"
        f" ({len(result.motifs)} motifs)"
    )
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    result = run_pipeline(config, args.out, threads=args.threads, force=args.force)
    print(f"out\t{result.out_dir}")
    print(f"accuracy\t{result.accuracy!r}")
    print(f"auc\t{result.auc!r}")
    if result.chosen_m is not None:
        print(f"chosen_m\t{result.chosen_m}")
    return 0


# --- parser ---------------------------------------------------------------


def _add_config_args(parser: argparse.ArgumentParser, spec_alias: bool = False) -> None:
    if spec_alias:
        parser.add_argument(
            "--spec", "--config", dest="config", metavar="FILE",
            help="key = value config file",
        )
    else:
        parser.add_argument("--config", metavar="FILE", help="key = value config file")
    parser.add_argument(
        "--set", metavar="KEY=VALUE", action="append", default=None,
        help="override one config key (repeatable; dedicated flags win)",
    )
    parser.add_argument("--seed", type=int, metavar="N", help="global random seed")


def _add_out_args(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--out", metavar="DIR", required=required, help="output directory")
    parser.add_argument(
        "--force", action="store_true", help="allow writing into a non-empty directory"
    )


def _add_threads_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--threads", type=_positive_int, default=_default_threads(), metavar="N",
        help=f"worker pool size (default ${_THREADS_ENV} or 1); never changes results",
    )


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", choices=sorted(set(_MODEL_ALIASES)), help="model kind")
    parser.add_argument("--n-trees", type=int, metavar="N", help="ensemble size")
    parser.add_argument("--max-depth", type=int, metavar="D", help="tree depth cap (0 = none)")
    parser.add_argument("--min-samples-leaf", type=int, metavar="N", help="leaf size floor")
    parser.add_argument("--mtry", type=int, metavar="N", help="features tried per split (0 = sqrt)")
    parser.add_argument("--learning-rate", type=float, metavar="X", help="gbdt shrinkage")
    parser.add_argument("--l2-leaf-penalty", type=float, metavar="X", help="gbdt leaf regularizer")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="kmerdiff",
        description="k-mer based differential sequence analysis toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("synth", help="generate a planted-motif corpus")
    _add_config_args(p, spec_alias=True)
    _add_out_args(p)
    p.set_defaults(func=cmd_synth)
    for flag, kind in (
        ("--n-class0", int),
        ("--n-class1", int),
        ("--min-length", int),
        ("--max-length", int),
        ("--gc-content", float),
        ("--n-motifs", int),
        ("--motif-length", int),
        ("--insertions-per-sequence", int),
    ):
        p.add_argument(flag, type=kind, metavar="X")

    p = sub.add_parser("stats", help="sequence length statistics for FASTA files")
    p.add_argument("fasta", nargs="+", metavar="FASTA")
    _add_config_args(p)
    _add_out_args(p, required=False)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("select-k", help="pick the k maximizing estimated genomic k-mers")
    p.add_argument("fasta", nargs="+", metavar="FASTA")
    p.add_argument("--k-min", type=int, metavar="K")
    p.add_argument("--k-max", type=int, metavar="K")
    p.add_argument("--step", dest="k_step", type=int, metavar="N")
    p.add_argument("--smooth-window", type=int, metavar="N")
    _add_config_args(p)
    _add_out_args(p)
    _add_threads_arg(p)
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("encode", help="vectorize one or two FASTA files into a dataset directory")
    p.add_argument("class0", metavar="CLASS0_FASTA")
    p.add_argument("class1", nargs="?", metavar="CLASS1_FASTA")
    p.add_argument("--scheme", choices=_SCHEMES)
    p.add_argument("--k", type=int, metavar="K")
    p.add_argument("--min-count", type=int, metavar="N")
    p.add_argument("--max-len", type=int, metavar="L")
    p.add_argument("--image-width", type=int, metavar="W")
    p.add_argument("--image-height", type=int, metavar="H")
    _add_config_args(p)
    _add_out_args(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("split", help="split a dataset directory into train/ and test/")
    p.add_argument("dataset", metavar="DATASET_DIR")
    p.add_argument("--train-ratio", type=float, metavar="X")
    _add_config_args(p)
    _add_out_args(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("balance", help="oversample the minority class of a dataset directory")
    p.add_argument("dataset", metavar="DATASET_DIR")
    p.add_argument("--smote-neighbors", type=int, metavar="K")
    p.add_argument(
        "--no-smote", dest="use_smote", action="store_false", default=None,
        help="copy the dataset through without synthesis",
    )
    _add_config_args(p)
    _add_out_args(p)
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("train", help="fit a tree-ensemble model on a dataset directory")
    p.add_argument("dataset", metavar="DATASET_DIR")
    _add_model_args(p)
    _add_config_args(p)
    _add_out_args(p)
    _add_threads_arg(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved model against a dataset directory")
    p.add_argument("model_path", metavar="MODEL_FILE")
    p.add_argument("dataset", metavar="DATASET_DIR")
    _add_config_args(p)
    _add_out_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cross-validate", help="stratified k-fold evaluation of one model kind")
    p.add_argument("dataset", metavar="DATASET_DIR")
    p.add_argument("--folds", dest="cv_folds", type=int, metavar="N")
    p.add_argument("--smote-neighbors", type=int, metavar="K")
    p.add_argument(
        "--no-smote", dest="use_smote", action="store_false", default=None,
        help="train each fold on its raw class balance",
    )
    _add_model_args(p)
    _add_config_args(p)
    _add_out_args(p)
    _add_threads_arg(p)
    p.set_defaults(func=cmd_cross_validate)

    p = sub.add_parser("learning-curve", help="accuracy versus training-set size")
    p.add_argument("dataset", metavar="DATASET_DIR")
    p.add_argument(
        "--fractions", metavar="F1,F2,...",
        help="ascending training fractions (default 0.1,0.2,...,1.0)",
    )
    p.add_argument("--train-ratio", type=float, metavar="X")
    _add_model_args(p)
    _add_config_args(p)
    _add_out_args(p)
    p.set_defaults(func=cmd_learning_curve)

    p = sub.add_parser(
        "compare-encodings", help="one corpus, one model, a metrics row per encoding scheme"
    )
    p.add_argument(
        "--schemes", metavar="S1,S2,...",
        help=f"subset of {','.join(_SCHEMES)} (default sequential,onehot,kmer)",
    )
    _add_model_args(p)
    _add_config_args(p)
    _add_out_args(p)
    _add_threads_arg(p)
    p.set_defaults(func=cmd_compare_encodings)

    p = sub.add_parser(
        "compare-models", help="one corpus, one encoding, a metrics row per model kind"
    )
    p.add_argument(
        "--models", metavar="M1,M2,...", help="subset of tree,forest,gbdt (default all three)"
    )
    p.add_argument(
        "--folds", type=int, default=0, metavar="N",
        help="add stratified cross-validation columns (default off)",
    )
    _add_model_args(p)
    _add_config_args(p)
    _add_out_args(p)
    _add_threads_arg(p)
    p.set_defaults(func=cmd_compare_models)

    p = sub.add_parser("explain", help="rank features of a saved model by mean |SHAP|")
    p.add_argument("model_path", metavar="MODEL_FILE")
    p.add_argument("dataset", metavar="DATASET_DIR")
    p.add_argument("--top", dest="explain_top", type=int, metavar="N")
    _add_config_args(p)
    _add_out_args(p)
    _add_threads_arg(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser(
        "select-features", help="incremental-AUC feature count selection from a SHAP ranking"
    )
    p.add_argument("train_dir", metavar="TRAIN_DIR")
    p.add_argument("test_dir", metavar="TEST_DIR")
    p.add_argument("--epsilon", type=float, metavar="X")
    p.add_argument("--patience", type=int, metavar="N")
    p.add_argument("--max-m", type=int, metavar="M")
    p.add_argument("--selection-cv-folds", type=int, metavar="N")
    _add_model_args(p)
    _add_config_args(p)
    _add_out_args(p)
    _add_threads_arg(p)
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("pipeline", help="synthesize/load, encode, train, evaluate, explain, select")
    _add_config_args(p, spec_alias=True)
    _add_out_args(p)
    _add_threads_arg(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        if isinstance(code, int):
            return code
        return 0 if code is None else 1
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        print(f"kmerdiff: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
