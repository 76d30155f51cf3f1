"""End-to-end orchestration: config handling, stage sequencing, and the
directory-per-run artifact layout.

A run is a pure function of its RunConfig. Every stage seed derives from
the single global seed through a fixed spawn order, worker pools never
change result bytes, and the effective config is echoed into the run
directory as a manifest, so a manifest alone reproduces a run.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from kmerdiff import __version__
from kmerdiff.encode import (
    EncodingError,
    EncodingScheme,
    KmerDictionary,
    SparseFeatureMatrix,
    build_kmer_dictionary,
    encode_corpus,
    read_dictionary_tsv,
    read_matrix_tsv,
    write_dictionary_tsv,
    write_matrix_tsv,
)
from kmerdiff.evaluate import MetricsReport, cross_validate, evaluate_model, fit_model, report_lines
from kmerdiff.explain import (
    FeatureRanking,
    SelectionCurve,
    finalize_selection,
    incremental_auc_curve,
    rank_features,
    write_curve_tsv,
    write_ranking_tsv,
)
from kmerdiff.fasta import SequenceRecord, parse_fasta
from kmerdiff.models import TrainConfig, TreeEnsembleModel, save_model
from kmerdiff.sampling import LabeledDataset, smote, train_test_split, write_id_list
from kmerdiff.svgplot import svg_bar_chart, svg_line_chart
from kmerdiff.synth import SynthResult, SynthSpec, generate_dataset, sample_motifs, write_dataset


class ConfigError(ValueError):
    pass


class PipelineError(ValueError):
    pass


_MODEL_ALIASES = {
    "tree": "decision_tree",
    "decision_tree": "decision_tree",
    "forest": "random_forest",
    "random_forest": "random_forest",
    "gbdt": "gbdt",
}


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of every stage, flat. 0 means "auto" for the fields
    whose natural empty value is not a valid setting (max_depth, mtry,
    max_len, image size)."""

    seed: int = 0
    # data source: synthesis by default, or a pair of labeled FASTA files
    class0_fasta: str = ""
    class1_fasta: str = ""
    n_class0: int = 2000
    n_class1: int = 60
    min_length: int = 500
    max_length: int = 1500
    gc_content: float = 0.5
    n_motifs: int = 10
    motif_length: int = 19
    insertions_per_sequence: int = 1
    read_error_rate: float = 0.0
    # encoding
    scheme: str = "kmer"
    k: int = 19
    min_count: int = 2
    max_len: int = 0
    image_width: int = 0
    image_height: int = 0
    # split and balance
    train_ratio: float = 0.7
    use_smote: bool = True
    smote_neighbors: int = 5
    # model
    model: str = "random_forest"
    n_trees: int = 100
    max_depth: int = 0
    min_samples_leaf: int = 1
    mtry: int = 0
    learning_rate: float = 0.1
    l2_leaf_penalty: float = 1.0
    # evaluation
    cv_folds: int = 10
    # attribution and feature selection
    explain_top: int = 10
    max_m: int = 16
    epsilon: float = 0.005
    patience: int = 2
    selection_cv_folds: int = 5
    # k selection scan
    k_min: int = 15
    k_max: int = 31
    k_step: int = 2
    smooth_window: int = 1

    def __post_init__(self):
        if self.model not in _MODEL_ALIASES:
            raise ConfigError(
                f"unknown model {self.model!r}; expected one of {sorted(set(_MODEL_ALIASES))}"
            )
        if not 0.0 < self.train_ratio < 1.0:
            raise ConfigError(f"train_ratio must be in (0, 1), got {self.train_ratio}")

    @property
    def model_kind(self) -> str:
        return _MODEL_ALIASES[self.model]

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            max_depth=self.max_depth or None,
            min_samples_leaf=self.min_samples_leaf,
            n_trees=self.n_trees,
            mtry=self.mtry or None,
            learning_rate=self.learning_rate,
            l2_leaf_penalty=self.l2_leaf_penalty,
            seed=self.seed if seed is None else seed,
        )

    def encoding_scheme(self) -> EncodingScheme:
        return EncodingScheme(
            name=self.scheme,
            k=self.k,
            min_count=self.min_count,
            max_len=self.max_len or None,
            width=self.image_width or None,
            height=self.image_height or None,
        )

    def synth_spec(self, motifs: tuple[str, ...]) -> SynthSpec:
        return SynthSpec(
            n_class0=self.n_class0,
            n_class1=self.n_class1,
            min_length=self.min_length,
            max_length=self.max_length,
            gc_content=self.gc_content,
            motifs=motifs,
            insertions_per_sequence=self.insertions_per_sequence,
            read_error_rate=self.read_error_rate,
            seed=self.seed,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r} expects {kind}, got {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """`key = value` per line; blank lines and # comments ignored."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def load_config(path: str | Path | None, overrides: dict[str, object] | None = None) -> RunConfig:
    """Defaults, then the config file, then explicit overrides."""
    values: dict[str, object] = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        values.update(parse_config_text(text, source=str(path)))
    for key, value in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, str(value)) if isinstance(value, str) else value
    return RunConfig(**values)


def config_lines(config: RunConfig) -> list[str]:
    out = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        out.append(f"{f.name} = {value}")
    return out


def write_manifest(config: RunConfig, out_dir: Path, threads: int) -> Path:
    """Config echo plus provenance. The timestamp is execution metadata,
    not configuration; determinism checks normalize it away. The thread
    count is recorded nowhere because results never depend on it."""
    del threads
    stamp = datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    path = out_dir / "manifest.txt"
    body = [f"# kmerdiff {__version__} run manifest", f"# timestamp = {stamp}"]
    body.extend(config_lines(config))
    path.write_text("\n".join(body) + "\n", encoding="utf-8")
    return path


def prepare_out_dir(out_dir: str | Path, force: bool = False) -> Path:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise PipelineError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- stages --------------------------------------------------------------------


def _stage_seeds(seed: int) -> dict[str, int]:
    names = ("motifs", "split", "smote", "model", "cv", "selection_cv")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(names, children)}


def load_corpus(config: RunConfig, out_dir: Path | None) -> tuple[list[SequenceRecord], np.ndarray, SynthResult | None]:
    """Either parse the two labeled FASTA files named in the config or
    synthesize the default planted-motif corpus (writing its ground truth
    under out_dir/synth when an output directory is given)."""
    if bool(config.class0_fasta) != bool(config.class1_fasta):
        raise ConfigError("class0_fasta and class1_fasta must be given together")
    if config.class0_fasta:
        class0 = list(parse_fasta(config.class0_fasta))
        class1 = list(parse_fasta(config.class1_fasta))
        synth = None
    else:
        motifs = ()
        if config.insertions_per_sequence > 0 and config.n_class1 > 0:
            motifs = sample_motifs(
                config.n_motifs,
                config.motif_length,
                config.gc_content,
                seed=_stage_seeds(config.seed)["motifs"],
            )
        synth = generate_dataset(config.synth_spec(motifs))
        class0, class1 = synth.class0, synth.class1
        if out_dir is not None:
            write_dataset(synth, out_dir / "synth")
    records = class0 + class1
    labels = np.array([0] * len(class0) + [1] * len(class1), dtype=np.int64)
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise PipelineError("duplicate sequence ids across the two classes")
    if len(records) == 0:
        raise PipelineError("empty corpus")
    return records, labels, synth


def encode_stage(
    config: RunConfig, records: list[SequenceRecord], labels: np.ndarray, out_dir: Path | None
) -> tuple[LabeledDataset, KmerDictionary | None]:
    scheme = config.encoding_scheme()
    if scheme.name == "kmer":
        try:
            dictionary = build_kmer_dictionary(records, scheme.k, scheme.min_count)
        except EncodingError:
            # nothing repeated often enough: a legitimate null outcome,
            # encoded as a zero-column matrix rather than an error
            dictionary = None
        if dictionary is None:
            matrix = SparseFeatureMatrix.from_rows([{} for _ in records], 0)
        else:
            matrix, dictionary = encode_corpus(records, scheme, dictionary)
    else:
        matrix, dictionary = encode_corpus(records, scheme)
    ds = LabeledDataset(features=matrix, labels=labels, ids=[r.id for r in records])
    if out_dir is not None:
        write_encoded_dir(ds, scheme, dictionary, out_dir)
    return ds, dictionary


def write_encoded_dir(
    ds: LabeledDataset,
    scheme: EncodingScheme,
    dictionary: KmerDictionary | None,
    enc_dir: Path,
) -> None:
    """Persist a labeled dataset as matrix.tsv + labels.tsv + meta.tsv
    (+ dictionary.tsv for k-mer columns); read_encoded_dir inverts this."""
    enc_dir.mkdir(parents=True, exist_ok=True)
    write_matrix_tsv(ds.features, enc_dir / "matrix.tsv")
    with open(enc_dir / "labels.tsv", "w", encoding="utf-8") as fh:
        fh.write("id\tlabel\n")
        for record_id, label in zip(ds.ids, ds.labels):
            fh.write(f"{record_id}\t{int(label)}\n")
    _write_meta(enc_dir / "meta.tsv", ds.features, scheme, dictionary)
    if dictionary is not None:
        write_dictionary_tsv(dictionary, enc_dir / "dictionary.tsv")


def read_encoded_dir(path: str | Path) -> tuple[LabeledDataset, KmerDictionary | None, EncodingScheme]:
    """Load a dataset directory written by write_encoded_dir."""
    enc = Path(path)
    meta_path = enc / "meta.tsv"
    if not meta_path.is_file():
        raise PipelineError(f"{enc} is not an encoded dataset directory (no meta.tsv)")
    meta: dict[str, str] = {}
    lines = meta_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "key\tvalue":
        raise PipelineError(f"{meta_path} is missing its 'key\\tvalue' header")
    for line in lines[1:]:
        key, _, value = line.partition("\t")
        meta[key] = value
    try:
        n_rows, n_cols = int(meta["n_rows"]), int(meta["n_cols"])
        scheme = EncodingScheme(
            name=meta["scheme"], k=int(meta["k"]), min_count=int(meta["min_count"])
        )
    except (KeyError, ValueError) as err:
        raise PipelineError(f"{meta_path} is malformed: {err}") from None
    matrix = read_matrix_tsv(enc / "matrix.tsv", n_rows, n_cols)
    if meta.get("dictionary_hash", "-") != "-":
        matrix.dictionary_hash = meta["dictionary_hash"]
    label_lines = (enc / "labels.tsv").read_text(encoding="utf-8").splitlines()
    if not label_lines or label_lines[0] != "id\tlabel":
        raise PipelineError(f"{enc / 'labels.tsv'} is missing its 'id\\tlabel' header")
    ids: list[str] = []
    labels: list[int] = []
    for line in label_lines[1:]:
        record_id, _, label = line.partition("\t")
        ids.append(record_id)
        labels.append(int(label))
    dictionary = None
    dict_path = enc / "dictionary.tsv"
    if dict_path.is_file():
        dictionary = read_dictionary_tsv(dict_path, k=scheme.k, min_count=scheme.min_count)
    ds = LabeledDataset(features=matrix, labels=np.asarray(labels, dtype=np.int64), ids=ids)
    return ds, dictionary, scheme


def _write_meta(path: Path, matrix: SparseFeatureMatrix, scheme: EncodingScheme, dictionary) -> None:
    rows = {
        "n_rows": matrix.n_rows,
        "n_cols": matrix.n_cols,
        "scheme": scheme.name,
        "k": scheme.k,
        "min_count": scheme.min_count,
        "dictionary_hash": matrix.dictionary_hash or "-",
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("key\tvalue\n")
        for key, value in rows.items():
            fh.write(f"{key}\t{value}\n")


def balance_stage(
    config: RunConfig, train: LabeledDataset, seed: int, out_dir: Path | None
) -> LabeledDataset:
    n0, n1 = train.class_counts()
    balanced = train
    if config.use_smote and min(n0, n1) >= 2 and n0 != n1:
        balanced = smote(train, k_neighbors=config.smote_neighbors, seed=seed)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_id_list(balanced.ids, out_dir / "train_ids.txt")
        b0, b1 = balanced.class_counts()
        with open(out_dir / "summary.tsv", "w", encoding="utf-8") as fh:
            fh.write("stage\tclass0\tclass1\n")
            fh.write(f"before\t{n0}\t{n1}\n")
            fh.write(f"after\t{b0}\t{b1}\n")
    return balanced


@dataclass(frozen=True)
class PipelineResult:
    out_dir: Path | None
    config: RunConfig
    model: TreeEnsembleModel
    accuracy: float
    auc: float
    ranking: FeatureRanking
    curve: SelectionCurve | None
    chosen_m: int | None
    dictionary: KmerDictionary | None
    synth: SynthResult | None

    def top_kmers(self, m: int) -> list[str]:
        if self.dictionary is None:
            return []
        names = self.dictionary.kmers
        return [names[col] for col in self.ranking.top(m)]


def run_pipeline(
    config: RunConfig,
    out_dir: str | Path | None = None,
    threads: int = 1,
    force: bool = False,
) -> PipelineResult:
    """synthesize/load -> encode -> split -> balance -> train -> evaluate
    -> attribute -> select features, emitting artifacts for every stage."""
    out = prepare_out_dir(out_dir, force) if out_dir is not None else None
    seeds = _stage_seeds(config.seed)
    if out is not None:
        write_manifest(config, out, threads)

    records, labels, synth = load_corpus(config, out)
    dataset, dictionary = encode_stage(
        config, records, labels, out / "encode" if out is not None else None
    )

    train, test = train_test_split(dataset, config.train_ratio, seed=seeds["split"])
    if out is not None:
        split_dir = out / "split"
        split_dir.mkdir(parents=True, exist_ok=True)
        write_id_list(train.ids, split_dir / "train_ids.txt")
        write_id_list(test.ids, split_dir / "test_ids.txt")

    balanced = balance_stage(
        config, train, seeds["smote"], out / "balance" if out is not None else None
    )

    model = fit_model(
        config.model_kind, balanced, config.train_config(seeds["model"]), threads=threads
    )
    if dictionary is not None:
        model = replace(model, dictionary_hash=dictionary.content_hash())
    report, roc = evaluate_model(model, test)
    if out is not None:
        model_dir = out / "model"
        model_dir.mkdir(parents=True, exist_ok=True)
        save_model(model, model_dir / "model.txt")
        write_evaluation(out / "evaluate", report, roc)

    ranking = rank_features(model, test, threads=threads)
    names = dictionary.kmers if dictionary is not None else None
    if out is not None:
        explain_dir = out / "explain"
        explain_dir.mkdir(parents=True, exist_ok=True)
        write_ranking_tsv(ranking, explain_dir / "ranking.tsv", names=names)
        top = ranking.entries[: config.explain_top]
        if top and top[0][1] > 0.0:
            svg_bar_chart(
                explain_dir / "shap_summary.svg",
                labels=[names[c] if names else f"col{c}" for c, _ in top],
                values=[s for _, s in top],
                title="mean |SHAP| by feature",
                x_label="mean |SHAP|",
            )

    curve = None
    chosen = None
    max_m = min(config.max_m, dataset.features.n_cols)
    if max_m >= 1:
        curve = incremental_auc_curve(
            ranking,
            balanced,
            test,
            kind=config.model_kind,
            config=config.train_config(seeds["model"]),
            max_m=max_m,
            cv_folds=config.selection_cv_folds,
            cv_seed=seeds["selection_cv"],
        )
        chosen = select_top_features_quiet(curve, config.epsilon, config.patience)
        curve = replace(curve, chosen_m=chosen)
        if out is not None:
            select_dir = out / "select"
            select_dir.mkdir(parents=True, exist_ok=True)
            write_curve_tsv(curve, select_dir / "curve.tsv")
            series = [("test AUC", curve.m_values, curve.test_auc)]
            if curve.cv_auc is not None:
                series.append(("CV AUC", curve.m_values, curve.cv_auc))
            svg_line_chart(
                select_dir / "curve.svg",
                series,
                title="incremental-AUC feature selection",
                x_label="top-m features",
                y_label="AUC",
            )

    return PipelineResult(
        out_dir=out,
        config=config,
        model=model,
        accuracy=report.accuracy,
        auc=roc.auc,
        ranking=ranking,
        curve=curve,
        chosen_m=chosen,
        dictionary=dictionary,
        synth=synth,
    )


def select_top_features_quiet(curve: SelectionCurve, epsilon: float, patience: int) -> int:
    """finalize_selection, but the no-stabilization warning is downgraded
    to a curve annotation so batch runs stay quiet."""
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return finalize_selection(curve, epsilon, patience).chosen_m


def write_evaluation(eval_dir: Path, report, roc) -> None:
    """Emit metrics.tsv, roc.tsv, report.txt, and roc.svg for one model
    against one test set."""
    eval_dir.mkdir(parents=True, exist_ok=True)
    with open(eval_dir / "metrics.tsv", "w", encoding="utf-8") as fh:
        fh.write("metric\tclass0\tclass1\tweighted\n")
        per = report.per_class
        fh.write(f"precision\t{per[0].precision!r}\t{per[1].precision!r}\t{report.precision!r}\n")
        fh.write(f"recall\t{per[0].recall!r}\t{per[1].recall!r}\t{report.recall!r}\n")
        fh.write(f"f1\t{per[0].f1!r}\t{per[1].f1!r}\t{report.f1!r}\n")
        fh.write(f"accuracy\t-\t-\t{report.accuracy!r}\n")
        fh.write(f"auc\t-\t-\t{roc.auc!r}\n")
    with open(eval_dir / "roc.tsv", "w", encoding="utf-8") as fh:
        fh.write("fpr\ttpr\n")
        for fpr, tpr in zip(roc.fpr, roc.tpr):
            fh.write(f"{float(fpr)!r}\t{float(tpr)!r}\n")
    with open(eval_dir / "report.txt", "w", encoding="utf-8") as fh:
        for line in report_lines(report, roc.auc):
            fh.write(line + "\n")
    svg_line_chart(
        eval_dir / "roc.svg",
        [("", [float(v) for v in roc.fpr], [float(v) for v in roc.tpr]),
         ("chance", [0.0, 1.0], [0.0, 1.0])],
        title=f"ROC (AUC {roc.auc:.4f})",
        x_label="false positive rate",
        y_label="true positive rate",
    )


# --- side-by-side comparisons ----------------------------------------------------


@dataclass(frozen=True)
class ComparisonRow:
    """One line of a comparison table: split metrics for a named variant,
    plus cross-validation mean/sd when folds were requested."""

    name: str
    report: MetricsReport
    auc: float
    cv_mean: dict[str, float] | None = None
    cv_sd: dict[str, float] | None = None


def _comparison_corpus(config: RunConfig) -> tuple[list[SequenceRecord], np.ndarray]:
    records, labels, _ = load_corpus(config, None)
    return records, labels


def compare_encodings(
    config: RunConfig,
    schemes: Sequence[str] = ("sequential", "onehot", "kmer"),
    threads: int = 1,
) -> list[ComparisonRow]:
    """Train and score the configured model once per encoding scheme on one
    shared corpus, split, and seed set, so rows differ only in the encoding."""
    if not schemes:
        raise ConfigError("need at least one encoding scheme to compare")
    records, labels = _comparison_corpus(config)
    seeds = _stage_seeds(config.seed)
    rows = []
    for scheme_name in schemes:
        cfg = replace(config, scheme=scheme_name)
        dataset, _ = encode_stage(cfg, records, labels, None)
        train, test = train_test_split(dataset, cfg.train_ratio, seed=seeds["split"])
        balanced = balance_stage(cfg, train, seeds["smote"], None)
        model = fit_model(
            cfg.model_kind, balanced, cfg.train_config(seeds["model"]), threads=threads
        )
        report, roc = evaluate_model(model, test)
        rows.append(ComparisonRow(name=scheme_name, report=report, auc=roc.auc))
    return rows


def compare_models(
    config: RunConfig,
    kinds: Sequence[str] = ("tree", "forest", "gbdt"),
    folds: int = 0,
    threads: int = 1,
) -> list[ComparisonRow]:
    """Train and score each model kind on one shared encoded corpus and
    split. With folds > 0 each row also carries stratified cross-validation
    aggregates over the full dataset."""
    if not kinds:
        raise ConfigError("need at least one model kind to compare")
    unknown = [kind for kind in kinds if kind not in _MODEL_ALIASES]
    if unknown:
        raise ConfigError(
            f"unknown model {unknown[0]!r}; expected one of {sorted(set(_MODEL_ALIASES))}"
        )
    records, labels = _comparison_corpus(config)
    seeds = _stage_seeds(config.seed)
    dataset, _ = encode_stage(config, records, labels, None)
    train, test = train_test_split(dataset, config.train_ratio, seed=seeds["split"])
    balanced = balance_stage(config, train, seeds["smote"], None)
    rows = []
    for kind in kinds:
        resolved = _MODEL_ALIASES[kind]
        model = fit_model(
            resolved, balanced, config.train_config(seeds["model"]), threads=threads
        )
        report, roc = evaluate_model(model, test)
        cv_mean = cv_sd = None
        if folds > 0:
            cv = cross_validate(
                dataset,
                folds,
                resolved,
                config.train_config(seeds["model"]),
                seed=seeds["cv"],
                use_smote=config.use_smote,
                smote_neighbors=config.smote_neighbors,
                threads=threads,
            )
            cv_mean, cv_sd = cv.mean, cv.sd
        rows.append(
            ComparisonRow(name=kind, report=report, auc=roc.auc, cv_mean=cv_mean, cv_sd=cv_sd)
        )
    return rows
