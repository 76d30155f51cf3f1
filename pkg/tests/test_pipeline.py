"""Config handling, artifact layout, and end-to-end determinism of the
pipeline orchestration."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from kmerdiff.encode import EncodingScheme
from kmerdiff.fasta import SequenceRecord, write_fasta
from kmerdiff.pipeline import (
    ConfigError,
    PipelineError,
    RunConfig,
    _stage_seeds,
    balance_stage,
    compare_encodings,
    compare_models,
    config_lines,
    encode_stage,
    load_config,
    load_corpus,
    parse_config_text,
    prepare_out_dir,
    read_encoded_dir,
    run_pipeline,
    write_encoded_dir,
    write_manifest,
)
from kmerdiff.sampling import LabeledDataset

TINY = dict(
    n_class0=70,
    n_class1=12,
    min_length=150,
    max_length=250,
    n_motifs=4,
    motif_length=9,
    k=9,
    n_trees=8,
    max_m=4,
    selection_cv_folds=0,
    seed=3,
)


def tiny_config(**extra) -> RunConfig:
    return RunConfig(**{**TINY, **extra})


def _normalized_tree(root) -> dict[str, bytes]:
    out = {}
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        data = path.read_bytes()
        if path.name == "manifest.txt":
            lines = [
                line for line in data.split(b"\n") if not line.startswith(b"# timestamp")
            ]
            data = b"\n".join(lines)
        out[str(path.relative_to(root))] = data
    return out


# --- config parsing ---------------------------------------------------------------


def test_defaults_match_documented_protocol():
    config = RunConfig()
    assert config.scheme == "kmer"
    assert config.k == 19
    assert config.model == "random_forest"
    assert config.n_trees == 100
    assert config.train_ratio == 0.7
    assert config.use_smote is True
    assert (config.n_class0, config.n_class1) == (2000, 60)
    assert (config.n_motifs, config.motif_length) == (10, 19)


def test_parse_config_text_skips_blank_and_comment_lines():
    values = parse_config_text("# a comment\n\n k = 15 \nuse_smote = no\nepsilon=0.01\n")
    assert values == {"k": 15, "use_smote": False, "epsilon": 0.01}


def test_parse_config_text_unknown_key_names_the_line():
    with pytest.raises(ConfigError, match=r"cfg:3: unknown config key 'bogus'"):
        parse_config_text("k = 5\n\nbogus = 1\n", source="cfg")


def test_parse_config_text_requires_key_value_shape():
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_config_text("just some words\n")


def test_parse_config_text_type_errors():
    with pytest.raises(ConfigError, match="'k' expects int"):
        parse_config_text("k = abc")
    with pytest.raises(ConfigError, match="'use_smote' expects bool"):
        parse_config_text("use_smote = maybe")


def test_bool_spellings():
    for raw, expected in [("true", True), ("YES", True), ("1", True),
                          ("false", False), ("No", False), ("0", False)]:
        assert parse_config_text(f"use_smote = {raw}")["use_smote"] is expected


def test_load_config_layering(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("k = 15\nn_trees = 50\n", encoding="utf-8")
    config = load_config(path, {"k": "17"})
    assert config.k == 17  # override beats file
    assert config.n_trees == 50  # file beats default
    assert config.min_count == 2  # default survives


def test_load_config_rejects_unknown_override():
    with pytest.raises(ConfigError, match="unknown config key 'whatever'"):
        load_config(None, {"whatever": 1})


def test_config_invariants_checked_at_construction():
    with pytest.raises(ConfigError, match="unknown model"):
        RunConfig(model="svm")
    with pytest.raises(ConfigError, match="train_ratio"):
        RunConfig(train_ratio=1.0)


def test_model_aliases_resolve():
    assert RunConfig(model="tree").model_kind == "decision_tree"
    assert RunConfig(model="forest").model_kind == "random_forest"
    assert RunConfig(model="gbdt").model_kind == "gbdt"


def test_train_config_zero_means_auto():
    tc = RunConfig(max_depth=0, mtry=0).train_config()
    assert tc.max_depth is None and tc.mtry is None
    tc = RunConfig(max_depth=4, mtry=7).train_config(seed=99)
    assert (tc.max_depth, tc.mtry, tc.seed) == (4, 7, 99)


def test_config_lines_round_trip():
    config = RunConfig(k=15, use_smote=False, epsilon=0.01, model="gbdt")
    text = "\n".join(config_lines(config))
    assert "use_smote = false" in text
    rebuilt = RunConfig(**parse_config_text(text))
    assert rebuilt == config


def test_manifest_shape(tmp_path):
    config = tiny_config()
    path = write_manifest(config, tmp_path, threads=8)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# kmerdiff ")
    assert lines[1].startswith("# timestamp = ")
    body = [line for line in lines if not line.startswith("#")]
    assert body == config_lines(config)
    assert not any("threads" in line for line in body)
    # the echoed manifest reproduces the config by itself
    assert RunConfig(**parse_config_text("\n".join(lines))) == config


def test_prepare_out_dir_refuses_nonempty(tmp_path):
    target = tmp_path / "run"
    target.mkdir()
    (target / "junk.txt").write_text("x", encoding="utf-8")
    with pytest.raises(PipelineError, match="not empty"):
        prepare_out_dir(target)
    assert prepare_out_dir(target, force=True) == target
    assert prepare_out_dir(tmp_path / "fresh") == tmp_path / "fresh"


def test_stage_seeds_are_stable_and_distinct():
    seeds = _stage_seeds(0)
    assert seeds == _stage_seeds(0)
    assert set(seeds) == {"motifs", "split", "smote", "model", "cv", "selection_cv"}
    assert len(set(seeds.values())) == len(seeds)
    assert _stage_seeds(1) != seeds


# --- corpus and dataset stages ---------------------------------------------------------------


def test_load_corpus_synthesizes_and_documents(tmp_path):
    config = tiny_config()
    records, labels, synth = load_corpus(config, tmp_path)
    assert len(records) == 82
    assert int(labels.sum()) == 12
    assert synth is not None and len(synth.motifs) == 4
    for name in ("class0.fasta", "class1.fasta", "manifest.tsv", "motifs.txt"):
        assert (tmp_path / "synth" / name).is_file()


def test_load_corpus_fasta_pair(tmp_path):
    a = [SequenceRecord(id="a1", residues="ACGTACGT"), SequenceRecord(id="a2", residues="CCGGTTAA")]
    b = [SequenceRecord(id="b1", residues="TTTTACGT")]
    write_fasta(a, tmp_path / "a.fasta")
    write_fasta(b, tmp_path / "b.fasta")
    config = RunConfig(class0_fasta=str(tmp_path / "a.fasta"), class1_fasta=str(tmp_path / "b.fasta"))
    records, labels, synth = load_corpus(config, None)
    assert [r.id for r in records] == ["a1", "a2", "b1"]
    assert labels.tolist() == [0, 0, 1]
    assert synth is None


def test_load_corpus_requires_both_fastas():
    with pytest.raises(ConfigError, match="together"):
        load_corpus(RunConfig(class0_fasta="only.fasta"), None)


def test_encoded_dir_round_trip(tmp_path):
    config = tiny_config()
    records, labels, _ = load_corpus(config, None)
    ds, dictionary = encode_stage(config, records, labels, tmp_path / "enc")
    back, dict_back, scheme = read_encoded_dir(tmp_path / "enc")
    assert back.features == ds.features
    assert back.features.dictionary_hash == ds.features.dictionary_hash
    assert np.array_equal(back.labels, ds.labels)
    assert back.ids == ds.ids
    assert dict_back is not None and dict_back.entries == dictionary.entries
    assert (scheme.name, scheme.k, scheme.min_count) == ("kmer", 9, 2)


def test_encoded_dir_round_trip_without_dictionary(tmp_path):
    records = [SequenceRecord(id="r1", residues="ACGTACGTAA"),
               SequenceRecord(id="r2", residues="TTGGCCAATT")]
    ds = LabeledDataset(
        features=encode_stage(RunConfig(scheme="onehot"), records, np.array([0, 1]), None)[0].features,
        labels=np.array([0, 1]),
        ids=["r1", "r2"],
    )
    write_encoded_dir(ds, EncodingScheme(name="onehot"), None, tmp_path / "enc")
    back, dict_back, scheme = read_encoded_dir(tmp_path / "enc")
    assert dict_back is None
    assert scheme.name == "onehot"
    assert back.features == ds.features


def test_read_encoded_dir_wants_meta(tmp_path):
    with pytest.raises(PipelineError, match="no meta.tsv"):
        read_encoded_dir(tmp_path)


def test_read_encoded_dir_rejects_corrupt_meta(tmp_path):
    (tmp_path / "meta.tsv").write_text("key\tvalue\nn_rows\tnot_a_number\n", encoding="utf-8")
    with pytest.raises(PipelineError, match="malformed"):
        read_encoded_dir(tmp_path)


def test_zero_column_fallback_when_nothing_repeats():
    config = tiny_config(min_count=10_000)
    records, labels, _ = load_corpus(config, None)
    ds, dictionary = encode_stage(config, records, labels, None)
    assert dictionary is None
    assert ds.features.n_cols == 0
    assert ds.features.n_rows == len(records)


def test_balance_stage_writes_summary(tmp_path):
    config = tiny_config()
    records, labels, _ = load_corpus(config, None)
    ds, _ = encode_stage(config, records, labels, None)
    balanced = balance_stage(config, ds, seed=5, out_dir=tmp_path)
    n0, n1 = balanced.class_counts()
    assert n0 == n1 == 70
    summary = (tmp_path / "summary.tsv").read_text(encoding="utf-8").splitlines()
    assert summary == ["stage\tclass0\tclass1", "before\t70\t12", "after\t70\t70"]
    assert (tmp_path / "train_ids.txt").is_file()


# --- end-to-end runs ---------------------------------------------------------------


def test_run_pipeline_emits_every_stage(tmp_path):
    result = run_pipeline(tiny_config(), tmp_path / "run")
    expected = [
        "manifest.txt",
        "synth/class0.fasta",
        "synth/class1.fasta",
        "synth/manifest.tsv",
        "synth/motifs.txt",
        "encode/matrix.tsv",
        "encode/labels.tsv",
        "encode/meta.tsv",
        "encode/dictionary.tsv",
        "split/train_ids.txt",
        "split/test_ids.txt",
        "balance/train_ids.txt",
        "balance/summary.tsv",
        "model/model.txt",
        "evaluate/metrics.tsv",
        "evaluate/roc.tsv",
        "evaluate/report.txt",
        "evaluate/roc.svg",
        "explain/ranking.tsv",
        "select/curve.tsv",
        "select/curve.svg",
    ]
    for rel in expected:
        assert (tmp_path / "run" / rel).is_file(), rel
    assert 0.0 <= result.accuracy <= 1.0
    assert 0.0 <= result.auc <= 1.0
    assert result.chosen_m is not None and 1 <= result.chosen_m <= 4
    assert result.curve.chosen_m == result.chosen_m
    assert len(result.ranking.entries) == result.model.n_cols
    assert len(result.top_kmers(3)) == 3
    assert all(len(kmer) == 9 for kmer in result.top_kmers(3))


def test_run_pipeline_is_deterministic_across_dirs_and_threads(tmp_path):
    config = tiny_config()
    run_pipeline(config, tmp_path / "a")
    run_pipeline(config, tmp_path / "b")
    run_pipeline(config, tmp_path / "c", threads=3)
    tree_a = _normalized_tree(tmp_path / "a")
    assert tree_a == _normalized_tree(tmp_path / "b")
    assert tree_a == _normalized_tree(tmp_path / "c")
    assert "model/model.txt" in tree_a


def test_run_pipeline_null_corpus_scores_near_chance(tmp_path):
    config = tiny_config(insertions_per_sequence=0, k=13)
    result = run_pipeline(config, None)
    assert abs(result.auc - 0.5) <= 0.05
    assert result.dictionary is None or len(result.dictionary) < 5


def test_run_pipeline_refuses_nonempty_dir(tmp_path):
    (tmp_path / "blocker.txt").write_text("x", encoding="utf-8")
    with pytest.raises(PipelineError, match="--force"):
        run_pipeline(tiny_config(), tmp_path)


# --- comparisons ---------------------------------------------------------------


def test_compare_encodings_one_row_per_scheme():
    rows = compare_encodings(tiny_config(n_trees=5), ("sequential", "kmer"))
    assert [row.name for row in rows] == ["sequential", "kmer"]
    for row in rows:
        assert 0.0 <= row.report.accuracy <= 1.0
        assert 0.0 <= row.auc <= 1.0
        assert row.cv_mean is None
    again = compare_encodings(tiny_config(n_trees=5), ("sequential", "kmer"))
    assert [(r.report.accuracy, r.auc) for r in again] == [
        (r.report.accuracy, r.auc) for r in rows
    ]


def test_compare_encodings_requires_a_scheme():
    with pytest.raises(ConfigError, match="at least one encoding scheme"):
        compare_encodings(tiny_config(), ())


def test_compare_models_rows_and_cv_columns():
    rows = compare_models(tiny_config(n_trees=5), ("tree", "gbdt"), folds=2)
    assert [row.name for row in rows] == ["tree", "gbdt"]
    for row in rows:
        assert row.cv_mean is not None and row.cv_sd is not None
        assert set(row.cv_mean) == {"accuracy", "precision", "recall", "f1", "auc"}


def test_compare_models_rejects_unknown_kind():
    with pytest.raises(ConfigError, match="unknown model 'svm'"):
        compare_models(tiny_config(), ("forest", "svm"))
