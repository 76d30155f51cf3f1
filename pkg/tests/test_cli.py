"""Exit codes, subcommand chaining, and artifact layout of the kmerdiff CLI."""

from __future__ import annotations

import contextlib
import io

import pytest

from kmerdiff.cli import _effective_config, build_parser, main
from kmerdiff.models import load_model
from kmerdiff.pipeline import read_encoded_dir

CHAIN_CFG = """\
n_class0 = 30
n_class1 = 8
min_length = 150
max_length = 250
n_motifs = 3
motif_length = 9
insertions_per_sequence = 2
k = 9
min_count = 2
model = forest
n_trees = 5
max_m = 4
selection_cv_folds = 0
seed = 11
"""


def run_cli(*argv: str) -> tuple[int, str, str]:
    """Invoke main() in-process, returning (exit_code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """One synthetic corpus pushed through the whole subcommand chain."""
    root = tmp_path_factory.mktemp("chain")
    cfg = root / "run.cfg"
    cfg.write_text(CHAIN_CFG, encoding="utf-8")
    stdouts: dict[str, str] = {}

    def step(name: str, *argv: str) -> None:
        code, stdout, stderr = run_cli(*argv, "--config", str(cfg))
        assert code == 0, f"{name} exited {code}: {stderr or stdout}"
        stdouts[name] = stdout

    step("synth", "synth", "--out", str(root / "synth"))
    step(
        "encode",
        "encode",
        str(root / "synth" / "class0.fasta"),
        str(root / "synth" / "class1.fasta"),
        "--out", str(root / "enc"),
    )
    step("split", "split", str(root / "enc"), "--out", str(root / "split"))
    step("balance", "balance", str(root / "split" / "train"), "--out", str(root / "bal"))
    step("train", "train", str(root / "bal"), "--out", str(root / "model"))
    step(
        "evaluate",
        "evaluate", str(root / "model" / "model.txt"), str(root / "split" / "test"),
        "--out", str(root / "eval"),
    )
    step(
        "explain",
        "explain", str(root / "model" / "model.txt"), str(root / "split" / "test"),
        "--out", str(root / "explain"),
    )
    step(
        "select",
        "select-features", str(root / "bal"), str(root / "split" / "test"),
        "--out", str(root / "select"),
    )
    return root, stdouts


# --- exit codes ---------------------------------------------------------------


def test_help_exits_zero():
    code, stdout, _ = run_cli("--help")
    assert code == 0
    assert "SUBCOMMAND" in stdout


def test_unknown_subcommand_is_usage_error():
    code, _, stderr = run_cli("frobnicate")
    assert code == 1
    assert "error:" in stderr


def test_missing_out_is_usage_error():
    code, _, stderr = run_cli("synth")
    assert code == 1
    assert "--out" in stderr


def test_bad_choice_is_usage_error(tmp_path):
    code, _, stderr = run_cli(
        "encode", "whatever.fasta", "--scheme", "bogus", "--out", str(tmp_path / "o")
    )
    assert code == 1
    assert "invalid choice" in stderr


def test_missing_input_is_data_error(tmp_path):
    code, _, stderr = run_cli("stats", str(tmp_path / "nope.fasta"))
    assert code == 2
    lines = [line for line in stderr.splitlines() if line]
    assert len(lines) == 1
    assert lines[0].startswith("kmerdiff: error:")


def test_unknown_config_key_is_data_error(tmp_path):
    code, _, stderr = run_cli("synth", "--set", "bogus=1", "--out", str(tmp_path / "o"))
    assert code == 2
    assert "unknown config key" in stderr


def test_malformed_set_is_data_error(tmp_path):
    code, _, stderr = run_cli("synth", "--set", "k5", "--out", str(tmp_path / "o"))
    assert code == 2
    assert "KEY=VALUE" in stderr


def test_nonempty_out_is_data_error(tmp_path):
    (tmp_path / "blocker.txt").write_text("x", encoding="utf-8")
    code, _, stderr = run_cli("synth", "--out", str(tmp_path))
    assert code == 2
    assert "--force" in stderr


def test_not_an_encoded_dir_is_data_error(tmp_path):
    (tmp_path / "empty").mkdir()
    code, _, stderr = run_cli(
        "split", str(tmp_path / "empty"), "--out", str(tmp_path / "o")
    )
    assert code == 2
    assert "meta.tsv" in stderr


# --- small worked examples ---------------------------------------------------------------


def test_encode_counts_every_window_of_a_known_sequence(tmp_path):
    """ATCGCA has exactly four 3-mer windows; each must appear once, with
    dictionary columns in lexicographic order."""
    fasta = tmp_path / "one.fasta"
    fasta.write_text(">s1\nATCGCA\n", encoding="utf-8")
    out = tmp_path / "enc"
    code, stdout, _ = run_cli(
        "encode", str(fasta),
        "--scheme", "kmer", "--k", "3", "--min-count", "1", "--out", str(out),
    )
    assert code == 0
    assert "encoded 1 rows x 4 columns (kmer)" in stdout
    ds, dictionary, scheme = read_encoded_dir(out)
    assert dictionary is not None
    assert dictionary.kmers == ["ATC", "CGC", "GCA", "TCG"]
    assert ds.features.to_dense().tolist() == [[1.0, 1.0, 1.0, 1.0]]
    assert (scheme.k, scheme.min_count) == (3, 1)


def test_stats_prints_a_table(chain):
    root, _ = chain
    fasta = root / "synth" / "class0.fasta"
    code, stdout, _ = run_cli("stats", str(fasta))
    assert code == 0
    lines = stdout.splitlines()
    assert lines[0] == "file\tcount\tmin\tmedian\tmean\tmax\toutliers"
    cells = lines[1].split("\t")
    assert cells[0] == str(fasta)
    assert cells[1] == "30"
    assert 150 <= int(cells[2]) <= int(cells[5]) <= 250


def test_stats_out_dir_gets_tables_and_manifest(chain, tmp_path):
    root, _ = chain
    code, _, _ = run_cli(
        "stats", str(root / "synth" / "class0.fasta"), "--out", str(tmp_path / "stats")
    )
    assert code == 0
    for name in ("stats.tsv", "outliers.tsv", "manifest.txt"):
        assert (tmp_path / "stats" / name).is_file()


def test_select_k_reports_and_plots(chain, tmp_path):
    root, _ = chain
    out = tmp_path / "selk"
    code, stdout, _ = run_cli(
        "select-k", str(root / "synth" / "class0.fasta"),
        "--k-min", "5", "--k-max", "11", "--step", "2",
        "--out", str(out),
    )
    assert code == 0
    assert stdout.startswith("chosen_k\t")
    assert int(stdout.split("\t")[1]) in (5, 7, 9, 11)
    for name in ("report.tsv", "estimate.svg", "spectra.svg", "manifest.txt"):
        assert (out / name).is_file()


# --- the chained workflow ---------------------------------------------------------------


def test_chain_synth_artifacts(chain):
    root, stdouts = chain
    assert "wrote 30 class-0 and 8 class-1 sequences (3 motifs)" in stdouts["synth"]
    for name in ("class0.fasta", "class1.fasta", "manifest.tsv", "motifs.txt", "manifest.txt"):
        assert (root / "synth" / name).is_file()


def test_chain_encode_is_readable_and_documented(chain):
    root, stdouts = chain
    assert stdouts["encode"].startswith("encoded 38 rows x ")
    ds, dictionary, scheme = read_encoded_dir(root / "enc")
    assert len(ds) == 38
    assert dictionary is not None and len(dictionary) == ds.features.n_cols
    assert scheme.name == "kmer" and scheme.k == 9
    manifest = (root / "enc" / "manifest.txt").read_text(encoding="utf-8")
    assert "# input class0 = " in manifest
    assert "# input class1 = " in manifest
    assert "k = 9" in manifest


def test_chain_split_partitions_the_rows(chain):
    root, stdouts = chain
    assert "split 38 rows into 27 train / 11 test" in stdouts["split"]
    train, _, _ = read_encoded_dir(root / "split" / "train")
    test, _, _ = read_encoded_dir(root / "split" / "test")
    assert len(train) == 27 and len(test) == 11
    assert not set(train.ids) & set(test.ids)
    listed = (root / "split" / "train_ids.txt").read_text(encoding="utf-8").split()
    assert listed == train.ids


def test_chain_balance_equalizes_classes(chain):
    root, stdouts = chain
    balanced, _, _ = read_encoded_dir(root / "bal")
    n0, n1 = balanced.class_counts()
    assert n0 == n1
    assert stdouts["balance"].strip().endswith(f"to {n0}/{n1} (class0/class1)")
    summary = (root / "bal" / "summary.tsv").read_text(encoding="utf-8").splitlines()
    assert summary[0] == "stage\tclass0\tclass1"
    assert summary[2] == f"after\t{n0}\t{n1}"


def test_chain_train_saves_a_loadable_model(chain):
    root, stdouts = chain
    assert stdouts["train"].startswith("trained random_forest: 5 trees")
    model = load_model(root / "model" / "model.txt")
    ds, dictionary, _ = read_encoded_dir(root / "bal")
    assert len(model.trees) == 5
    assert model.n_cols == ds.features.n_cols
    assert model.dictionary_hash == dictionary.content_hash()


def test_chain_evaluate_reports_metrics(chain):
    root, stdouts = chain
    values = dict(line.split("\t") for line in stdouts["evaluate"].splitlines())
    assert 0.0 <= float(values["accuracy"]) <= 1.0
    assert 0.0 <= float(values["auc"]) <= 1.0
    for name in ("metrics.tsv", "roc.tsv", "report.txt", "roc.svg"):
        assert (root / "eval" / name).is_file()


def test_chain_explain_ranks_every_column(chain):
    root, stdouts = chain
    ds, _, _ = read_encoded_dir(root / "bal")
    ranking = (root / "explain" / "ranking.tsv").read_text(encoding="utf-8").splitlines()
    assert len(ranking) == ds.features.n_cols + 1
    first = stdouts["explain"].splitlines()[0].split("\t")
    assert first[0] == "1"
    assert len(first[1]) == 9  # ranked by k-mer name, not column index
    assert float(first[2]) >= 0.0


def test_chain_select_features_obeys_max_m(chain):
    root, stdouts = chain
    assert stdouts["select"].startswith("chosen_m\t")
    chosen = int(stdouts["select"].split("\t")[1])
    assert 1 <= chosen <= 4
    curve = (root / "select" / "curve.tsv").read_text(encoding="utf-8").splitlines()
    assert curve[0].startswith("m\t")
    assert len(curve) == 6  # header + max_m rows + chosen_m footer
    assert curve[-1] == f"# chosen_m={chosen}"
    assert (root / "select" / "curve.svg").is_file()


def test_cross_validate_writes_fold_table(chain, tmp_path):
    root, _ = chain
    out = tmp_path / "cv"
    code, stdout, _ = run_cli(
        "cross-validate", str(root / "enc"),
        "--folds", "2", "--model", "tree",
        "--config", str(root / "run.cfg"), "--out", str(out),
    )
    assert code == 0
    assert stdout.startswith("cv_accuracy\t")
    rows = (out / "cv.tsv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "fold\taccuracy\tprecision\trecall\tf1\tauc"
    assert [r.split("\t")[0] for r in rows[1:]] == ["0", "1", "mean", "sd"]


def test_learning_curve_writes_points(chain, tmp_path):
    root, _ = chain
    out = tmp_path / "lc"
    code, stdout, _ = run_cli(
        "learning-curve", str(root / "enc"),
        "--fractions", "0.5,1.0", "--model", "tree",
        "--config", str(root / "run.cfg"), "--out", str(out),
    )
    assert code == 0
    assert "curve points" in stdout
    rows = (out / "curve.tsv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "fraction\tn_train\ttrain_accuracy\tvalidation_accuracy"
    assert len(rows) == 3
    assert (out / "curve.svg").is_file()


def test_compare_encodings_prints_one_row_per_scheme(chain, tmp_path):
    root, _ = chain
    out = tmp_path / "cmp"
    code, stdout, _ = run_cli(
        "compare-encodings", "--schemes", "sequential,kmer", "--n-trees", "3",
        "--config", str(root / "run.cfg"), "--out", str(out),
    )
    assert code == 0
    lines = stdout.splitlines()
    assert lines[0].startswith("scheme\t")
    assert [line.split("\t")[0] for line in lines[1:]] == ["sequential", "kmer"]
    assert (out / "table.tsv").read_text(encoding="utf-8") == stdout.rstrip("\n") + "\n"


def test_compare_models_prints_one_row_per_kind(chain, tmp_path):
    root, _ = chain
    out = tmp_path / "cmpm"
    code, stdout, _ = run_cli(
        "compare-models", "--models", "tree,gbdt", "--n-trees", "3",
        "--config", str(root / "run.cfg"), "--out", str(out),
    )
    assert code == 0
    lines = stdout.splitlines()
    assert lines[0].startswith("model\t")
    assert [line.split("\t")[0] for line in lines[1:]] == ["tree", "gbdt"]


def test_evaluate_rejects_mismatched_dataset(chain, tmp_path):
    root, _ = chain
    seq_dir = tmp_path / "seq"
    code, _, _ = run_cli(
        "encode",
        str(root / "synth" / "class0.fasta"), str(root / "synth" / "class1.fasta"),
        "--scheme", "sequential", "--out", str(seq_dir),
    )
    assert code == 0
    code, _, stderr = run_cli(
        "evaluate", str(root / "model" / "model.txt"), str(seq_dir),
        "--out", str(tmp_path / "bad_eval"),
    )
    assert code == 2
    assert stderr.startswith("kmerdiff: error:")


def test_pipeline_subcommand_end_to_end(chain, tmp_path):
    root, _ = chain
    out = tmp_path / "run"
    code, stdout, _ = run_cli(
        "pipeline", "--spec", str(root / "run.cfg"), "--out", str(out)
    )
    assert code == 0
    values = dict(line.split("\t") for line in stdout.splitlines())
    assert values["out"] == str(out)
    assert 0.0 <= float(values["accuracy"]) <= 1.0
    assert 0.0 <= float(values["auc"]) <= 1.0
    assert 1 <= int(values["chosen_m"]) <= 4
    assert (out / "manifest.txt").is_file()
    assert (out / "model" / "model.txt").is_file()


# --- flag plumbing ---------------------------------------------------------------


def test_threads_default_comes_from_environment(monkeypatch):
    monkeypatch.setenv("KMERDIFF_THREADS", "4")
    args = build_parser().parse_args(["train", "d", "--out", "o"])
    assert args.threads == 4
    monkeypatch.setenv("KMERDIFF_THREADS", "not_a_number")
    assert build_parser().parse_args(["train", "d", "--out", "o"]).threads == 1
    monkeypatch.setenv("KMERDIFF_THREADS", "0")
    assert build_parser().parse_args(["train", "d", "--out", "o"]).threads == 1


def test_dedicated_flag_beats_set_override(tmp_path):
    parser = build_parser()
    base = ["encode", "a.fasta", "--out", str(tmp_path / "o")]
    args = parser.parse_args(base + ["--set", "k=5", "--k", "7"])
    assert _effective_config(args).k == 7
    args = parser.parse_args(base + ["--set", "k=5"])
    assert _effective_config(args).k == 5


def test_manifest_records_the_input_paths(chain):
    root, _ = chain
    manifest = (root / "split" / "manifest.txt").read_text(encoding="utf-8")
    assert f"# input dataset = {root / 'enc'}" in manifest
