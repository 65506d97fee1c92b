import csv
import json

import numpy as np
import pytest

from coxconcord.baseline import BaselineSet, breslow_cumhaz, predict_times
from coxconcord.cli import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, build_parser, main
from coxconcord.coxph import fit_cox
from coxconcord.data import read_csv


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return str(path)


@pytest.fixture
def train_csv(tmp_path):
    g = np.random.default_rng(0)
    n = 120
    X = g.normal(size=(n, 2))
    s = g.integers(1, 3, n)
    T = g.exponential(size=n) / (s * np.exp(X @ [0.7, -0.4]))
    E = (g.random(n) < 0.8).astype(int)
    rows = [[repr(float(T[i])), int(E[i]), int(s[i]), repr(float(X[i, 0])), repr(float(X[i, 1]))] for i in range(n)]
    return write_csv(tmp_path / "train.csv", ["time", "event", "stratum", "age", "dose"], rows)


def run(argv):
    return main([str(a) for a in argv])


def test_fit_predict_roundtrip_is_bit_identical(tmp_path, train_csv):
    model = tmp_path / "m.json"
    preds = tmp_path / "p.csv"
    assert run(["fit", train_csv, "-o", model]) == EXIT_OK
    assert run(["predict", model, train_csv, "-o", preds]) == EXIT_OK
    ds = read_csv(train_csv)
    fit = fit_cox(ds)
    expected = predict_times(fit.beta, breslow_cumhaz(ds, fit.beta), ds)
    rows = list(csv.DictReader(open(preds)))
    assert [float(r["expected_time"]) for r in rows] == expected.tolist()
    assert [float(r["linear_predictor"]) for r in rows] == (ds.X @ fit.beta).tolist()
    saved = json.loads(model.read_text())
    assert saved["format_version"] == 1
    assert saved["covariates"] == ["age", "dose"]
    assert saved["beta"] == fit.beta.tolist()
    assert BaselineSet.from_dict(saved["baselines"]).strata == [1, 2]


def test_three_row_fixture_smoke(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["time", "event", "x"], [[1, 1, 0.5], [2, 1, -0.5], [3, 0, 0.1]])
    model = tmp_path / "m.json"
    assert run(["fit", p, "-o", model, "--strata-col", "none"]) == EXIT_OK
    assert run(["predict", model, p, "-o", tmp_path / "p.csv"]) == EXIT_OK
    assert len(list(csv.DictReader(open(tmp_path / "p.csv")))) == 3


def test_penalty_at_lambda_max_gives_zero(tmp_path, train_csv):
    from coxconcord.lasso import lambda_max

    lam = lambda_max(read_csv(train_csv))
    model = tmp_path / "m.json"
    assert run(["fit", train_csv, "--penalty", repr(lam), "-o", model]) == EXIT_OK
    saved = json.loads(model.read_text())
    assert saved["beta"] == [0.0, 0.0]
    assert saved["diagnostics"]["method"] == "lasso"


def test_standardize_reports_original_scale(tmp_path, train_csv):
    model = tmp_path / "m.json"
    assert run(["fit", train_csv, "--standardize", "-o", model]) == EXIT_OK
    saved = json.loads(model.read_text())
    np.testing.assert_allclose(saved["beta"], fit_cox(read_csv(train_csv)).beta, rtol=1e-8)


def test_malformed_csv_reports_row(tmp_path, capsys):
    p = write_csv(tmp_path / "bad.csv", ["time", "event", "x"], [[1, 1, 0], [-2, 1, 1]])
    assert run(["fit", p]) == EXIT_ERROR
    assert "row 2" in capsys.readouterr().err


def test_non_convergence_exit_code(tmp_path, capsys):
    rows = [[t, 1, 1 if t <= 10 else 0] for t in range(1, 21)]
    p = write_csv(tmp_path / "sep.csv", ["time", "event", "x"], rows)
    assert run(["fit", p, "-o", tmp_path / "m.json"]) == EXIT_NOT_CONVERGED
    assert "did not converge" in capsys.readouterr().err


def test_predict_schema_mismatch_and_unseen_strata(tmp_path, train_csv, capsys):
    model = tmp_path / "m.json"
    run(["fit", train_csv, "-o", model])
    other = write_csv(tmp_path / "o.csv", ["time", "event", "stratum", "dose", "age"], [[1, 1, 1, 0, 0]])
    assert run(["predict", model, other]) == EXIT_ERROR
    assert "schema mismatch" in capsys.readouterr().err
    unseen = write_csv(tmp_path / "u.csv", ["stratum", "age", "dose"], [[1, 0.0, 0.0], [9, 0.1, 0.2]])
    assert run(["predict", model, unseen]) == EXIT_ERROR
    out = tmp_path / "p.csv"
    assert run(["predict", model, unseen, "--unseen", "drop", "-o", out]) == EXIT_OK
    rows = list(csv.DictReader(open(out)))
    assert rows[0]["expected_time"] != "" and rows[1]["expected_time"] == ""


@pytest.mark.parametrize("metric", ["cindex", "within-strata", "baseline-adjusted"])
def test_evaluate_metrics(tmp_path, train_csv, metric):
    model = tmp_path / "m.json"
    run(["fit", train_csv, "-o", model])
    out = tmp_path / "r.json"
    assert run(["evaluate", model, train_csv, "--metric", metric, "-o", out]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["metric"] == metric
    assert 0.5 < report["index"] < 1.0


def test_evaluate_tie_fixture_and_undefined(tmp_path):
    p = write_csv(tmp_path / "d.csv", ["time", "event", "x"], [[1, 1, 0.0], [2, 1, 0.0], [3, 0, 0.0]])
    model = tmp_path / "m.json"
    assert run(["fit", p, "-o", model, "--penalty", "1"]) == EXIT_OK
    out = tmp_path / "r.json"
    assert run(["evaluate", model, p, "--metric", "cindex", "-o", out]) == EXIT_OK
    assert json.loads(out.read_text())["index"] == 0.5
    censored = write_csv(tmp_path / "c.csv", ["time", "event", "x"], [[1, 0, 0.0], [2, 0, 1.0]])
    assert run(["evaluate", model, censored, "--metric", "cindex", "-o", out]) == EXIT_OK
    assert json.loads(out.read_text())["index"] is None


def test_cv_single_lambda_and_determinism(tmp_path, train_csv):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["cv", train_csv, "--folds", "3", "--n-lambda", "5", "--seed", "4"]
    assert run(args + ["-o", a]) == EXIT_OK
    assert run(args + ["-o", b]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    result = json.loads(a.read_text())
    assert result["metric"] == "baseline_adjusted_cindex"
    assert len(result["lambdas"]) == 5 and result["fold_sizes"] == [40, 40, 40]
    single = tmp_path / "s.json"
    assert run(["cv", train_csv, "--n-lambda", "1", "--metric", "deviance", "-o", single]) == EXIT_OK
    assert json.loads(single.read_text())["selected_index"] == 0


def test_experiment_smoke(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\nkind = stratified\nn = 200\nd = 3\nseed = 1\n")
    out = tmp_path / "out"
    assert run(["experiment", cfg, "--replications", "2", "--out-dir", out]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "results.csv")))
    assert len(rows) == 6
    assert {r["metric"] for r in rows} == {"within_stratum", "linear_predictor", "baseline_adjusted"}
    assert json.loads((out / "summary.json").read_text())["replications"] == 2


def test_experiment_threads_from_environment(tmp_path, monkeypatch):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\nkind = stratified\nn = 200\nd = 3\nseed = 1\n")
    run(["experiment", cfg, "--replications", "3", "--out-dir", tmp_path / "a"])
    monkeypatch.setenv("COXCONCORD_THREADS", "2")
    run(["experiment", cfg, "--replications", "3", "--out-dir", tmp_path / "b"])
    for name in ("results.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_help_documents_flags(capsys):
    parser = build_parser()
    for sub, flags in {
        "fit": ["--strata-col", "--penalty", "--standardize", "--max-iter", "--tol"],
        "predict": ["--unseen"],
        "evaluate": ["--metric"],
        "cv": ["--folds", "--metric", "--n-lambda", "--min-ratio", "--seed"],
        "experiment": ["--replications", "--threads", "--out-dir"],
    }.items():
        with pytest.raises(SystemExit):
            parser.parse_args([sub, "--help"])
        text = capsys.readouterr().out
        for flag in flags:
            assert flag in text
