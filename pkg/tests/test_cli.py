import json

import pytest

from ratr.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main

SMALL = ["--d", "3", "--theta-size", "12", "--validation-size", "5", "--grid-m", "7", "--max-outer-iters", "20", "--rank-max", "2"]


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_fit_predict_evaluate(tmp_path, capsys):
    out = tmp_path / "model"
    code, cap = run(capsys, "fit", *SMALL, "--out", str(out))
    assert code == EXIT_OK
    assert json.loads(cap.out)["n_r"] >= 1

    code, cap = run(capsys, "predict", "--model", str(out), "--xi", "0.1,0.2,-0.3")
    assert code == EXIT_OK
    assert len(json.loads(cap.out)["predictions"][0]) == 49

    pts = tmp_path / "pts.csv"
    pts.write_text("0,0,0\n0.5,0.5,0.5\n")
    code, _ = run(capsys, "predict", "--model", str(out), "--points", str(pts), "--out", str(tmp_path / "p.csv"))
    assert code == EXIT_OK and (tmp_path / "p.csv").exists()

    code, cap = run(capsys, "evaluate", "--model", str(out), "--samples", "3")
    assert code == EXIT_OK
    assert json.loads(cap.out)["failures"] == 0
    assert (out / "errors.csv").exists()


def test_gen_data_csv(tmp_path, capsys):
    code, cap = run(capsys, "gen-data", *SMALL, "--out", str(tmp_path), "--csv")
    assert code == EXIT_OK
    assert json.loads(cap.out)["snapshots"] == 17
    assert (tmp_path / "snapshots.csv").exists() and (tmp_path / "index_sets.json").exists()


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("d = 3\ntheta_size = 12\nvalidation_size = 5\ngrid_m = 7\n")
    code, cap = run(capsys, "gen-data", "--config", str(cfg), "--out", str(tmp_path))
    assert code == EXIT_OK


def test_stability_report(tmp_path, capsys):
    code, cap = run(capsys, "stability-report", "--d", "6", "--m", "4", "--samples", "200", "--trials", "20",
                    "--distributions", "U(1,2);N(0,1)", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert len(json.loads(cap.out)["rows"]) == 2
    assert (tmp_path / "stability.csv").exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["gen-data", "--theta-size", "abc"],
        ["gen-data", "--d", "2", "--theta-size", "9"],
        ["predict", "--model", "/nonexistent/model"],
        ["stability-report", "--distributions", "beta(1,1)"],
    ],
)
def test_invalid_input_exit_code(argv, capsys, tmp_path):
    code, cap = run(capsys, *argv, *(["--out", str(tmp_path)] if argv[0] != "predict" else []))
    assert code == EXIT_INVALID
    assert cap.err.startswith("error:")


def test_numerical_failure_exit_code(tmp_path, capsys):
    # a mean this low makes some training fields negative
    code, cap = run(capsys, "gen-data", *SMALL, "--field-mean", "0.01", "--out", str(tmp_path))
    assert code == EXIT_NUMERICAL
    assert "numerical failure" in cap.err
