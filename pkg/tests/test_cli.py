import json

import pytest

from ultraweak.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_decay(capsys, tmp_path):
    code, out, _ = run(capsys, "solve", "--problem", "1d-decay", "--n", "8", "--order", "1",
                       "--out", str(tmp_path), "--samples", "5")
    assert code == 0
    summary = json.loads(out)
    assert summary["l2_error"] == pytest.approx(0.01664, abs=1e-4)
    assert (tmp_path / "field.csv").read_text().startswith("x,u\n")


def test_solve_extended(capsys):
    code, out, _ = run(capsys, "solve", "--problem", "2d-const", "--n", "32", "--order", "2", "--extend", "1")
    assert code == 0
    assert json.loads(out)["linf_error"] == pytest.approx(0.16, abs=0.02)


def test_unknown_problem_exit_code(capsys):
    code, _, err = run(capsys, "solve", "--problem", "nope")
    assert code == 2 and "unknown problem" in err


def test_convergence_csv(capsys, tmp_path):
    code, out, _ = run(capsys, "convergence", "--problem", "1d-decay", "--levels", "4:16", "--out", str(tmp_path))
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "inv_h,l2_error,rate"
    inv_h, err, rate = lines[1].split(",")
    assert inv_h == "4" and float(err) == pytest.approx(0.03311, abs=1e-4) and rate == ""
    assert (tmp_path / "convergence.csv").read_text() == out
    code, out, _ = run(capsys, "convergence", "--problem", "1d-decay", "--levels", "8")
    assert out.splitlines()[1].endswith(",")


def test_greedy_online_roundtrip(capsys, tmp_path):
    fine, coarse = tmp_path / "fine", tmp_path / "coarse"
    args = ["greedy", "--problem", "tc2", "--n", "8", "--train", "10"]
    assert run(capsys, *args, "--tol", "1e-4", "--out", str(fine), "--test", "5")[0] == 0
    trace = (fine / "trace.csv").read_text().splitlines()
    assert trace[0] == "N,mu_star,max_train_error"
    assert (fine / "test.csv").read_text().startswith("N,max_test_error\n")
    assert run(capsys, *args, "--tol", "1e9", "--out", str(coarse))[0] == 0
    assert (coarse / "trace.csv").read_text().splitlines()[1].startswith("0,")
    mu_star = trace[1].split(",")[1]
    code, out, _ = run(capsys, "online", "--model", str(fine / "model.uwrb"), "--mu", mu_star, "--compare-full")
    assert code == 0 and json.loads(out)["l2_vs_full"] <= 1e-10 * json.loads(out)["l2_full"]
    code, out, _ = run(capsys, "online", "--model", str(coarse / "model.uwrb"), "--mu", "0.5",
                       "--fine-model", str(fine / "model.uwrb"))
    assert code == 0 and json.loads(out)["estimate"] > 0


def test_not_nested_exit_code(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "greedy", "--problem", "tc2", "--n", "6", "--train", "6", "--tol", "1e-3", "--out", str(a))[0] == 0
    assert run(capsys, "greedy", "--problem", "tc2", "--n", "8", "--train", "6", "--tol", "1e-3", "--out", str(b))[0] == 0
    code, _, err = run(capsys, "online", "--model", str(a / "model.uwrb"), "--mu", "0.5",
                       "--fine-model", str(b / "model.uwrb"))
    assert code == 2 and "different" in err


def test_online_empty_model(capsys, tmp_path):
    assert run(capsys, "greedy", "--problem", "tc2", "--n", "6", "--train", "4", "--tol", "1e9", "--out", str(tmp_path))[0] == 0
    code, out, _ = run(capsys, "online", "--model", str(tmp_path / "model.uwrb"), "--mu", "0.5", "--compare-full")
    data = json.loads(out)
    assert code == 0 and data["N"] == 0 and data["l2_vs_full"] == pytest.approx(data["l2_full"])


def test_validate(capsys):
    code, out, _ = run(capsys, "validate", "--problem", "2d-circle")
    assert code == 0 and json.loads(out)["filling_source"] == "catalog"


def test_numerical_failure_exit_code(capsys, monkeypatch):
    from ultraweak import cli
    from ultraweak.exceptions import NotSPD

    def boom(*a, **k):
        raise NotSPD("forced")

    monkeypatch.setattr(cli, "solve_full", boom)
    code, _, err = run(capsys, "solve", "--problem", "1d-decay")
    assert code == 3 and "forced" in err


def test_postprocess_needs_order_two(capsys):
    code, _, err = run(capsys, "solve", "--problem", "2d-g3", "--n", "4", "--postprocess")
    assert code == 2
