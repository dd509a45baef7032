import json

import pytest

from poisson_kam import benchmark_problem, two_dof_problem
from poisson_kam.cli import main


@pytest.fixture
def bench_file(tmp_path):
    path = tmp_path / "bench.json"
    benchmark_problem(epsilon=1e-3).save(path)
    return path


def test_normalize_converges(bench_file, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["normalize", "--problem", str(bench_file), "--out", str(out)])
    assert code == 0
    assert (out / "trace.jsonl").exists()
    assert (out / "normal_form.json").exists()
    assert (out / "generators.json").exists()
    header = json.loads((out / "trace.jsonl").read_text().splitlines()[0])["header"]
    assert header["status"] == "converged"
    assert header["empirical_mode"] is True


def test_normalize_zero_perturbation(tmp_path):
    prob = tmp_path / "p.json"
    benchmark_problem(epsilon=0.0).save(prob)
    out = tmp_path / "run"
    assert main(["normalize", "--problem", str(prob), "--out", str(out)]) == 0
    lines = (out / "trace.jsonl").read_text().splitlines()
    assert len(lines) == 1  # header only: zero effective steps


def test_normalize_resonant_exit_1(tmp_path, capsys):
    prob = tmp_path / "res.json"
    two_dof_problem(omega=(1.0, 2.0)).save(prob)
    code = main(["normalize", "--problem", str(prob), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "resonance" in capsys.readouterr().err


def test_normalize_refused_exit_2(tmp_path):
    prob = tmp_path / "big.json"
    benchmark_problem(epsilon=8e-3).save(prob)
    code = main(["normalize", "--problem", str(prob), "--out", str(tmp_path / "o")])
    assert code == 2


def test_normalize_malformed_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 1,')
    code = main(["normalize", "--problem", str(bad), "--out", str(tmp_path / "o")])
    assert code == 1
    err = capsys.readouterr().err
    assert "line" in err and "column" in err


def test_verify_after_normalize(bench_file, tmp_path):
    out = tmp_path / "run"
    assert main(["normalize", "--problem", str(bench_file), "--out", str(out)]) == 0
    code = main(
        [
            "verify",
            "--problem",
            str(bench_file),
            "--out",
            str(out),
            "--angles",
            "2",
            "--t-end",
            "40",
        ]
    )
    assert code == 0
    report = json.loads((out / "persistence_report.json").read_text())
    assert report["passed"] is True
    assert report["min_improvement"] >= 10


def test_verify_threshold_inf_fails(bench_file, tmp_path):
    out = tmp_path / "run"
    main(["normalize", "--problem", str(bench_file), "--out", str(out)])
    code = main(
        [
            "verify", "--problem", str(bench_file), "--out", str(out),
            "--angles", "2", "--t-end", "20", "--threshold", "inf",
        ]
    )
    assert code == 2


def test_verify_missing_artifacts(bench_file, tmp_path):
    code = main(
        ["verify", "--problem", str(bench_file), "--out", str(tmp_path / "void")]
    )
    assert code == 1


def test_check_diophantine_golden(tmp_path, capsys):
    prob = tmp_path / "g.json"
    two_dof_problem().save(prob)
    code = main(["check-diophantine", "--problem", str(prob), "--k-max", "6"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["gamma_K"] > 0
    assert len(out["shells"]) == 6


def test_check_diophantine_resonant_exit_2(tmp_path):
    prob = tmp_path / "r.json"
    two_dof_problem(omega=(1.0, 2.0)).save(prob)
    assert main(["check-diophantine", "--problem", str(prob)]) == 2


def test_check_diophantine_unit(tmp_path, capsys):
    prob = tmp_path / "u.json"
    benchmark_problem().save(prob)
    assert main(["check-diophantine", "--problem", str(prob), "--k-max", "5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["gamma_K"] == 1.0


def test_constants_command(bench_file, tmp_path, capsys):
    code = main(
        ["constants", "--problem", str(bench_file), "--out", str(tmp_path / "c")]
    )
    assert code == 0
    payload = json.loads((tmp_path / "c" / "constants.json").read_text())
    c = payload["constants"]
    assert c["M5"] == pytest.approx(c["M0"] + c["M3"])
    assert c["M6"] == pytest.approx(c["M1"] + c["M4"])


def test_lie_check_command(bench_file, tmp_path):
    out = tmp_path / "run"
    main(["normalize", "--problem", str(bench_file), "--out", str(out)])
    assert main(["lie-check", "--problem", str(bench_file), "--out", str(out)]) == 0


def test_determinism_byte_identical(bench_file, tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["normalize", "--problem", str(bench_file), "--out", str(out1)]) == 0
    assert main(["normalize", "--problem", str(bench_file), "--out", str(out2)]) == 0
    assert (out1 / "trace.jsonl").read_bytes() == (out2 / "trace.jsonl").read_bytes()
    assert (out1 / "normal_form.json").read_bytes() == (
        out2 / "normal_form.json"
    ).read_bytes()
    assert (out1 / "generators.json").read_bytes() == (
        out2 / "generators.json"
    ).read_bytes()


def test_verify_writes_trajectories(bench_file, tmp_path):
    out = tmp_path / "run"
    main(["normalize", "--problem", str(bench_file), "--out", str(out)])
    code = main(
        [
            "verify", "--problem", str(bench_file), "--out", str(out),
            "--angles", "2", "--t-end", "10", "--write-trajectories",
        ]
    )
    assert code == 0
    assert (out / "trajectory_naive_00.csv").exists()
    assert (out / "trajectory_mapped_01.csv").exists()
