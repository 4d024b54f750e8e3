import json
import subprocess
import sys

import pytest

from syndicate.cli import EXIT_ERROR, EXIT_NOT_PROVED, EXIT_OK, RunReport, main

from conftest import CORPUS

pytestmark = pytest.mark.solver


def run(*argv):
    return main([str(a) for a in argv])


def test_prove_prints_certificate(capsys):
    assert run("prove", CORPUS / "countdown.while", "--template", "T(1,1)") == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0].endswith(")") and "proved" in out[0]
    cert = json.loads(out[1])
    assert cert["status"] == "proved" and cert["loops"][0]["ranking"].startswith("lex[")


def test_prove_not_proved_exit_code(capsys):
    assert run("prove", CORPUS / "negative" / "neg_stuck.while", "--template", "T(1,1)") == EXIT_NOT_PROVED


def test_usage_and_parse_errors(tmp_path, capsys):
    assert run("prove") == EXIT_ERROR
    assert run("prove", CORPUS / "countdown.while", "--pref", "-1") == EXIT_ERROR
    assert run("prove", CORPUS / "countdown.while", "--mode", "fast") == EXIT_ERROR
    bad = tmp_path / "bad.while"
    bad.write_text("while (x > 0 { x--; }")
    assert run("prove", bad) == EXIT_ERROR
    assert "ParseError" in capsys.readouterr().err
    assert run("prove", CORPUS / "nested_drain.while", "--mode", "combined") == EXIT_ERROR


def test_missing_solver_is_an_error(capsys):
    assert run("prove", CORPUS / "countdown.while", "--solver", "/nonexistent/z3") == EXIT_ERROR


def test_verify_round_trip(tmp_path, capsys):
    cert_path = tmp_path / "cert.jsonl"
    assert run("prove", CORPUS / "countup.while", "--template", "T(1,1)", "--json", cert_path) == EXIT_OK
    capsys.readouterr()
    assert run("verify", CORPUS / "countup.while", cert_path) == EXIT_OK
    assert capsys.readouterr().out.strip() == "accepted"
    row = json.loads(cert_path.read_text().splitlines()[0])
    assert row["solver"] and row["params"]["pref"] == 10 and row["wallSeconds"] >= 0
    row["loops"][0]["ranking"] = "lex[ max(0 + -1*i, 0) ]"
    tampered = tmp_path / "tampered.json"
    tampered.write_text(json.dumps(row))
    assert run("verify", CORPUS / "countup.while", tampered) == EXIT_NOT_PROVED
    assert "rejected" in capsys.readouterr().out


def test_verify_from_stdin(tmp_path):
    cert = '{"status": "proved", "loops": [{"loopId": 0, "ranking": "lex[ max(0 + 1*x, 0) ]", "invariant": "true"}]}'
    proc = subprocess.run([sys.executable, "-m", "syndicate", "verify", str(CORPUS / "countdown.while"), "-"],
                          input=cert, capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "accepted"


def test_bench_writes_one_row_per_file(tmp_path, capsys):
    suite = tmp_path / "suite"
    suite.mkdir()
    for name in ("countdown", "countup"):
        (suite / f"{name}.while").write_text((CORPUS / f"{name}.while").read_text())
    (suite / "stuck.while").write_text("while (x > 0) { x := x; }")
    out = tmp_path / "bench.jsonl"
    code = run("bench", suite, "--template", "T(1,1)", "--json", out, "--timeout", "30")
    assert code == EXIT_NOT_PROVED
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert sorted(r["status"] for r in rows) == ["no_proof_in_template", "proved", "proved"]
    assert "proved 2/3" in capsys.readouterr().out


def test_report_mean_counts_failures_at_the_cap():
    report = RunReport([{"file": "a", "status": "proved", "wallSeconds": 2.0},
                        {"file": "b", "status": "inconclusive", "wallSeconds": 7.0}], timeout_s=10.0)
    assert report.proved == 1
    assert report.mean_seconds() == 6.0


def test_sample_traces(capsys):
    assert run("sample-traces", CORPUS / "countdown.while", "--traces", "5") == EXIT_OK
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert rows and all(r["pre"]["x"] - r["post"]["x"] == 1 for r in rows)


def test_solver_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("SYNDICATE_SOLVER", "/nonexistent/z3")
    assert run("prove", CORPUS / "countdown.while", "--template", "T(1,1)") == EXIT_ERROR
