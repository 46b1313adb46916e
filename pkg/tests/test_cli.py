import re
from pathlib import Path

import pytest
from typer.testing import CliRunner

from helpers import facts_text
from ldlpp.cli import EXIT_ANALYSIS, EXIT_OK, EXIT_STEP_LIMIT, EXIT_USAGE, app
from ldlpp.config import SessionOptions

runner = CliRunner()


def run(*args, input=None):
    return runner.invoke(app, [str(a) for a in args], input=input)


def lines(text):
    return [line for line in text.splitlines() if line.strip()]


def test_single_answer(fixtures):
    result = run(fixtures / "advisor_one.ldl", input="actual_adv(ann, P).\n")
    assert result.exit_code == EXIT_OK
    out = lines(result.stdout)
    assert len(out) == 2
    assert re.fullmatch(r"actual_adv\(ann, (smith|jones)\)", out[0])
    assert out[1] == "-- 1 answer"


def test_answer_count_line(fixtures):
    result = run(fixtures / "advisor.ldl", input="professor(P, cs).\nquery student(nobody, M, Y).\n")
    out = lines(result.stdout)
    assert "-- 2 answers" in out and "-- 0 answers" in out


def test_explain_bistate(fixtures):
    result = run(fixtures / "ancestors.ldl", input="explain bistate all_anc\n")
    assert result.exit_code == EXIT_OK
    golden = lines((fixtures / "ancestors.bistate").read_text(encoding="utf-8"))
    assert sorted(lines(result.stdout)) == sorted(golden)


def test_explain_needs_a_known_kind(fixtures):
    result = run(fixtures / "ancestors.ldl", input="explain magic all_anc\n")
    assert result.exit_code == EXIT_USAGE
    assert "unknown explain kind 'magic'" in result.stderr


def test_unknown_predicate(fixtures):
    result = run(fixtures / "advisor.ldl", input="nope(X).\n")
    assert result.exit_code == EXIT_USAGE
    assert "error: unknown predicate: nope" in result.stderr


def test_step_limit(fixtures):
    result = run(fixtures / "nat.ldl", "--max-steps", 3, input="nat(J, N).\n")
    assert result.exit_code == EXIT_STEP_LIMIT
    assert "step limit reached after 3 steps" in result.stderr


def test_step_limit_from_config_file(fixtures, tmp_path):
    config = tmp_path / "ldl.yaml"
    config.write_text("max_steps: 3\n", encoding="utf-8")
    result = run(fixtures / "nat.ldl", "--config", config, input="nat(J, N).\n")
    assert result.exit_code == EXIT_STEP_LIMIT


def test_trace_shows_backjumps(fixtures):
    result = run(fixtures / "query3.ldl", "--trace", input="query3(A, B).\n")
    assert result.exit_code == EXIT_OK
    jumps = [line for line in result.stderr.splitlines() if "jump" in line]
    assert jumps
    assert any(re.search(r"b2\(.*->.*b1\(", line) for line in jumps)
    assert "-- 0 answers" in result.stdout


def test_parity_verdict_does_not_depend_on_seed(fixtures, tmp_path):
    program = tmp_path / "parity.ldl"
    program.write_text((fixtures / "parity.ldl").read_text(encoding="utf-8")
                       + facts_text("d", [(i,) for i in range(7)]), encoding="utf-8")
    verdicts = set()
    for seed in range(5):
        result = run(program, "--seed", seed, input="isodd.\n")
        assert result.exit_code == EXIT_OK
        verdicts.add(tuple(lines(result.stdout)))
    assert verdicts == {("isodd", "-- 1 answer")}


def test_rules_and_facts_commands(fixtures):
    script = "q(S) <- student(S, cs, _).\nq(S).\nfacts professor\n"
    result = run(fixtures / "advisor.ldl", input=script)
    assert result.exit_code == EXIT_OK
    out = lines(result.stdout)
    assert {"q(ann)", "q(bob)"} <= set(out)
    assert out[-4:] == ["professor(jones, cs)", "professor(lee, math)", "professor(smith, cs)", "-- 3 answers"]


@pytest.mark.parametrize("script, code, message", [
    ("frobnicate\n", EXIT_USAGE, "unknown command: frobnicate"),
    ("set bogus 1\n", EXIT_USAGE, "unknown option: bogus"),
    ("p(X <- q.\n", EXIT_ANALYSIS, "syntax error"),
    ("p(X) <- q(Y).\n", EXIT_ANALYSIS, "unsafe rules"),
    ("load\n", EXIT_USAGE, "usage: load <file>"),
])
def test_errors(fixtures, script, code, message):
    result = run(fixtures / "advisor.ldl", input=script)
    assert result.exit_code == code
    assert message in result.stderr


def test_first_error_decides_the_exit_code(fixtures):
    result = run(fixtures / "advisor.ldl", input="nope(X).\np(X <- q.\nprofessor(P, math).\n")
    assert result.exit_code == EXIT_USAGE
    assert "professor(lee, math)" in result.stdout


def test_batch_stops_at_the_first_error(fixtures, tmp_path):
    queries = tmp_path / "queries.txt"
    queries.write_text("% advisors\nprofessor(P, math).\nnope(X).\nstudent(S, M, Y).\n", encoding="utf-8")
    result = run(fixtures / "advisor.ldl", "--batch", queries)
    assert result.exit_code == EXIT_USAGE
    assert "professor(lee, math)" in result.stdout
    assert "student(" not in result.stdout


def test_missing_program_file(tmp_path):
    result = run(tmp_path / "absent.ldl", input="")
    assert result.exit_code == EXIT_USAGE
    assert result.stderr.startswith("error:")


def test_unknown_profile(fixtures):
    result = run(fixtures / "advisor.ldl", "--profile", "turbo", input="")
    assert result.exit_code == EXIT_USAGE
    assert "unknown profile 'turbo'" in result.stderr


def test_quit_ends_the_session(fixtures):
    result = run(fixtures / "advisor.ldl", input="quit\nnope(X).\n")
    assert result.exit_code == EXIT_OK


def test_division_by_zero_in_an_offloaded_rule_drops_the_row(fixtures):
    result = run(fixtures / "employee.ldl",
                 input="ratio(N, R) <- employee(N, S, _, D), R = S / (D - 10).\nratio(N, R).\ndcount(D, C).\n")
    assert result.exit_code == EXIT_OK
    assert "-- 4 answers" in result.stdout
    assert "-- 2 answers" in result.stdout


def test_fixture_directory_from_environment(monkeypatch, tmp_path):
    monkeypatch.delenv("LDL_FIXTURES", raising=False)
    assert Path(SessionOptions.from_profile().fixtures_dir).name == "fixtures"
    monkeypatch.setenv("LDL_FIXTURES", str(tmp_path))
    assert SessionOptions.from_profile("trace").fixtures_dir == str(tmp_path)
