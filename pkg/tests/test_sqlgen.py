import pytest

from helpers import answers
from ldlpp import adapters
from ldlpp.errors import AdapterError, ConfigError
from ldlpp.parser import parse_program
from ldlpp.sqlgen import collapse, compress, normalize_sql

QUERIES = [
    "expensive_employee(N).",
    "no_reports(N).",
    "davg(D, A).",
    "dcount(D, C).",
    "top_earner(N).",
    "bonus(N, B).",
]


def query_for(session, pred):
    labels = {r.label for r in session.offloaded.program.rules_for(pred)}
    found = [q for name, q in session.offloaded.queries.items() if session.offloaded.sources[name] in labels]
    assert len(found) == 1
    return normalize_sql(found[0].render())


def test_golden_sql(make_session, fixtures):
    session = make_session("employee.ldl")
    golden = (fixtures / "employee.sql").read_text(encoding="utf-8")
    assert query_for(session, "expensive_employee") == normalize_sql(golden)


def test_expected_answers(make_session):
    session = make_session("employee.ldl")
    assert answers(session, "expensive_employee(N).") == {("alice",), ("gina",)}
    assert answers(session, "no_reports(N).") == {("erin",), ("frank",), ("gina",)}
    assert answers(session, "dcount(D, C).") == {(10, 3), (20, 4)}
    assert answers(session, "davg(D, A).") == {(10, 260000 / 3), (20, 90750.0)}
    assert answers(session, "top_earner(N).") == {("alice",), ("carol",), ("gina",)}
    assert ("alice", 6000.0) in answers(session, "bonus(N, B).")


# department 10 makes the divisor zero
PARTIAL_RULES = (
    "ratio(N, R) <- employee(N, S, _, D), R = S / (D - 10).\n"
    "dslot(K, count<N>) <- employee(N, _, _, D), K = 100 / (D - 10).\n"
)


@pytest.mark.parametrize("query", QUERIES + ["ratio(N, R).", "dslot(K, C)."])
def test_offloaded_and_engine_paths_agree(make_session, query):
    offloaded = make_session("employee.ldl", PARTIAL_RULES)
    engine = make_session("employee.ldl", PARTIAL_RULES, offload=False)
    assert offloaded.offloaded.queries and not engine.offloaded.queries
    assert answers(offloaded, query) == answers(engine, query)


def test_failed_division_drops_only_that_row(make_session):
    session = make_session("employee.ldl", PARTIAL_RULES)
    assert answers(session, "ratio(N, R).") == {
        ("carol", 10000.0), ("dave", 9000.0), ("frank", 7800.0), ("gina", 9500.0)}
    assert answers(session, "dslot(K, C).") == {(10.0, 4)}


def test_negation_and_aggregates_go_to_sql(make_session):
    session = make_session("employee.ldl")
    assert "NOT EXISTS" in query_for(session, "no_reports")
    davg = query_for(session, "davg")
    assert "AVG(" in davg and "GROUP BY" in davg


def test_compressed_rule_is_offloaded_whole(make_session):
    session = make_session("employee.ldl")
    assert ">= 95000" in query_for(session, "top_earner")
    top = session.offloaded.program.rules_for("top_earner")[0]
    assert all(a.pred != "rich" for a in top.atoms())


def test_compress_keeps_the_unfolded_rule():
    program = parse_program(
        "database({ csv::t(A: int, B: int) }).\n"
        "big(A) <- t(A, B), B > 10.\n"
        "bigger(A) <- big(A), A > 3.\n"
    )
    schema = {d.pred: d for d in program.schema}
    out = compress(program, schema)
    assert [a.pred for a in out.rules_for("bigger")[0].atoms()] == ["t"]
    assert out.rules_for("big")


def test_collapse_leaves_internal_goals_to_the_engine(make_session):
    program = make_session("employee.ldl").source
    schema = {d.pred: d for d in program.schema}
    c = collapse(program.rules_for("bonus")[0], schema)
    assert [g.pred for g in c.sql_goals] == ["employee"]
    rate, bonus = c.residual
    assert rate.pred == "rate" and bonus.op == "="
    assert c.adapter == "csv"


class NoSubqueries(adapters.CsvAdapter):
    supports_not_exists = False
    supports_aggregates = False


def test_adapter_without_subqueries(make_session, monkeypatch):
    monkeypatch.setitem(adapters.ADAPTERS, "csv", NoSubqueries)
    session = make_session("employee.ldl")
    assert "NOT EXISTS" not in query_for(session, "no_reports")
    assert "AVG(" not in query_for(session, "davg")
    assert answers(session, "no_reports(N).") == {("erin",), ("frank",), ("gina",)}
    assert answers(session, "dcount(D, C).") == {(10, 3), (20, 4)}


def test_explain_sql(make_session):
    session = make_session("employee.ldl")
    assert "SELECT employee_0.NAME" in session.explain("sql", "expensive_employee")
    assert session.explain("sql", "rate") == "no SQL generated for rate"


def test_schema_file(make_session, fixtures):
    session = make_session()
    session.schema(fixtures / "employee_schema.ldl")
    session.load_text("paid(N, S) <- employee(N, S, _, _), S < 70000.")
    assert answers(session, "paid(N, S).") == {("erin", 60000)}
    assert len(session.facts("employee")) == 7


def test_schema_file_rejects_rules(make_session, fixtures):
    with pytest.raises(ConfigError, match="schema file"):
        make_session().schema(fixtures / "advisor.ldl")


def employee_dir(tmp_path, fixtures, csv_text):
    (tmp_path / "employee.ldl").write_text((fixtures / "employee.ldl").read_text(encoding="utf-8"), encoding="utf-8")
    (tmp_path / "employee.csv").write_text(csv_text, encoding="utf-8")
    return tmp_path / "employee.ldl"


def test_bad_value_in_csv(make_session, fixtures, tmp_path):
    program = employee_dir(tmp_path, fixtures, "NAME,SALARY,MANAGER,DEPTNO\nann,lots,none,10\n")
    session = make_session()
    session.load(program)
    with pytest.raises(AdapterError, match="employee.csv: row 1, column SALARY: expected int, got 'lots'"):
        answers(session, "expensive_employee(N).")


def test_missing_column(make_session, fixtures, tmp_path):
    program = employee_dir(tmp_path, fixtures, "NAME,SALARY,DEPTNO\nann,1,10\n")
    session = make_session()
    session.load(program)
    with pytest.raises(AdapterError, match="missing column"):
        answers(session, "no_reports(N).")


def test_missing_file(make_session, fixtures, tmp_path):
    program = employee_dir(tmp_path, fixtures, "")
    (tmp_path / "employee.csv").unlink()
    session = make_session()
    session.load(program)
    with pytest.raises(AdapterError, match="cannot read"):
        answers(session, "dcount(D, C).")


@pytest.mark.parametrize("csv_text", ["", "NAME,SALARY,MANAGER,DEPTNO\n"])
def test_empty_table(make_session, fixtures, tmp_path, csv_text):
    program = employee_dir(tmp_path, fixtures, csv_text)
    session = make_session()
    session.load(program)
    assert answers(session, "no_reports(N).") == set()
    assert answers(session, "dcount(D, C).") == set()


def test_cells_are_read_as_text(make_session, fixtures, tmp_path):
    program = employee_dir(tmp_path, fixtures, "NAME,SALARY,MANAGER,DEPTNO\nNA,100, none ,010\n")
    session = make_session()
    session.load(program)
    assert answers(session, "no_reports(N).") == {("NA",)}
    assert answers(session, "dcount(D, C).") == {(10, 1)}


def test_unknown_adapter(make_session):
    with pytest.raises(AdapterError, match="no adapter named 'oracle'"):
        make_session(text="database({ oracle::t(A: int) }).\np(A) <- t(A).")
