import random
from collections import deque

import pytest

from helpers import answers, facts_text
from ldlpp.analysis import analyze, syncbi
from ldlpp.config import SessionOptions
from ldlpp.errors import StepLimitReached
from ldlpp.fixpoint import iterated_fixpoint, load_facts
from ldlpp.lang import Program, print_program
from ldlpp.parser import parse_program
from ldlpp.store import Store
from ldlpp.uda import builtin_catalog

SEEDS = range(20)

ANCESTOR_RULES = """
delta_anc(0, marc).
delta_anc(J+1, Y) <- delta_anc(J, X), parent(Y, X), ~all_anc(J, Y).
all_anc(J+1, X) <- all_anc(J, X).
all_anc(J, X) <- delta_anc(J, X).
"""


def generations(parents, start):
    """Breadth-first distance from `start` along child -> parent links."""
    dist, todo = {start: 0}, deque([start])
    while todo:
        x = todo.popleft()
        for parent, child in parents:
            if child == x and parent not in dist:
                dist[parent] = dist[x] + 1
                todo.append(parent)
    return {(d, x) for x, d in dist.items()}


def merged(intervals):
    out = []
    for start, end in sorted(intervals):
        if out and start <= out[-1][1]:
            out[-1][1] = max(out[-1][1], end)
        else:
            out.append([start, end])
    return {tuple(i) for i in out}


def shortest_paths(arcs):
    """Least cost of every nonempty path, relaxed until nothing changes."""
    dist = {(x, y): c for x, y, c in arcs}
    changed = True
    while changed:
        changed = False
        for (x, y), c1 in list(dist.items()):
            for (y2, z), c2 in list(dist.items()):
                if y2 == y and c1 + c2 < dist.get((x, z), float("inf")):
                    dist[(x, z)] = c1 + c2
                    changed = True
    return {(x, z, c) for (x, z), c in dist.items()}


def last_step(rows):
    rows = list(rows)
    last = max(r[0] for r in rows)
    return {r[1:] for r in rows if r[0] == last}


def run_synchronized(text, preds, steps):
    """
    Ground q(J, ...) tuples of steps 0..steps-1, running the synchronized
    bistate program once per step with counter(J) and the previous step's
    new_q tuples loaded as old_q facts.
    """
    source = parse_program(text)
    rules = print_program(Program(syncbi(source).rules))
    edb = print_program(Program([], [], [a for a in source.facts if a.pred not in preds]))
    old, out = {}, set()
    for step in range(steps):
        facts = edb + f"counter({step}).\n" + "".join(facts_text("old_" + q, rows) for q, rows in old.items())
        analyzed = analyze(parse_program(rules + facts), builtin_catalog())
        store = Store()
        load_facts(store, analyzed.program)
        iterated_fixpoint(analyzed, store, SessionOptions())
        for q in preds:
            rel = store.get(q)
            out |= {(q,) + row for row in (rel.rows if rel is not None else ())}
            new = store.get("new_" + q)
            old[q] = list(new.rows) if new is not None else []
    return out


class TestAncestors:
    def test_fixture(self, make_session):
        session = make_session("ancestors.ldl")
        assert answers(session, "delta_anc(J, X).") == {(0, "marc"), (1, "anna"), (2, "zoe")}

    @pytest.mark.parametrize("seed", SEEDS)
    def test_random_family_graphs(self, make_session, seed):
        rng = random.Random(seed)
        people = ["marc"] + [f"p{i}" for i in range(10)]
        parents = sorted({(rng.choice(people), rng.choice(people)) for _ in range(14)})
        parents = [(p, c) for p, c in parents if p != c]
        session = make_session(text=ANCESTOR_RULES + facts_text("parent", parents))
        assert answers(session, "delta_anc(J, X).") == generations(parents, "marc")

    def test_bound_query(self, make_session):
        session = make_session("ancestors.ldl")
        assert answers(session, "delta_anc(2, X).") == {(2, "zoe")}

    @pytest.mark.parametrize("n", [2, 5, 9])
    def test_chain_stops_after_its_last_generation(self, make_session, n):
        people = ["marc"] + [f"p{i}" for i in range(1, n)]
        parents = list(zip(people[1:], people))
        session = make_session(text=ANCESTOR_RULES + facts_text("parent", parents))
        assert answers(session, "delta_anc(J, X).") == {(j, x) for j, x in enumerate(people)}
        assert session.evaluator.stats.steps == list(range(n))

    @pytest.mark.parametrize("seed", range(5))
    def test_synchronized_program_grounds_like_the_xy_program(self, make_session, fixtures, seed):
        if seed == 0:
            text = (fixtures / "ancestors.ldl").read_text(encoding="utf-8")
        else:
            rng = random.Random(seed)
            people = ["marc"] + [f"p{i}" for i in range(6)]
            parents = [(p, c) for p, c in {(rng.choice(people), rng.choice(people)) for _ in range(8)} if p != c]
            text = ANCESTOR_RULES + facts_text("parent", sorted(parents))
        session = make_session(text=text)
        expected = {("delta_anc",) + r for r in answers(session, "delta_anc(J, X).")}
        expected |= {("all_anc",) + r for r in answers(session, "all_anc(J, X).")}
        steps = max(session.evaluator.stats.steps) + 1
        assert run_synchronized(text, ["delta_anc", "all_anc"], steps) == expected


class TestCoalesce:
    def test_fixture(self, make_session):
        session = make_session("coalesce.ldl")
        got = {row[1:] for row in answers(session, "final_e_hist(J, E, F, T).")}
        assert got == {(1001, 1, 8), (1001, 10, 12)}

    @pytest.mark.parametrize("seed", SEEDS)
    def test_random_periods(self, make_session, fixtures, seed):
        rng = random.Random(seed)
        rules = "".join(line + "\n" for line in (fixtures / "coalesce.ldl").read_text(encoding="utf-8").splitlines()
                        if not line.startswith("emp_dep_sal("))
        rows = []
        for eno in (1, 2):
            for _ in range(rng.randint(1, 7)):
                start = rng.randint(0, 30)
                rows.append((eno, rng.choice(["toys", "shoes"]), rng.randint(1, 5) * 1000,
                             start, start + rng.randint(0, 6)))
        session = make_session(text=rules + facts_text("emp_dep_sal", rows))
        got = {row[1:] for row in answers(session, "final_e_hist(J, E, F, T).")}
        expected = {(eno,) + span for eno in (1, 2)
                    for span in merged({(r[3], r[4]) for r in rows if r[0] == eno})}
        assert got == expected


class TestFloyd:
    def test_fixture(self, make_session):
        session = make_session("floyd.ldl")
        got = last_step(answers(session, "all(J, X, Y, C)."))
        assert got == {("a", "b", 1), ("b", "c", 2), ("a", "c", 3), ("c", "d", 1), ("b", "d", 3), ("a", "d", 4)}

    @pytest.mark.parametrize("seed", SEEDS)
    def test_random_digraphs(self, make_session, fixtures, seed):
        rng = random.Random(seed)
        nodes = "abcdef"
        arcs = [(x, y, rng.randint(1, 9)) for x in nodes for y in nodes if x != y and rng.random() < 0.4]
        if not arcs:
            arcs = [("a", "b", 1)]
        rules = "".join(line + "\n" for line in (fixtures / "floyd.ldl").read_text(encoding="utf-8").splitlines()
                        if not line.startswith("g("))
        session = make_session(text=rules + facts_text("g", arcs))
        assert last_step(answers(session, "all(J, X, Y, C).")) == shortest_paths(arcs)


def test_step_limit(make_session):
    session = make_session("nat.ldl", max_steps=3)
    with pytest.raises(StepLimitReached, match="step limit reached after 3 steps"):
        answers(session, "nat(J, N).")


def test_terminating_program_stops_below_the_limit(make_session):
    session = make_session("ancestors.ldl", max_steps=4)
    assert len(answers(session, "delta_anc(J, X).")) == 3


@pytest.mark.parametrize("name, query", [
    ("ancestors.ldl", "all_anc(J, X)."),
    ("floyd.ldl", "all(J, X, Y, C)."),
    ("coalesce.ldl", "e_hist(J, E, F, T)."),
])
def test_copy_rules_do_not_change_results(make_session, name, query):
    shared = answers(make_session(name, copy_rules=True), query)
    copied = answers(make_session(name, copy_rules=False), query)
    assert shared == copied
