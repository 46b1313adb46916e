import pytest

from ldlpp.analysis import (
    AggregateClass, RuleKind, analyze, bistate, build_graph, check_safety, classify_aggregate, expand_aggregates,
    foe_transform, stratify, syncbi, xy_classify, xy_groups,
)
from ldlpp.errors import NotXYError, SafetyError, StratificationError, UdaError
from ldlpp.lang import Program, format_rule, print_program
from ldlpp.parser import parse_program
from ldlpp.uda import builtin_catalog


def load(fixtures, name):
    return parse_program((fixtures / name).read_text(encoding="utf-8"))


def rule_lines(text):
    return [line for line in text.splitlines() if line.strip()]


class TestSafety:
    def test_head_variable_must_be_bound(self):
        diags = check_safety(parse_program("p(X) <- q(Y)."))
        assert [d.rule for d in diags] == ["r1"]
        assert "X" in diags[0].message

    def test_variable_only_in_negation(self):
        diags = check_safety(parse_program("p(X) <- q(X), ~r(X, Z)."))
        assert len(diags) == 1 and "Z" in diags[0].message

    def test_anonymous_variable_in_negation_is_existential(self):
        assert check_safety(parse_program("p(X) <- q(X), ~r(X, _).")) == []

    def test_equality_binds(self):
        assert check_safety(parse_program("p(X, Y) <- q(X), Y = X + 1.")) == []

    def test_unbound_comparison(self):
        assert check_safety(parse_program("p(X) <- q(X), Y > 3."))

    def test_analyze_raises_with_positions(self):
        with pytest.raises(SafetyError) as e:
            analyze(parse_program("p(a).\nq(X) <- p(Y)."), builtin_catalog())
        assert "line 2" in str(e.value)


class TestStratification:
    def test_negative_cycle_is_rejected(self):
        with pytest.raises(StratificationError) as e:
            analyze(parse_program("q(a).\np(X) <- q(X), ~p(X)."), builtin_catalog())
        assert e.value.cycle == ["p", "p"]
        assert e.value.kind == "negation"

    def test_nonmonotone_aggregate_in_recursion_is_rejected(self):
        with pytest.raises(StratificationError) as e:
            analyze(parse_program("e(a, b).\np(X, Y) <- e(X, Y).\np(X, count<Y>) <- p(Y, X)."),
                    builtin_catalog())
        assert e.value.kind == "aggregate"

    def test_monotone_aggregate_in_recursion_is_accepted(self, fixtures):
        analyzed = analyze(load(fixtures, "party.ldl"), builtin_catalog())
        assert analyzed.stratification["willcome"] == analyzed.stratification["c_friends"]

    def test_positive_closure_over_base_relation_is_one_stratum(self):
        p = parse_program("e(a, b).\ntc(X, Y) <- e(X, Y).\ntc(X, Z) <- tc(X, Y), e(Y, Z).")
        s = stratify(p)
        assert s["e"] == 0 and s["tc"] == 0

    def test_negation_layers(self):
        p = parse_program("""
            e(a, b).
            reach(X, Y) <- e(X, Y).
            reach(X, Z) <- reach(X, Y), e(Y, Z).
            node(X) <- e(X, _).
            node(Y) <- e(_, Y).
            unreach(X, Y) <- node(X), node(Y), ~reach(X, Y).
        """)
        s = stratify(p)
        assert s["unreach"] > s["reach"]
        assert s["unreach"] > s["node"]

    def test_unknown_aggregate(self):
        with pytest.raises(UdaError, match="foo"):
            analyze(parse_program("q(a, 1).\np(X, foo<Y>) <- q(X, Y)."), builtin_catalog())


class TestChoice:
    def test_first_order_equivalent_matches_golden(self, fixtures):
        p = load(fixtures, "advisor.ldl")
        foe = foe_transform(Program(p.rules))
        golden = (fixtures / "advisor.foe").read_text(encoding="utf-8")
        assert rule_lines(print_program(foe)) == rule_lines(golden)

    def test_foe_with_two_choice_goals_primes_per_goal(self, fixtures):
        p = load(fixtures, "parity.ldl")
        foe = foe_transform(Program(p.rules_for("chain")))
        diffs = [format_rule(r) for r in foe.rules if r.head.pred == "diffChoice_chain"]
        assert diffs == [
            "diffChoice_chain(X, Y) <- chosen_chain(X, Y_), Y != Y_.",
            "diffChoice_chain(X, Y) <- chosen_chain(X_, Y), X != X_.",
        ]

    def test_choice_rules_never_see_chosen_in_source(self, fixtures):
        analyzed = analyze(load(fixtures, "advisor.ldl"), builtin_catalog())
        assert "chosen_actual_adv" not in analyzed.program.predicates()


class TestXY:
    def test_bistate_of_ancestors(self, fixtures):
        b = bistate(load(fixtures, "ancestors.ldl"), ["all_anc"])
        golden = (fixtures / "ancestors.bistate").read_text(encoding="utf-8")
        assert sorted(rule_lines(print_program(b.program()))) == sorted(rule_lines(golden))
        assert len(b.copy_rules) == 1

    def test_bistate_strata(self, fixtures):
        b = bistate(load(fixtures, "ancestors.ldl"))
        strata = stratify(b.program()).strata()
        assert strata == [["old_all_anc", "old_delta_anc", "parent"], ["new_delta_anc"], ["new_all_anc"]]

    def test_syncbi(self, fixtures):
        text = print_program(syncbi(load(fixtures, "ancestors.ldl")))
        lines = rule_lines(text)
        assert "counter(0)." in lines
        assert "new_delta_anc(marc) <- counter(0)." in lines
        assert "delta_anc(J, X) <- new_delta_anc(X), counter(J)." in lines
        assert "all_anc(J, X) <- new_all_anc(X), counter(J)." in lines

    def test_ancestor_rules_are_classified(self, fixtures):
        [g] = xy_groups(load(fixtures, "ancestors.ldl"))
        assert [(r.label, kind) for r, kind in g.kinds] == [
            ("delta_anc@exit1", RuleKind.X),
            ("r1", RuleKind.Y),
            ("r2", RuleKind.Y),
            ("r3", RuleKind.X),
        ]

    def test_overlap_rule_is_a_y_rule(self, fixtures):
        [g] = xy_groups(load(fixtures, "coalesce.ldl"))
        kinds = {kind for r, kind in g.kinds if r.head.pred == "overlap"}
        assert kinds == {RuleKind.Y}

    def test_two_step_head_is_neither(self):
        p = parse_program("q(0, a).\nq(J+2, X) <- q(J, X).")
        assert [kind for _, kind in xy_classify(p.rules)] == [RuleKind.NOT_XY]

    @pytest.mark.parametrize("name", ["ancestors.ldl", "coalesce.ldl", "floyd.ldl", "nat.ldl"])
    def test_every_rule_of_an_accepted_group_is_x_or_y(self, fixtures, name):
        for g in analyze(load(fixtures, name), builtin_catalog()).groups:
            assert len(g.kinds) == len(g.rules)
            assert all(kind in (RuleKind.X, RuleKind.Y) for _, kind in g.kinds)

    def test_groups_take_in_stacked_temporal_rules(self, fixtures):
        [g] = xy_groups(load(fixtures, "coalesce.ldl"))
        assert set(g.preds) == {"e_hist", "overlap", "final_e_hist"}

    def test_floyd_is_accepted(self, fixtures):
        analyzed = analyze(load(fixtures, "floyd.ldl"), builtin_catalog())
        [g] = analyzed.groups
        assert set(g.preds) == {"delta", "new", "newmin", "discard", "all"}

    def test_choice_without_temporal_variable_is_rejected(self):
        p = parse_program("""
            e(a, b).
            p(0, a).
            p(J+1, Y) <- p(J, X), e(X, Y), choice((X), (Y)).
        """)
        with pytest.raises(NotXYError, match=r"\(b\)"):
            analyze(p, builtin_catalog())

    def test_rule_neither_x_nor_y(self):
        p = parse_program("""
            r(a).
            q(0, a).
            q(J+1, X) <- q(J+1, X), r(X).
        """)
        with pytest.raises(NotXYError):
            analyze(p, builtin_catalog())

    def test_negation_on_same_step_is_not_xy_stratified(self):
        p = parse_program("""
            e(a, b).
            p(0, a).
            p(J+1, Y) <- p(J, X), e(X, Y), ~q(J+1, Y).
            q(J+1, Y) <- p(J+1, Y), ~p(J, Y).
        """)
        with pytest.raises(NotXYError):
            analyze(p, builtin_catalog())


def test_inline_predicates_are_unfolded(fixtures):
    analyzed = analyze(load(fixtures, "coalesce.ldl"), builtin_catalog())
    preds = analyzed.program.derived()
    assert "distinct" not in preds and "select_larger" not in preds
    labels = [r.label for r in analyzed.program.rules if r.head.pred == "overlap"]
    assert len(labels) == 2


def test_graph_marks_nonmonotone_edges(fixtures):
    graph = build_graph(load(fixtures, "parity.ldl"))
    assert graph.nonmonotone("chain", "isodd")
    assert not graph.nonmonotone("odd", "isodd")
    assert graph.recursive("chain") and graph.recursive("odd")


@pytest.mark.parametrize("name, expected", [
    ("mcount", AggregateClass.MONOTONE),
    ("msum", AggregateClass.MONOTONE),
    ("count", AggregateClass.NONMONOTONE),
    ("avg", AggregateClass.NONMONOTONE),
    ("coales", AggregateClass.NONMONOTONE),
])
def test_classify_aggregate(name, expected):
    assert classify_aggregate(builtin_catalog().get(name)) is expected


def test_only_nonmonotone_expansion_looks_for_the_last_element():
    def negated(name):
        p = parse_program(f"v(1).\nv(2).\nr({name}<X>) <- v(X).")
        expanded = expand_aggregates(p, builtin_catalog())
        return {a.pred for r in expanded.rules for a in r.atoms() if a.negated}

    assert "chain_r1" not in negated("mcount")
    assert "chain_r1" in negated("count")
