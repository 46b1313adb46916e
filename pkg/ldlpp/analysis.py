"""
Compile-time checks and program-to-program transformations.

Everything here is a pure function from Program to Program (or to an
analysis artifact); nothing touches a store. The pipeline run on every
loaded program is analyze():

    register aggregate definitions -> unfold inline predicates ->
    safety -> dependency graph -> XY groups (classified, bistate built,
    choice/aggregate conditions checked) -> stratification

foe_transform, expand_aggregates and syncbi are not needed for evaluation;
they exist for explain output and for cross-checking the engine.
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import networkx as nx
from more_itertools import unique_everseen

from ldlpp.errors import Diagnostic, NotXYError, SafetyError, StratificationError, UdaError
from ldlpp.lang import (
    Atom, ChoiceGoal, Comparison, Compound, Const, Program, Rule, TemporalExpr, Var,
    format_literal, rename_apart, substitute, temporal_argument, vars_of,
)
from ldlpp.terms import bindable

log = logging.getLogger(__name__)


# === DEPENDENCY GRAPH ===

class Polarity(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    AGGREGATE = "aggregate"


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    polarity: Polarity
    monotone: bool = True


class PredicateGraph:
    """
    Predicate connection graph over a networkx DiGraph.

    Each edge body-predicate -> head-predicate carries the set of polarities
    under which the body predicate is read, and for aggregate edges whether
    every aggregate involved is monotone.
    """

    def __init__(self, graph):
        self.graph = graph
        self._sccs = [frozenset(c) for c in nx.strongly_connected_components(graph)]
        self._sccs.sort(key=lambda c: min(self._order[p] for p in c))
        self._scc_of = {p: c for c in self._sccs for p in c}

    @property
    def _order(self):
        return {p: i for i, p in enumerate(self.graph.nodes)}

    @property
    def nodes(self):
        return list(self.graph.nodes)

    def edges(self):
        out = []
        for u, v, data in self.graph.edges(data=True):
            for pol in sorted(data["polarities"], key=lambda p: p.value):
                out.append(Edge(u, v, pol, data.get("monotone", True)))
        return out

    def polarities(self, u, v):
        if not self.graph.has_edge(u, v):
            return set()
        return set(self.graph.edges[u, v]["polarities"])

    def nonmonotone(self, u, v):
        """True when v reads u under negation or through a nonmonotone aggregate."""
        if not self.graph.has_edge(u, v):
            return False
        data = self.graph.edges[u, v]
        pols = data["polarities"]
        return Polarity.NEGATIVE in pols or (Polarity.AGGREGATE in pols and not data.get("monotone", True))

    def sccs(self):
        return list(self._sccs)

    def clique(self, pred):
        return self._scc_of.get(pred, frozenset({pred}))

    def recursive(self, pred):
        c = self.clique(pred)
        return len(c) > 1 or self.graph.has_edge(pred, pred)

    def cliques(self):
        """Recursive strongly-connected components."""
        return [c for c in self._sccs if len(c) > 1 or self.graph.has_edge(next(iter(c)), next(iter(c)))]

    def depends_on(self, preds):
        """Every predicate some member of `preds` reads, directly or not (members included)."""
        out = set()
        for p in preds:
            if p in self.graph:
                out.add(p)
                out |= nx.ancestors(self.graph, p)
        return out


def _monotone_head(rule, registry):
    if registry is None:
        return False
    for _, spec in rule.head.aggregates:
        if spec.name not in registry or classify_aggregate(registry.get(spec.name)) is not AggregateClass.MONOTONE:
            return False
    return True


def build_graph(p, registry=None):
    """Dependency graph of `p`; aggregate rules contribute aggregate edges."""
    g = nx.DiGraph()
    g.add_nodes_from(p.predicates())
    for r in p.rules:
        head = r.head.pred
        aggregate = r.is_aggregate
        monotone = _monotone_head(r, registry) if aggregate else True
        for a in r.atoms():
            if not g.has_edge(a.pred, head):
                g.add_edge(a.pred, head, polarities=set(), monotone=True)
            data = g.edges[a.pred, head]
            if aggregate:
                data["polarities"].add(Polarity.AGGREGATE)
                data["monotone"] = data["monotone"] and monotone
            if a.negated:
                data["polarities"].add(Polarity.NEGATIVE)
            elif not aggregate:
                data["polarities"].add(Polarity.POSITIVE)
    return PredicateGraph(g)


def format_graph(graph):
    lines = []
    for c in graph.cliques():
        lines.append("clique {" + ", ".join(sorted(c)) + "}")
    for e in graph.edges():
        tag = e.polarity.value
        if e.polarity is Polarity.AGGREGATE:
            tag += " (monotone)" if e.monotone else " (nonmonotone)"
        lines.append(f"{e.source} -> {e.target} [{tag}]")
    return "\n".join(lines)


# === SAFETY ===

def _names(x):
    return {v.name for v in vars_of(x)}


def bound_variables(rule):
    """Names bound by positive body atoms, then by `=` goals until nothing changes."""
    bound = set()
    for a in rule.atoms(negated=False):
        bound |= _names(a)
    equalities = [g for g in rule.body if isinstance(g, Comparison) and g.op == "="]
    changed = True
    while changed:
        changed = False
        for g in equalities:
            for side, other in ((g.left, g.right), (g.right, g.left)):
                missing = _names(side) - bound
                if missing and _names(other) <= bound and bindable(side):
                    bound |= missing
                    changed = True
    return bound


def check_safety(p):
    """
    Range-restriction check. Returns one Diagnostic per offending variable;
    an empty list means every rule is safe.
    """
    diags = []
    for r in p.rules:
        bound = bound_variables(r)

        def report(v, where):
            diags.append(Diagnostic(r.name(), f"variable {v.name} {where}", r.pos))

        for v in unique_everseen(vars_of(r.head)):
            if v.name not in bound:
                report(v, "in the head is not bound by a positive goal")
        for g in r.body:
            if isinstance(g, Atom) and g.negated:
                for v in unique_everseen(vars_of(g)):
                    if v.name not in bound and not v.anonymous:
                        report(v, f"appears only in negated goal {format_literal(g)}")
            elif isinstance(g, Comparison):
                for v in unique_everseen(vars_of(g)):
                    if v.name not in bound:
                        report(v, f"in comparison {format_literal(g)} is not bound")
            elif isinstance(g, ChoiceGoal):
                for v in unique_everseen(vars_of(g)):
                    if v.name not in bound:
                        report(v, f"in {format_literal(g)} does not appear in a positive goal")
    return diags


# === STRATIFICATION ===

@dataclass
class Stratification:
    stratum: dict = field(default_factory=dict)

    def __getitem__(self, pred):
        return self.stratum[pred]

    def strata(self):
        """Predicates per level, lowest first."""
        if not self.stratum:
            return []
        levels = [[] for _ in range(max(self.stratum.values()) + 1)]
        for pred, level in self.stratum.items():
            levels[level].append(pred)
        return [sorted(level) for level in levels]

    def format(self):
        return "\n".join(f"S{i} = {{{', '.join(preds)}}}" for i, preds in enumerate(self.strata()))


def _cycle(graph, u, v):
    """A cycle closing the edge u -> v inside one component."""
    if u == v:
        return [u, u]
    back = nx.shortest_path(graph.graph.subgraph(graph.clique(u)), v, u)
    return [u] + back


def stratify(p, registry=None, graph=None, exempt=(), reason="not stratified"):
    """
    Minimal stratification of `p`.

    Base predicates sit at 0. A derived clique sits one above every derived
    clique it reads and every predicate it reads under negation or through a
    nonmonotone aggregate, and at the level of the base predicates it reads
    positively. Components contained in an `exempt` predicate set (XY groups)
    are not checked for internal negative edges.

    Raises:
        StratificationError: a negative or nonmonotone-aggregate edge inside a
            strongly-connected component
    """
    graph = graph or build_graph(p, registry)
    exempt = [frozenset(e) for e in exempt]
    derived = p.derived()
    for u, v in graph.graph.edges:
        c = graph.clique(u)
        if v not in c or not graph.nonmonotone(u, v):
            continue
        if any(c <= e for e in exempt):
            continue
        kind = "negation" if Polarity.NEGATIVE in graph.polarities(u, v) else "aggregate"
        raise StratificationError(_cycle(graph, u, v), reason, kind)

    cond = nx.condensation(graph.graph, scc=graph.sccs())
    members = cond.graph["mapping"]
    order = {p_: i for i, p_ in enumerate(graph.graph.nodes)}
    level = {}
    topo = nx.lexicographical_topological_sort(
        cond, key=lambda n: min(order[q] for q in cond.nodes[n]["members"]))
    for node in topo:
        preds = cond.nodes[node]["members"]
        best = 0
        if preds & derived:
            for q in preds:
                for a in graph.graph.predecessors(q):
                    src = members[a]
                    if src == node:
                        continue
                    la = level[src]
                    src_derived = bool(cond.nodes[src]["members"] & derived)
                    if graph.nonmonotone(a, q) or src_derived:
                        best = max(best, la + 1)
                    else:
                        best = max(best, la)
        level[node] = best
    return Stratification({q: level[members[q]] for q in graph.graph.nodes})


# === CHOICE: FIRST-ORDER EQUIVALENT ===

def _primed(name, taken):
    candidate = name + "_"
    while candidate in taken:
        candidate += "_"
    taken.add(candidate)
    return candidate


def foe_transform(p):
    """
    Rewrite every choice rule into its chosen/diffChoice form.

    For a rule `h <- B, choice((X1),(Y1)), ..., choice((Xk),(Yk))` with W the
    variables of all choice goals:

        h <- B, chosen_h(W).
        chosen_h(W) <- B, ~diffChoice_h(W).
        diffChoice_h(W) <- chosen_h(W'), A != A'.   (per goal i, per A in Yi)

    where W' primes the variables of W outside Xi. Predicates with several
    choice rules get numbered chosen/diffChoice names.
    """
    per_head = Counter(r.head.pred for r in p.rules if r.choice_goals)
    seen = Counter()
    rules = []
    for r in p.rules:
        goals = r.choice_goals
        if not goals:
            rules.append(r)
            continue
        pred = r.head.pred
        seen[pred] += 1
        suffix = f"_{seen[pred]}" if per_head[pred] > 1 else ""
        chosen, diff = f"chosen_{pred}{suffix}", f"diffChoice_{pred}{suffix}"
        w = tuple(unique_everseen(t for g in goals for t in g.left + g.right))
        body = tuple(g for g in r.body if not isinstance(g, ChoiceGoal))
        rules.append(Rule(r.head, body + (Atom(chosen, w),), r.label, r.pos))
        rules.append(Rule(Atom(chosen, w), body + (Atom(diff, w, negated=True),), f"{r.label}_chosen", r.pos))
        taken = _names(r)
        for i, g in enumerate(goals, 1):
            primes = {t.name: Var(_primed(t.name, taken)) for t in w if t not in g.left}
            w_primed = tuple(substitute(t, primes) for t in w)
            for y in g.right:
                rules.append(Rule(Atom(diff, w), (Atom(chosen, w_primed), Comparison("!=", y, primes[y.name])),
                                  f"{r.label}_diff{i}", r.pos))
    return Program(rules, list(p.schema), list(p.facts))


# === AGGREGATES ===

class AggregateClass(Enum):
    MONOTONE = "monotone"
    NONMONOTONE = "nonmonotone"


def classify_aggregate(a):
    """Monotone iff the definition has no freturn rule."""
    a.validate()
    return AggregateClass.MONOTONE if a.monotone else AggregateClass.NONMONOTONE


def check_aggregates(p, registry):
    """Raise UdaError for an aggregate name the registry does not know."""
    for r in p.rules:
        for _, spec in r.head.aggregates:
            if spec.name not in registry:
                where = f" (rule {r.name()}, line {r.pos.line})" if r.pos else f" (rule {r.name()})"
                raise UdaError(f"unknown aggregate: {spec.name}{where}")


# === INLINE PREDICATES ===

def unify_call(callee_args, caller_args):
    """
    Compile-time unification of a callee head with a call.

    Returns (substitution for callee variables, extra equality goals), or
    None when two constants clash. Callee variables map to the caller's terms;
    repeated callee variables and non-variable callee terms become `=` goals.
    """
    subst = {}
    pending = []
    extra = []

    def unify(callee, caller):
        if isinstance(callee, Var):
            if callee.name in subst:
                extra.append(Comparison("=", caller, subst[callee.name]))
            else:
                subst[callee.name] = caller
            return True
        if isinstance(callee, Const) and isinstance(caller, Const):
            return callee.value == caller.value
        if isinstance(callee, Compound) and isinstance(caller, Compound):
            if callee.functor != caller.functor or len(callee.args) != len(caller.args):
                return False
            return all(unify(a, b) for a, b in zip(callee.args, caller.args))
        pending.append((callee, caller))
        return True

    for callee, caller in zip(callee_args, caller_args):
        if not unify(callee, caller):
            return None
    for callee, caller in pending:
        extra.append(Comparison("=", caller, substitute(callee, subst)))
    return subst, extra


def unfold(call, rule):
    """Body literals replacing `call` by one defining `rule`, or None."""
    r = rename_apart(rule)
    unified = unify_call(r.head.args, call.args)
    if unified is None:
        return None
    subst, extra = unified
    return tuple(extra) + tuple(substitute(g, subst) for g in r.body)


def inline_candidates(p):
    """
    Derived predicates defined only by comparison bodies and never negated;
    such rules compute a function of their arguments and are unfolded.
    """
    negated = {g.pred for r in p.rules for g in r.atoms(negated=True)}
    facts = {a.pred for a in p.facts}
    out = {}
    for pred in unique_everseen(r.head.pred for r in p.rules):
        rules = p.rules_for(pred)
        if pred in negated or pred in facts:
            continue
        if all(r.body and not r.is_aggregate and all(isinstance(g, Comparison) for g in r.body) for r in rules):
            out[pred] = rules
    return out


def _inline(rules, inline):
    out = []
    work = list(rules)
    while work:
        r = work.pop(0)
        at = next((i for i, g in enumerate(r.body)
                   if isinstance(g, Atom) and not g.negated and g.pred in inline), None)
        if at is None:
            out.append(r)
            continue
        copies = []
        for d in inline[r.body[at].pred]:
            lits = unfold(r.body[at], d)
            if lits is not None:
                copies.append(r.body[:at] + lits + r.body[at + 1:])
        if len(copies) == 1:
            work.insert(0, Rule(r.head, copies[0], r.label, r.pos))
        else:
            work[0:0] = [Rule(r.head, body, f"{r.label}.{k}", r.pos) for k, body in enumerate(copies, 1)]
    return out


def inline_predicates(p, extra=None):
    """Unfold calls to inline predicates (plus `extra`: pred -> rules) into their callers."""
    inline = inline_candidates(p)
    if extra:
        inline.update(extra)
    if not inline:
        return p
    log.debug("inlining %s", ", ".join(sorted(inline)))
    kept = [r for r in p.rules if r.head.pred not in inline]
    return Program(_inline(kept, inline), list(p.schema), list(p.facts))


# === AGGREGATE EXPANSION ===

NIL = Const("nil")


def _fresh(base, taken):
    name = base
    while name in taken:
        name += "_"
    taken.add(name)
    return Var(name)


def _expand_rule(r, position, spec, d):
    tag = re.sub(r"\W", "_", r.label or r.head.pred)
    aggin, chain, cagr, results = (f"{k}_{tag}" for k in ("aggin", "chain", "cagr", "results"))
    group = [a for i, a in enumerate(r.head.args) if i != position]
    keys = tuple(vars_of(group))
    bound = bound_variables(r)
    rest = [v for v in vars_of(r.body) if v.name in bound and v not in keys]
    if isinstance(spec.arg, Var) and rest == [spec.arg]:
        element = spec.arg
    else:
        element = Compound("el", (spec.arg,) + tuple(rest))
    taken = {v.name for v in keys} | _names(r)
    name = Const(d.name)
    anon = Var("_1")

    def pattern(base):
        """(term matching one chain element, variable holding its aggregated value)."""
        if isinstance(element, Var):
            v = _fresh(base, taken)
            return v, v
        value = _fresh(base + "v", taken)
        return Compound("el", (value,) + tuple(_fresh(f"{base}w{i}", taken) for i in range(len(rest)))), value

    x, y, y1 = _fresh("X", taken), _fresh("Y", taken), _fresh("Y1", taken)
    old, new, out = _fresh("Old", taken), _fresh("New", taken), _fresh("Yield", taken)
    first, first_value = pattern("F")
    nxt, nxt_value = pattern("N")

    rules, facts = [], []
    rules.append(Rule(Atom(aggin, keys + (element,)), r.body, f"{tag}_in", r.pos))
    if keys:
        rules.append(Rule(Atom(chain, keys + (NIL, NIL)), (Atom(aggin, keys + (anon,)),), f"{tag}_root"))
    else:
        facts.append(Atom(chain, (NIL, NIL)))
    rules.append(Rule(Atom(chain, keys + (x, y)), (
        Atom(chain, keys + (anon, x)), Atom(aggin, keys + (y,)),
        ChoiceGoal(keys + (x,), (y,)), ChoiceGoal(keys + (y,), (x,))), f"{tag}_chain"))
    rules.append(Rule(Atom(cagr, keys + (first, new)), (
        Atom(chain, keys + (NIL, first)), Comparison("!=", first, NIL),
        Atom("single", (name, first_value, new))), f"{tag}_single"))
    rules.append(Rule(Atom(cagr, keys + (nxt, new)), (
        Atom(chain, keys + (y1, nxt)), Atom(cagr, keys + (y1, old)),
        Atom("multi", (name, nxt_value, old, new))), f"{tag}_multi"))
    if d.ereturn_rules:
        rules.append(Rule(Atom(results, keys + (out,)), (
            Atom(chain, keys + (y1, nxt)), Atom(cagr, keys + (y1, old)),
            Atom("ereturn", (name, nxt_value, old, out))), f"{tag}_ereturn"))
    if classify_aggregate(d) is AggregateClass.MONOTONE:
        rules.append(Rule(Atom(results, keys + (out,)), (
            Atom(chain, keys + (NIL, y)), Comparison("!=", y, NIL), Atom(cagr, keys + (y, out))), f"{tag}_first"))
    else:
        rules.append(Rule(Atom(results, keys + (out,)), (
            Atom(chain, keys + (anon, nxt)), Atom(chain, keys + (nxt, Var("_2")), negated=True),
            Atom(cagr, keys + (nxt, old)), Atom("freturn", (name, nxt_value, old, out))), f"{tag}_freturn"))
    head_args = tuple(out if i == position else a for i, a in enumerate(r.head.args))
    rules.append(Rule(Atom(r.head.pred, head_args), (Atom(results, keys + (out,)),), r.label, r.pos))
    return rules, facts


def expand_aggregates(p, registry):
    """
    Rewrite every aggregate rule into chain / cagr / results rules over the
    aggregate's definition rules, which are then unfolded.

    A group's elements are threaded into a chain by a double choice; cagr
    folds single then multi along the chain; results collects early returns
    and, for nonmonotone aggregates, the final return at the chain element
    with no successor. Group-by variables are carried as leading key
    arguments of every generated predicate.

    Raises:
        UdaError: an unregistered aggregate, or a head with several aggregates
    """
    rules, facts, used = [], list(p.facts), {}
    for r in p.rules:
        aggs = r.head.aggregates
        if not aggs:
            rules.append(r)
            continue
        if len(aggs) > 1:
            raise UdaError(f"rule {r.name()}: only rules with a single aggregate can be expanded")
        position, spec = aggs[0]
        d = registry.get(spec.name)
        used[d.name] = d
        more_rules, more_facts = _expand_rule(r, position, spec, d)
        rules.extend(more_rules)
        facts.extend(more_facts)
    if not used:
        return p
    definitions = {}
    for d in used.values():
        for dr in d.rules:
            definitions.setdefault(dr.head.pred, []).append(dr)
    return inline_predicates(Program(rules, list(p.schema), facts), definitions)


# === XY PROGRAMS ===

class RuleKind(Enum):
    X = "X"
    Y = "Y"
    NOT_XY = "NotXY"


def _rule_kind(r, recursive):
    try:
        ta = temporal_argument(r, recursive)
    except NotXYError:
        return RuleKind.NOT_XY, None
    if ta is None:
        return RuleKind.NOT_XY, None
    if ta.exit:
        return RuleKind.X, ta
    offsets = [off for _, off in ta.atom_offsets]
    if ta.head_offset == 0:
        return (RuleKind.X if all(off == 0 for off in offsets) else RuleKind.NOT_XY), ta
    if ta.head_offset == 1 and 0 in offsets:
        return RuleKind.Y, ta
    return RuleKind.NOT_XY, ta


def xy_classify(rules, recursive=None):
    """
    [(rule, RuleKind)] for the rules of one clique, exit facts included.

    Args:
        rules: the clique rules; facts enter as body-less rules
        recursive: the clique predicates (default: every head predicate)

    Returns:
        one (rule, kind) pair per rule, in order
    """
    recursive = set(recursive) if recursive is not None else {r.head.pred for r in rules}
    return [(r, _rule_kind(r, recursive)[0]) for r in rules]


@dataclass
class XYGroup:
    """The predicates of one XY clique plus temporal rules stacked on it."""
    preds: list
    rules: list
    kinds: list = field(default_factory=list)
    bistate: Optional["BistateProgram"] = None

    def __contains__(self, pred):
        return pred in self.preds


def _temporal_head(r):
    return bool(r.head.args) and isinstance(r.head.args[0], TemporalExpr)


def _group_rules(p, preds):
    facts = [Rule(a, (), f"{a.pred}@exit{k}") for k, a in enumerate((a for a in p.facts if a.pred in preds), 1)]
    return facts + [r for r in p.rules if r.head.pred in preds]


def xy_groups(p, graph=None):
    """
    Recursive cliques having a rule with a `J+1` head, each extended with the
    non-recursive predicates whose rules all have `J+1` heads over it (such
    as a `final_e_hist` reading consecutive states).
    """
    graph = graph or build_graph(p)
    order = list(p.predicates())
    groups = []
    for c in graph.cliques():
        if any(_temporal_head(r) for r in p.rules if r.head.pred in c):
            groups.append(set(c))
    changed = True
    while changed:
        changed = False
        for pred in p.derived():
            if graph.recursive(pred) or any(pred in g for g in groups):
                continue
            rules = p.rules_for(pred)
            for g in groups:
                if all(_temporal_head(r) and any(a.pred in g for a in r.atoms()) for r in rules):
                    g.add(pred)
                    changed = True
                    break
    out = []
    for g in groups:
        preds = [q for q in order if q in g]
        rules = _group_rules(p, g)
        out.append(XYGroup(preds, rules, xy_classify(rules, g)))
    return out


@dataclass
class BistateProgram:
    """
    Bistate rules of one XY group. Rules keep their source labels; `temporal`
    maps each label to its TemporalArgument.
    """
    preds: list
    rules: list
    temporal: dict = field(default_factory=dict)
    copy_rules: set = field(default_factory=set)
    uses_time: set = field(default_factory=set)
    arity: dict = field(default_factory=dict)

    def program(self):
        return Program(list(self.rules))

    def is_copy(self, r):
        return r.label in self.copy_rules

    def exit_rules(self):
        return [r for r in self.rules if self.temporal[r.label].exit]

    def non_copy_y_rules(self):
        return [r for r in self.rules
                if not self.temporal[r.label].exit and self.temporal[r.label].head_offset == 1
                and r.label not in self.copy_rules]


def _bistate_rule(r, ta, preds, keep_choice=True):
    offsets = dict(ta.atom_offsets)
    body = []
    for i, g in enumerate(r.body):
        if isinstance(g, Atom) and i in offsets:
            same = ta.exit or offsets[i] == ta.head_offset
            body.append(Atom(("new_" if same else "old_") + g.pred, g.args[1:], g.negated))
        elif isinstance(g, ChoiceGoal):
            if not keep_choice:
                continue
            drop = Var(ta.variable) if ta.variable else None
            left = tuple(t for t in g.left if t != drop)
            right = tuple(t for t in g.right if t != drop)
            if right:
                body.append(ChoiceGoal(left, right))
        else:
            body.append(g)
    return Rule(Atom("new_" + r.head.pred, r.head.args[1:]), tuple(body), r.label, r.pos)


def _is_copy(r, ta, head_pred):
    if ta.exit or ta.head_offset != 1 or len(r.body) != 1:
        return False
    g = r.body[0]
    return (isinstance(g, Atom) and not g.negated and g.pred == "old_" + head_pred
            and g.args == r.head.args)


def _bistate_group(group, keep_choice=True):
    preds = set(group.preds)
    rules, temporal, copies, uses_time, diags = [], {}, set(), set(), []
    for r, kind in group.kinds or xy_classify(group.rules, preds):
        if kind is RuleKind.NOT_XY:
            try:
                temporal_argument(r, preds)
            except NotXYError as e:
                diags.extend(e.diagnostics)
                continue
            diags.append(Diagnostic(r.name(), f"{format_literal(r.head)} is neither an X-rule nor a Y-rule", r.pos))
            continue
        ta = temporal_argument(r, preds)
        b = _bistate_rule(r, ta, preds, keep_choice)
        temporal[r.label] = ta
        rules.append(b)
        if _is_copy(b, ta, r.head.pred):
            copies.add(r.label)
        if ta.variable and ta.variable in _names(b):
            uses_time.add(r.label)
    if diags:
        raise NotXYError(diags)
    arity = {}
    for r in group.rules:
        arity.setdefault(r.head.pred, r.head.arity - 1)
    return BistateProgram(list(group.preds), rules, temporal, copies, uses_time, arity)


def _select_groups(p, preds=None, graph=None):
    groups = xy_groups(p, graph)
    if preds is not None:
        wanted = set(preds)
        groups = [g for g in groups if wanted & set(g.preds)]
    return groups


def bistate(p, preds=None, keep_choice=True):
    """
    Bistate version of the XY groups of `p` (only those containing one of
    `preds` when given).

    Raises:
        NotXYError: a group rule is neither an X-rule nor a Y-rule, or no
            group matches
    """
    groups = _select_groups(p, preds)
    if not groups:
        what = ", ".join(preds) if preds else "the program"
        raise NotXYError([Diagnostic("-", f"no XY clique defines {what}")])
    parts = [_bistate_group(g, keep_choice) for g in groups]
    if len(parts) == 1:
        return parts[0]
    merged = BistateProgram([], [])
    for b in parts:
        merged.preds += b.preds
        merged.rules += b.rules
        merged.temporal.update(b.temporal)
        merged.copy_rules |= b.copy_rules
        merged.uses_time |= b.uses_time
        merged.arity.update(b.arity)
    return merged


def counter_goal(ta):
    """The `counter(...)` goal synchronizing a bistate rule with the step number."""
    if ta.exit:
        return Atom("counter", (Const(ta.head_constant),))
    if ta.head_offset == 1:
        return Atom("counter", (TemporalExpr(Var(ta.variable), 1),))
    return Atom("counter", (Var(ta.variable),))


def synchronized_rules(b):
    """Bistate rules with counter goals on exit rules and on rules using the step number."""
    out = []
    for r in b.rules:
        ta = b.temporal[r.label]
        if ta.exit or r.label in b.uses_time:
            r = Rule(r.head, (counter_goal(ta),) + r.body, r.label, r.pos)
        out.append(r)
    return out


def result_rule(pred, arity):
    xs = (Var("X"),) if arity == 1 else tuple(Var(f"X{i}") for i in range(1, arity + 1))
    j = Var("J")
    return Rule(Atom(pred, (j,) + xs), (Atom("new_" + pred, xs), Atom("counter", (j,))), f"{pred}@result")


def syncbi(p, preds=None):
    """Synchronized bistate program: counter fact, synchronized rules, one result rule per predicate."""
    b = bistate(p, preds)
    rules = synchronized_rules(b) + [result_rule(q, b.arity[q]) for q in b.preds]
    return Program(rules, [], [Atom("counter", (Const(0),))])


def _recursive_time_vars(r, preds):
    out = []
    for a in r.atoms():
        if a.pred in preds and a.args:
            t = a.args[0]
            if isinstance(t, TemporalExpr):
                t = t.base
            if isinstance(t, Var):
                out.append(t.name)
    return list(unique_everseen(out))


def validate_choice_and_agg_in_xy(p, registry=None, groups=None, graph=None):
    """
    Conditions for choice and nonmonotone aggregates inside XY groups:

    (a) the group without its choice goals is XY-stratified
    (b) every recursive choice rule has a choice goal whose left side holds
        the temporal variable
    (c) every recursive nonmonotone aggregate rule groups by the temporal
        variable
    (d) the bistate version is stratified with respect to negation and
        nonmonotone aggregates

    Returns the list of violations (empty when the program is accepted).
    """
    graph = graph or build_graph(p, registry)
    groups = groups if groups is not None else xy_groups(p, graph)
    diags = []
    for group in groups:
        preds = set(group.preds)
        for r, kind in group.kinds or xy_classify(group.rules, preds):
            if r.choice_goals and kind is not RuleKind.NOT_XY:
                ta = temporal_argument(r, preds)
                if not ta.exit and ta.variable:
                    if not any(Var(ta.variable) in g.left for g in r.choice_goals):
                        diags.append(Diagnostic(r.name(), f"(b) no choice goal has the temporal variable "
                                                          f"{ta.variable} in its left side", r.pos))
            if r.is_aggregate and not _monotone_head(r, registry):
                group_by = set()
                for i, a in enumerate(r.head.args):
                    if i not in dict(r.head.aggregates):
                        group_by |= _names(a)
                for t in _recursive_time_vars(r, preds):
                    if t not in group_by:
                        diags.append(Diagnostic(r.name(), f"(c) temporal variable {t} is not among the group-by "
                                                          f"arguments of {r.head.pred}", r.pos))
        for keep_choice, label in ((False, "(a)"), (True, "(d)")):
            try:
                b = _bistate_group(group, keep_choice)
            except NotXYError as e:
                if not keep_choice:
                    diags.extend(Diagnostic(d.rule, f"(a) {d.message}", d.pos) for d in e.diagnostics)
                break
            try:
                stratify(b.program(), registry, reason="not XY-stratified")
            except StratificationError as e:
                if keep_choice and e.kind == "negation":
                    continue
                if not keep_choice and e.kind == "aggregate":
                    continue
                diags.append(Diagnostic("-", f"{label} {e}"))
    return diags



# === PIPELINE ===

@dataclass
class AnalyzedProgram:
    """A program that passed every check, with the artifacts evaluation needs."""
    source: Program
    program: Program
    registry: object
    graph: PredicateGraph
    stratification: Stratification
    groups: list

    def group_of(self, pred):
        for g in self.groups:
            if pred in g.preds:
                return g
        return None

    def predicates(self):
        return self.program.predicates()


def analyze(p, registry):
    """
    Run every compile-time check on `p`.

    Aggregate definitions in `p` are registered into a copy of `registry`.

    Raises:
        UdaError, SafetyError, NotXYError, StratificationError
    """
    registry = registry.copy()
    source = registry.register_program(p)
    program = inline_predicates(source)
    check_aggregates(program, registry)
    diags = check_safety(program)
    if diags:
        raise SafetyError(diags)
    graph = build_graph(program, registry)
    groups = xy_groups(program, graph)
    diags = validate_choice_and_agg_in_xy(program, registry, groups, graph)
    if diags:
        raise NotXYError(diags)
    for g in groups:
        g.bistate = _bistate_group(g)
        log.debug("XY group %s: %d rules, copy rules %s", g.preds, len(g.rules), sorted(g.bistate.copy_rules))
    strat = stratify(program, registry, graph, exempt=[g.preds for g in groups])
    log.debug("stratified %d predicates into %d strata", len(strat.stratum), len(strat.strata()))
    return AnalyzedProgram(source, program, registry, graph, strat, groups)
