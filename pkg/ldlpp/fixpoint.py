"""
Bottom-up evaluation.

The program is split into units: one per strongly-connected component that
derives something, plus one per XY group. Units run in stratum order. Each
ordinary unit is driven by a CliqueRunner, a semi-naive fixpoint over a FIFO
worklist of newly derived tuples that can also be advanced one tuple at a
time (the pipelined mode the query machine uses). XY groups run step by step
over their synchronized bistate rules.
"""

import itertools
import logging
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
from more_itertools import unique_everseen

from ldlpp.analysis import AnalyzedProgram, build_graph, stratify, synchronized_rules
from ldlpp.errors import StepLimitReached
from ldlpp.lang import Atom, ChoiceGoal, Comparison, Program, vars_of
from ldlpp.store import (
    AggStateTable, ChosenTable, FdResult, InsertResult, OverlayStore, Relation, StatePair, StepCounter,
)
from ldlpp.terms import (
    EvalFailure, bind_row, check, comparison_ready, compile_args, evaluate, mask_of, scan_key,
)
from ldlpp.uda import GroupCursor, feed, finalize

log = logging.getLogger(__name__)


# === RULE PLANS ===

@dataclass(frozen=True)
class Step:
    """One body goal in evaluation order: scan, negation or test."""
    kind: str
    goal: object
    ops: tuple = ()
    mask: tuple = ()


def _names(x):
    return {v.name for v in vars_of(x)}


def plan_body(body, first=None, bound=()):
    """
    Evaluation order for a rule body.

    Positive atoms keep their textual order (the atom at index `first`, when
    given, is matched against a delta tuple before anything else); comparisons
    and negated atoms run as soon as their variables are bound. Returns
    (delta ops or None, steps). `bound` names variables bound on entry.
    """
    bound = set(bound)
    steps = []
    delta_ops = None
    pending = [i for i, g in enumerate(body) if not isinstance(g, ChoiceGoal) and i != first]
    if first is not None:
        atom = body[first]
        delta_ops = tuple(compile_args(atom.args, bound))
        bound |= _names(atom)

    def ready(g):
        if isinstance(g, Comparison):
            return comparison_ready(g, bound)
        if isinstance(g, Atom) and g.negated:
            return all(v.name in bound or v.anonymous for v in vars_of(g))
        return False

    def add(i):
        g = body[i]
        pending.remove(i)
        if isinstance(g, Comparison):
            steps.append(Step("test", g))
            bound.update(_names(g))
            return
        ops = tuple(compile_args(g.args, bound))
        steps.append(Step("negation" if g.negated else "scan", g, ops, mask_of(ops)))
        if not g.negated:
            bound.update(_names(g))

    def flush():
        progress = True
        while progress:
            progress = False
            for i in list(pending):
                if ready(body[i]):
                    add(i)
                    progress = True

    flush()
    while pending:
        nxt = next((i for i in pending if isinstance(body[i], Atom) and not body[i].negated), None)
        if nxt is None:
            # left for the goals to fail at run time
            for i in list(pending):
                add(i)
            break
        add(nxt)
        flush()
    return delta_ops, tuple(steps)


def _exists(step, rel, env):
    key = scan_key(step.ops, env)
    return any(bind_row(step.ops, row, env) is not None for row in rel.lookup(step.mask, key))


def solve(steps, env, store, i=0):
    """Every extension of `env` satisfying steps[i:], depth first."""
    if i == len(steps):
        yield env
        return
    step = steps[i]
    if step.kind == "test":
        out = check(step.goal, env)
        if out is not None:
            yield from solve(steps, out, store, i + 1)
        return
    rel = store.get(step.goal.pred)
    try:
        if step.kind == "negation":
            if rel is None or not _exists(step, rel, env):
                yield from solve(steps, env, store, i + 1)
            return
        if rel is None:
            return
        key = scan_key(step.ops, env)
    except EvalFailure:
        return
    for row in rel.lookup(step.mask, key):
        out = bind_row(step.ops, row, env)
        if out is not None:
            yield from solve(steps, out, store, i + 1)


def delta_env(ops, row):
    """Bindings from matching a delta tuple against the atom's ops, or None."""
    for op, v in zip(ops, row):
        if not op.keyed:
            continue
        try:
            expected = op.value if op.kind == "const" else evaluate(op.term, {})
        except EvalFailure:
            return None
        if expected != v:
            return None
    return bind_row(ops, row, {})


@dataclass
class RulePlan:
    """Compiled form of one rule, shared by every runner evaluating it."""
    rule: object
    full: tuple
    deltas: dict                 # pred -> [(ops, steps)], one per positive occurrence
    choice_terms: tuple = ()
    choice_goals: tuple = ()     # (left positions, right positions) into choice_terms
    aggregates: tuple = ()       # (position, AggregateSpec)
    body_vars: tuple = ()
    nonmonotone: bool = False

    @property
    def label(self):
        return self.rule.label or self.rule.head.pred


def compile_rule(r, registry=None):
    _, full = plan_body(r.body)
    deltas = {}
    for i, g in enumerate(r.body):
        if isinstance(g, Atom) and not g.negated:
            ops, steps = plan_body(r.body, first=i)
            deltas.setdefault(g.pred, []).append((ops, steps))
    goals = r.choice_goals
    terms = tuple(unique_everseen(t for g in goals for t in g.left + g.right))
    positions = tuple((tuple(terms.index(t) for t in g.left), tuple(terms.index(t) for t in g.right))
                      for g in goals)
    aggregates = r.head.aggregates
    nonmonotone = bool(aggregates) and registry is not None and any(
        not registry.get(spec.name).monotone for _, spec in aggregates)
    body_vars = tuple(v.name for v in vars_of([g for g in r.body if not isinstance(g, ChoiceGoal)]))
    return RulePlan(r, full, deltas, terms, positions, aggregates, body_vars, nonmonotone)


def head_row(r, env):
    try:
        return tuple(evaluate(a, env) for a in r.head.args)
    except EvalFailure:
        return None


# === UNITS ===

@dataclass
class Unit:
    index: int
    preds: frozenset
    rules: list
    level: int
    group: Optional[object] = None

    def __repr__(self):
        return f"Unit({self.index}, {sorted(self.preds)})"


def build_units(analyzed, skip=()):
    """Evaluation units of `analyzed` in (stratum, dependency) order, with their dependency map."""
    program = analyzed.program
    graph = analyzed.graph
    strat = analyzed.stratification
    group_of = {q: g for g in analyzed.groups for q in g.preds}
    derived = program.derived() | set(group_of)
    units = []
    seen_groups = set()
    for c in graph.sccs():
        if not c & derived:
            continue
        g = group_of.get(next(iter(c)))
        if g is not None:
            if id(g) in seen_groups:
                continue
            seen_groups.add(id(g))
            preds = frozenset(g.preds)
            units.append(Unit(len(units), preds, list(g.rules), max(strat[q] for q in preds), g))
        else:
            rules = [r for r in program.rules if r.head.pred in c and r.label not in skip]
            units.append(Unit(len(units), frozenset(c), rules, max(strat[q] for q in c)))
    unit_of = {q: u for u in units for q in u.preds}
    dag = nx.DiGraph()
    dag.add_nodes_from(u.index for u in units)
    for u in units:
        for r in u.rules:
            for a in r.atoms():
                v = unit_of.get(a.pred)
                if v is not None and v is not u:
                    dag.add_edge(v.index, u.index)
    order = nx.lexicographical_topological_sort(dag, key=lambda i: (units[i].level, i))
    deps = {u.index: [units[i] for i in sorted(dag.predecessors(u.index))] for u in units}
    return [units[i] for i in order], deps


def eager_predicates(analyzed):
    """
    Predicates that must be fully materialized before anything reads them:
    operands of negation, both sides of nonmonotone aggregates, XY groups,
    and everything those depend on.
    """
    program = analyzed.program
    registry = analyzed.registry
    seeds = set()
    for r in program.rules:
        seeds |= {a.pred for a in r.atoms(negated=True)}
        if any(not registry.get(spec.name).monotone for _, spec in r.head.aggregates):
            seeds.add(r.head.pred)
            seeds |= {a.pred for a in r.atoms()}
    for g in analyzed.groups:
        seeds |= set(g.preds)
    return analyzed.graph.depends_on(seeds)


# === EVALUATOR ===

@dataclass
class EvalStats:
    fired: Counter = field(default_factory=Counter)
    inserted: Counter = field(default_factory=Counter)
    steps: list = field(default_factory=list)


class Evaluator:
    """
    Evaluation state of one analyzed program over one store: units, runners,
    chosen tables and aggregate state tables.
    """

    def __init__(self, analyzed, store, options, chosen=None, plans=None, skip=(), units=None):
        self.analyzed = analyzed
        self.registry = analyzed.registry
        self.store = store
        self.options = options
        self.chosen = chosen if chosen is not None else {}
        self.plans = plans if plans is not None else {}
        self.stats = EvalStats()
        self.units, self.deps = units if units is not None else build_units(analyzed, skip)
        self.unit_of = {q: u for u in self.units for q in u.preds}
        self.eager = eager_predicates(analyzed)
        self.runners = {}
        self.done = set()
        self.agg_tables = {}

    def plan(self, r):
        key = (r.label, r)
        p = self.plans.get(key)
        if p is None:
            p = self.plans[key] = compile_rule(r, self.registry)
        return p

    def chosen_table(self, plan):
        ct = self.chosen.get(plan.label)
        if ct is None:
            ct = self.chosen[plan.label] = ChosenTable(plan.label, plan.choice_goals)
        return ct

    def is_done(self, unit):
        if unit.index in self.done:
            return True
        runner = self.runners.get(unit.index)
        return runner is not None and runner.fixpoint

    def needs_eager(self, unit):
        return unit.group is not None or bool(unit.preds & self.eager)

    def run(self):
        """Evaluate every unit; returns the store."""
        for unit in self.units:
            self.complete(unit)
        return self.store

    def complete(self, unit):
        if self.is_done(unit):
            return
        for dep in self.deps[unit.index]:
            self.complete(dep)
        if unit.group is not None:
            log.debug("evaluating XY group %s", unit.group.preds)
            for _ in xy_evaluate(self, unit.group):
                pass
        else:
            self.runner(unit).drain()
        self.done.add(unit.index)

    def materialize(self, preds):
        """Complete every unit defining one of `preds`."""
        for unit in self.units:
            if unit.preds & set(preds):
                self.complete(unit)

    def _lazy_deps(self, unit):
        lazy = {}
        for dep in self.deps[unit.index]:
            if self.is_done(dep):
                continue
            if self.needs_eager(dep):
                self.complete(dep)
                continue
            runner = self.runner(dep)
            for q in dep.preds:
                lazy[q] = runner
        return lazy

    def runner(self, unit):
        """The shared producer of `unit`."""
        runner = self.runners.get(unit.index)
        if runner is None:
            if self.needs_eager(unit):
                for dep in self.deps[unit.index]:
                    self.complete(dep)
            runner = self.runners[unit.index] = CliqueRunner(self, unit, self.store, self._lazy_deps(unit))
        return runner

    def private_runner(self, unit):
        """A producer of `unit` writing to its own copies of the unit's relations."""
        private = {}
        for q in unit.preds:
            base = self.store.get(q)
            private[q] = base.copy() if base is not None else Relation(q, self._arity(q), self.store.index_threshold)
        store = OverlayStore(self.store, private)
        return CliqueRunner(self, unit, store, self._lazy_deps(unit), agg_tables={})

    def _arity(self, pred):
        return self.analyzed.program.predicates()[pred]

    def producer(self, pred):
        return self.runner(self.unit_of[pred])


class CliqueRunner:
    """
    Semi-naive fixpoint of one unit, advanced on demand.

    Every derived tuple is appended to `log`; consumers hold integer cursors
    into it and call fetch(i). When the worklist is empty the runner pulls
    one tuple from a lower lazy producer; when those are exhausted too it has
    reached its fixpoint.
    """

    def __init__(self, ev, unit, store, lazy=None, agg_tables=None):
        self.ev = ev
        self.unit = unit
        self.store = store
        self.lazy = lazy or {}
        self.lower = list(unique_everseen(self.lazy.values(), key=id))
        self.cursors = {id(r): 0 for r in self.lower}
        self.agg_tables = agg_tables if agg_tables is not None else ev.agg_tables
        self.log = []
        self.worklist = deque()
        self.fixpoint = False
        self.started = False
        self.seen = {}
        self.plans = [ev.plan(r) for r in unit.rules]
        triggers = set(unit.preds) | set(self.lazy)
        self.triggers = {}
        self.static = []
        self.aggregated = []
        for p in self.plans:
            if p.nonmonotone:
                self.aggregated.append(p)
                continue
            hot = [(pred, entry) for pred, entries in p.deltas.items() if pred in triggers for entry in entries]
            if not hot:
                self.static.append(p)
            for pred, entry in hot:
                self.triggers.setdefault(pred, []).append((p, entry))

    def __repr__(self):
        return f"CliqueRunner({sorted(self.unit.preds)}, {len(self.log)} tuples)"

    def _start(self):
        self.started = True
        for q in self.unit.preds:
            rel = self.store.get(q)
            if rel is not None:
                for row in list(rel):
                    self._logged(q, row)
        for p in self.aggregated:
            self._aggregate_all(p)
        for p in self.static:
            for env in solve(p.full, {}, self.store):
                self._emit(p, env)

    def _logged(self, pred, row):
        self.log.append((pred, row))
        if pred in self.triggers:
            self.worklist.append((pred, row))

    def _insert(self, pred, row):
        rel = self.store.relation(pred, len(row))
        if rel.insert_if_new(row) is InsertResult.INSERTED:
            self.ev.stats.inserted[pred] += 1
            self._logged(pred, row)

    def _choose(self, p, env):
        if not p.choice_goals:
            return True
        try:
            w = tuple(evaluate(t, env) for t in p.choice_terms)
        except EvalFailure:
            return False
        return self.ev.chosen_table(p).fd_insert(w) is FdResult.ACCEPTED

    def _emit(self, p, env):
        if not self._choose(p, env):
            return
        if p.aggregates:
            rows = self._feed(p, env)
        else:
            row = head_row(p.rule, env)
            rows = [row] if row is not None else []
        self.ev.stats.fired[p.label] += 1
        for row in rows:
            self._insert(p.rule.head.pred, row)

    def _group_key(self, p, env):
        positions = dict(p.aggregates)
        return tuple(evaluate(a, env) for i, a in enumerate(p.rule.head.args) if i not in positions)

    def _table(self, p, position):
        key = (p.label, position)
        table = self.agg_tables.get(key)
        if table is None:
            table = self.agg_tables[key] = AggStateTable(GroupCursor)
        return table

    def _rows(self, p, key, values):
        positions = dict(p.aggregates)
        rows = []
        for combo in itertools.product(*values):
            it_key, it_val = iter(key), iter(combo)
            rows.append(tuple(next(it_val) if i in positions else next(it_key)
                              for i in range(p.rule.head.arity)))
        return rows

    def _feed(self, p, env):
        """Feed one body binding into the rule's aggregates; returns the rows to emit."""
        seen = self.seen.setdefault(p.label, set())
        binding = tuple(env.get(n) for n in p.body_vars)
        if binding in seen:
            return []
        seen.add(binding)
        try:
            key = self._group_key(p, env)
            values = []
            for pos, spec in p.aggregates:
                d = self.ev.registry.get(spec.name)
                gc = self._table(p, pos).cursor(key)
                _, early = feed(d, gc, evaluate(spec.arg, env))
                values.append(early)
        except EvalFailure:
            return []
        return self._rows(p, key, values)

    def _aggregate_all(self, p):
        """Nonmonotone aggregate rule: feed every binding, then emit the final returns."""
        for env in solve(p.full, {}, self.store):
            self._emit(p, env)
        tables = [(spec, self._table(p, pos)) for pos, spec in p.aggregates]
        if not tables:
            return
        for key in list(tables[0][1].groups):
            finals = []
            for spec, table in tables:
                out = finalize(self.ev.registry.get(spec.name), table.cursor(key))
                finals.append([] if out is None else [out])
            for row in self._rows(p, key, finals):
                self._insert(p.rule.head.pred, row)

    def _process(self, pred, row):
        for p, (ops, steps) in self.triggers.get(pred, ()):
            env = delta_env(ops, row)
            if env is None:
                continue
            for out in solve(steps, env, self.store):
                self._emit(p, out)

    def _pull(self):
        for r in self.lower:
            i = self.cursors[id(r)]
            item = r.fetch(i)
            if item is None:
                continue
            self.cursors[id(r)] = i + 1
            self._process(*item)
            return True
        return False

    def advance(self):
        """Work until at least one new tuple is logged; False once the fixpoint is reached."""
        if self.fixpoint:
            return False
        start = len(self.log)
        if not self.started:
            self._start()
        while len(self.log) == start:
            if self.worklist:
                self._process(*self.worklist.popleft())
            elif not self._pull():
                self.fixpoint = True
                log.debug("%s reached its fixpoint", self)
                return len(self.log) > start
        return True

    def fetch(self, i):
        """The i-th derived tuple as (pred, row), or None past the fixpoint."""
        while i >= len(self.log):
            if not self.advance():
                return None
        return self.log[i]

    def drain(self):
        while self.advance():
            pass


def load_facts(store, program, seed=None):
    """Insert the program's facts, in an order shuffled by `seed` when one is given."""
    facts = list(program.facts)
    if seed is not None:
        random.Random(seed).shuffle(facts)
    store.load_facts(facts)


def iterated_fixpoint(analyzed, store, options, chosen=None):
    """
    Evaluate every stratum in order, computing a choice model where choice
    rules occur. `chosen` may hold chosen tables from an earlier run, which
    the new run extends. Returns the Evaluator.
    """
    ev = Evaluator(analyzed, store, options, chosen)
    ev.run()
    log.info("fixpoint: %d tuples derived", sum(ev.stats.inserted.values()))
    return ev


# === XY ===

@dataclass
class StepResult:
    step: int
    state: dict


class _StepProgram:
    """Per-step program of one XY group with its evaluation units."""

    def __init__(self, group, registry, options):
        b = group.bistate
        self.bistate = b
        rules = synchronized_rules(b)
        program = Program(rules)
        graph = build_graph(program, registry)
        strat = stratify(program, registry, graph, reason="not XY-stratified")
        self.analyzed = AnalyzedProgram(program, program, registry, graph, strat, [])
        self.shared = self._shareable(rules, strat) if options.copy_rules else set()
        skip = {label for label in b.copy_rules if _copy_head(b, label) in self.shared}
        self.units = build_units(self.analyzed, skip)
        self.plans = {}
        self.max_exit = max((b.temporal[r.label].head_constant for r in b.exit_rules()), default=0)
        required = None
        for r in b.non_copy_y_rules():
            reads = {a.pred[len("old_"):] for a in r.atoms(negated=False) if a.pred.startswith("old_")}
            required = reads if required is None else required & reads
        self.required = sorted(required or ())

    def _shareable(self, rules, strat):
        """XY predicates whose copy rule can start new_q as old_q itself."""
        b = self.bistate
        out = set()
        for label in b.copy_rules:
            q = _copy_head(b, label)
            level = strat["new_" + q]
            readers = [r for r in rules if r.label not in b.copy_rules
                       and any(a.pred == "old_" + q for a in r.atoms())]
            if all(strat[r.head.pred] < level for r in readers):
                out.add(q)
        return out


def _copy_head(b, label):
    for r in b.rules:
        if r.label == label:
            return r.head.pred[len("new_"):]
    raise KeyError(label)


def xy_evaluate(ev, group):
    """
    Run one XY group step by step, emitting q(J, ...) tuples into the main
    store; yields a StepResult per emitted step.

    Evaluation stops when, from the last exit step on, no rule other than a
    copy rule fires, or the state repeats and no rule reads the step number,
    or a relation every non-copy Y-rule needs has become empty.

    Raises:
        StepLimitReached: `max_steps` steps ran without stopping
    """
    sp = _StepProgram(group, ev.registry, ev.options)
    b = sp.bistate
    pairs = {q: StatePair(q, b.arity[q]) for q in b.preds}
    counter = StepCounter()
    previous = None
    non_copy = {r.label for r in b.rules if r.label not in b.copy_rules}
    while True:
        step = counter.value
        if step >= ev.options.max_steps:
            raise StepLimitReached(step)
        for q in sp.shared:
            pairs[q].share_old()
        private = {"counter": Relation("counter", 1)}
        private["counter"].insert_if_new((step,))
        for q, pair in pairs.items():
            private["old_" + q] = pair.old
            private["new_" + q] = pair.new
        sub = Evaluator(sp.analyzed, OverlayStore(ev.store, private), ev.options,
                        plans=sp.plans, units=sp.units)
        sub.run()
        state = {q: frozenset(pair.new.rows) for q, pair in pairs.items()}
        if step >= sp.max_exit:
            if not any(sub.stats.fired[label] for label in non_copy):
                log.debug("XY step %d: only copy rules fired, stopping", step)
                break
            if not b.uses_time and state == previous:
                log.debug("XY step %d: state unchanged, stopping", step)
                break
        for q, pair in pairs.items():
            rel = ev.store.relation(q, b.arity[q] + 1)
            for row in pair.new.rows:
                rel.insert_if_new((step,) + row)
        ev.stats.steps.append(step)
        yield StepResult(step, state)
        if step >= sp.max_exit and any(not pairs[q].new for q in sp.required):
            log.debug("XY step %d: a required relation is empty, stopping", step)
            break
        previous = state
        for pair in pairs.values():
            pair.swap()
        counter.advance()
