"""
Query machine: top-down, tuple-at-a-time evaluation of a query form.

A query compiles into a tree of OR nodes (one child per rule of a
non-recursive predicate), AND nodes (one child per body goal) and leaves:
base scans, SQL nodes, recursive producers, comparisons, negation checks and
choice filters. Execution moves control between the four points of each
node (entry, backtrack, success, fail) along precomputed destinations;
every call to get_tuple() runs the machine until the root either receives
one answer or fails.

With intelligent backtracking on, a goal that fails right after being
entered sends control to the nearest earlier sibling that binds one of the
variables it consumes instead of to its immediate predecessor.
"""

import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from ldlpp.analysis import unify_call
from ldlpp.console import TRACE_LOGGER
from ldlpp.errors import ArityError, UnknownPredicate
from ldlpp.fixpoint import plan_body
from ldlpp.lang import Atom, Comparison, Const, Var, format_literal, is_ground, substitute, vars_of
from ldlpp.store import FdResult
from ldlpp.terms import (
    EvalFailure, bind_row, check, compile_args, evaluate, format_value, ground, mask_of, scan_key,
)

log = logging.getLogger(__name__)
tracer = logging.getLogger(TRACE_LOGGER)


class Point(Enum):
    ENTRY = "entry"
    BACKTRACK = "backtrack"
    SUCCESS = "success"
    FAIL = "fail"


class NodeState(Enum):
    ENTERED = "entered"
    BACKTRACKED = "backtracked"


@dataclass
class DataflowDests:
    """Where control goes from each point of a node; j_dest is the intelligent-backtracking target."""
    e_dest: tuple
    b_dest: tuple
    s_dest: tuple
    f_dest: tuple
    j_dest: Optional[tuple] = None


def _names(x):
    return frozenset(v.name for v in vars_of(x))


def _format_env(env):
    shown = [f"{k}={format_value(v)}" for k, v in env.items() if "#" not in k and not k.startswith("$")]
    return "{" + ", ".join(shown) + "}"


# === NODES ===

class Node:
    kind = "node"
    leaf = False

    def __init__(self, nid, literal=None):
        self.id = nid
        self.literal = literal
        self.parent = None
        self.dests = None
        self.state = None
        self.consumes = frozenset()
        self.produces = frozenset()

    @property
    def name(self):
        return f"{self.kind}#{self.id}"

    def describe(self):
        if self.literal is None:
            return self.name
        return f"{self.name} {format_literal(self.literal)}"

    def reset(self):
        self.state = None


class Leaf(Node):
    leaf = True

    def open(self, env):
        raise NotImplementedError

    def next(self):
        raise NotImplementedError


class _OnceLeaf(Leaf):
    """A leaf that yields at most one binding per entry."""

    def __init__(self, nid, literal=None):
        super().__init__(nid, literal)
        self.out = None

    def next(self):
        out, self.out = self.out, None
        return out


class BaseScan(Leaf):
    """Reads a materialized relation through its index."""
    kind = "scan"

    def __init__(self, nid, atom, ops, relation):
        super().__init__(nid, atom)
        self.ops = ops
        self.mask = mask_of(ops)
        self.relation = relation
        self.env = None
        self.rows = iter(())

    def open(self, env):
        self.env = env
        rel = self.relation()
        try:
            key = scan_key(self.ops, env)
        except EvalFailure:
            self.rows = iter(())
            return
        self.rows = rel.lookup(self.mask, key) if rel is not None else iter(())

    def next(self):
        for row in self.rows:
            out = bind_row(self.ops, row, self.env)
            if out is not None:
                return out
        return None


class SqlNode(BaseScan):
    """Rows of an external relation or an offloaded SQL query, fetched on first use."""
    kind = "sql"


class RecursiveProducer(Leaf):
    """
    Consumer cursor into a CliqueRunner's tuple log. Each next() fetches
    tuples one at a time, advancing the producer only as far as needed; once
    the producer has reached its fixpoint the relation's index is used.
    """
    kind = "producer"

    def __init__(self, nid, atom, ops, runner):
        super().__init__(nid, atom)
        self.ops = ops
        self.mask = mask_of(ops)
        self.runner = runner
        self.env = None
        self.key = None
        self.cursor = 0
        self.rows = None

    def open(self, env):
        self.env = env
        self.cursor = 0
        self.rows = None
        try:
            self.key = scan_key(self.ops, env)
        except EvalFailure:
            self.key = None
            return
        if self.runner.fixpoint:
            rel = self.runner.store.get(self.literal.pred)
            self.rows = rel.lookup(self.mask, self.key) if rel is not None else iter(())

    def next(self):
        if self.key is None:
            return None
        if self.rows is not None:
            for row in self.rows:
                out = bind_row(self.ops, row, self.env)
                if out is not None:
                    return out
            return None
        while True:
            item = self.runner.fetch(self.cursor)
            if item is None:
                return None
            self.cursor += 1
            pred, row = item
            if pred != self.literal.pred:
                continue
            if any(row[i] != k for i, k in zip(self.mask, self.key)):
                continue
            out = bind_row(self.ops, row, self.env)
            if out is not None:
                return out


class ComparisonNode(_OnceLeaf):
    kind = "test"

    def open(self, env):
        self.out = check(self.literal, env)


class NegationCheck(_OnceLeaf):
    """Succeeds once when no tuple of the (materialized) relation matches."""
    kind = "not"

    def __init__(self, nid, atom, ops, relation):
        super().__init__(nid, atom)
        self.ops = ops
        self.mask = mask_of(ops)
        self.relation = relation

    def open(self, env):
        self.out = None
        rel = self.relation()
        try:
            key = scan_key(self.ops, env)
        except EvalFailure:
            return
        if rel is not None and any(bind_row(self.ops, row, env) is not None
                                   for row in rel.lookup(self.mask, key)):
            return
        self.out = env


class ChoiceFilter(_OnceLeaf):
    """Passes a binding when its choice values agree with the rule's chosen table."""
    kind = "choice"

    def __init__(self, nid, terms, table):
        super().__init__(nid)
        self.terms = terms
        self.table = table

    def describe(self):
        return f"{self.name} choice{tuple(str(t) for t in self.terms)}"

    def open(self, env):
        self.out = None
        try:
            w = tuple(evaluate(t, env) for t in self.terms)
        except EvalFailure:
            return
        if self.table.fd_insert(w) is FdResult.ACCEPTED:
            self.out = env


class TrueNode(_OnceLeaf):
    kind = "true"

    def open(self, env):
        self.out = env


class AndNode(Node):
    kind = "and"

    def __init__(self, nid, literal=None):
        super().__init__(nid, literal)
        self.children = []

    def reset(self):
        super().reset()
        for c in self.children:
            c.reset()


class OrNode(Node):
    kind = "or"

    def __init__(self, nid, literal=None):
        super().__init__(nid, literal)
        self.children = []
        self.active = 0
        self.env = None

    def reset(self):
        super().reset()
        self.active = 0
        for c in self.children:
            c.reset()


class Root(Node):
    kind = "root"

    def __init__(self, nid, literal, child):
        super().__init__(nid, literal)
        self.child = child
        self.env = {}

    def reset(self):
        super().reset()
        self.child.reset()


def backtrack_target(and_node, index):
    """
    Node to backtrack into when child `index` of `and_node` fails right
    after entry: the nearest earlier child producing a variable the failed
    child consumes. None means the AND node itself fails. Without
    dependency information this is the immediate predecessor.
    """
    child = and_node.children[index]
    if child.consumes is None:
        return and_node.children[index - 1] if index > 0 else None
    for j in range(index - 1, -1, -1):
        if and_node.children[j].produces & child.consumes:
            return and_node.children[j]
    return None


def _wire(node, parent, index):
    node.parent = parent
    if isinstance(parent, Root):
        s_dest, f_dest, j_dest = (Point.SUCCESS, parent), (Point.FAIL, parent), None
    elif isinstance(parent, AndNode):
        siblings = parent.children
        s_dest = (Point.ENTRY, siblings[index + 1]) if index + 1 < len(siblings) else (Point.SUCCESS, parent)
        f_dest = (Point.BACKTRACK, siblings[index - 1]) if index > 0 else (Point.FAIL, parent)
        target = backtrack_target(parent, index)
        j_dest = (Point.BACKTRACK, target) if target is not None else (Point.FAIL, parent)
    else:
        siblings = parent.children
        s_dest = (Point.SUCCESS, parent)
        f_dest = (Point.ENTRY, siblings[index + 1]) if index + 1 < len(siblings) else (Point.FAIL, parent)
        j_dest = None
    node.dests = DataflowDests((Point.ENTRY, node), (Point.BACKTRACK, node), s_dest, f_dest, j_dest)
    for i, c in enumerate(getattr(node, "children", ())):
        _wire(c, node, i)


# === EXECUTION ===

class QueryMachine:
    """One compiled query form: predicate plus bound/free adornment."""

    def __init__(self, root, atom, slots, intelligent=True):
        self.root = root
        self.atom = atom
        self.slots = slots
        self.intelligent = intelligent
        self.calls = 0
        self.jumps = 0
        self.started = False
        self.exhausted = False

    def start(self, values=()):
        self.root.reset()
        self.root.env = dict(zip(self.slots, values))
        self.started = False
        self.exhausted = False

    def get_tuple(self):
        """Run until the root receives its next binding; None once the query is exhausted."""
        if self.exhausted:
            return None
        if not self.started:
            self.started = True
            out = self._run(Point.ENTRY, self.root.child, self.root.env)
        else:
            out = self._run(Point.BACKTRACK, self.root.child, None)
        if out is None:
            self.exhausted = True
        return out

    def _trace(self, point, node, env):
        if tracer.isEnabledFor(logging.DEBUG):
            tracer.debug("%-9s %s %s", point.value, node.describe(), _format_env(env) if env else "")

    def _leaf(self, node, entering, env):
        self.calls += 1
        if entering:
            node.open(env)
        out = node.next()
        return (Point.SUCCESS, out) if out is not None else (Point.FAIL, None)

    def _run(self, point, node, env):
        root = self.root
        while node is not root:
            self._trace(point, node, env)
            if point is Point.ENTRY:
                node.state = NodeState.ENTERED
                if node.leaf:
                    point, env = self._leaf(node, True, env)
                    continue
                if isinstance(node, OrNode):
                    node.env = env
                    node.active = 0
                node = node.children[0]
            elif point is Point.BACKTRACK:
                node.state = NodeState.BACKTRACKED
                if node.leaf:
                    point, env = self._leaf(node, False, env)
                    continue
                node = node.children[node.active] if isinstance(node, OrNode) else node.children[-1]
            elif point is Point.SUCCESS:
                point, node = node.dests.s_dest
            else:
                dest = node.dests.f_dest
                jump = node.dests.j_dest
                if self.intelligent and jump is not None and jump != dest and node.state is NodeState.ENTERED:
                    self.jumps += 1
                    if tracer.isEnabledFor(logging.DEBUG):
                        tracer.debug("jump      %s -> %s", node.describe(), jump[1].describe())
                    dest = jump
                point, node = dest
                if point is Point.ENTRY:
                    parent = node.parent
                    parent.active = parent.children.index(node)
                    env = parent.env
        return env if point is Point.SUCCESS else None

    def answers(self, values=()):
        """Distinct answer tuples of the query, produced lazily."""
        self.start(values)
        seen = set()
        closed = not [v for v in vars_of(self.atom) if v.name not in self.slots]
        while True:
            env = self.get_tuple()
            if env is None:
                return
            try:
                row = tuple(evaluate(a, env) for a in self.atom.args)
            except EvalFailure:
                continue
            if row in seen:
                continue
            seen.add(row)
            yield row
            if closed:
                return


def get_tuple(machine):
    return machine.get_tuple()


# === COMPILATION ===

def adornment(atom):
    """'b' for each ground argument of the query, 'f' otherwise."""
    return "".join("b" if is_ground(a) else "f" for a in atom.args)


def parameterize(atom):
    """Query atom with its ground arguments replaced by slot variables; returns (atom, slots, values)."""
    args, slots, values = [], [], []
    for a in atom.args:
        if is_ground(a):
            name = f"${len(slots)}"
            slots.append(name)
            values.append(ground(a))
            args.append(Var(name))
        else:
            args.append(a)
    return Atom(atom.pred, tuple(args)), tuple(slots), tuple(values)


class QueryCompiler:
    """
    Builds query machines over an Evaluator. `externals` maps predicates
    served by an adapter (external relations and offloaded SQL nodes) to a
    callable returning their relation.
    """

    def __init__(self, ev, externals=None, intelligent=True):
        self.ev = ev
        self.program = ev.analyzed.program
        self.graph = ev.analyzed.graph
        self.externals = externals or {}
        self.intelligent = intelligent
        self.ids = itertools.count(1)
        self.renames = itertools.count(1)

    def compile(self, atom):
        """
        Raises:
            UnknownPredicate: `atom` names no predicate of the program
            ArityError: `atom` has the wrong number of arguments
        """
        known = self.program.predicates()
        if atom.pred not in known and atom.pred not in self.externals:
            raise UnknownPredicate(atom.pred)
        if atom.pred in known and known[atom.pred] != atom.arity:
            raise ArityError(f"{atom.pred} has arity {known[atom.pred]}, not {atom.arity}")
        form, slots, _ = parameterize(atom)
        child = self._call(form, set(slots))
        root = Root(next(self.ids), form, child)
        _wire(child, root, 0)
        log.debug("compiled query form %s/%s into %d nodes", atom.pred, adornment(atom), next(self.ids) - 1)
        return QueryMachine(root, form, slots, self.intelligent)

    def _relation(self, pred):
        fetch = self.externals.get(pred)
        if fetch is not None:
            return fetch
        self.ev.materialize({pred})
        return lambda: self.ev.store.get(pred)

    def _producer(self, unit):
        recursive = len(unit.preds) > 1 or any(self.graph.recursive(q) for q in unit.preds)
        return recursive or any(r.is_aggregate for r in unit.rules)

    def _call(self, atom, bound):
        pred = atom.pred
        ops = tuple(compile_args(atom.args, bound))
        if pred in self.externals:
            return SqlNode(next(self.ids), atom, ops, self.externals[pred])
        unit = self.ev.unit_of.get(pred)
        if unit is None or pred in self.ev.eager or self.ev.is_done(unit):
            return BaseScan(next(self.ids), atom, ops, self._relation(pred))
        if self._producer(unit):
            keyed = any(op.keyed for op in ops)
            if keyed and not any(r.choice_goals for r in unit.rules):
                runner = self.ev.private_runner(unit)
            else:
                runner = self.ev.runner(unit)
            return RecursiveProducer(next(self.ids), atom, ops, runner)
        return self._or(atom, bound, unit)

    def _or(self, atom, bound, unit):
        node = OrNode(next(self.ids), atom)
        for r in unit.rules:
            if r.head.pred != atom.pred:
                continue
            tag = next(self.renames)
            rename = {v.name: Var(f"{v.name}#{tag}") for v in vars_of(r)}
            renamed = substitute(r, rename)
            unified = unify_call(renamed.head.args, atom.args)
            if unified is None:
                continue
            subst, extra = unified
            body = tuple(extra) + tuple(substitute(g, subst) for g in renamed.body)
            plan = self.ev.plan(r)
            w = tuple(substitute(substitute(t, rename), subst) for t in plan.choice_terms)
            node.children.append(self._and(body, bound, plan, w))
        if not node.children:
            # no rule head unifies with the call
            fail = AndNode(next(self.ids))
            fail.children.append(ComparisonNode(next(self.ids), Comparison("=", Const(0), Const(1))))
            node.children.append(fail)
        return node

    def _and(self, body, bound, plan, w):
        node = AndNode(next(self.ids))
        bound = set(bound)
        _, steps = plan_body(body, bound=bound)
        for step in steps:
            names = _names(step.goal)
            if step.kind == "test":
                child = ComparisonNode(next(self.ids), step.goal)
            elif step.kind == "negation":
                child = NegationCheck(next(self.ids), step.goal, step.ops, self._relation(step.goal.pred))
            else:
                child = self._call(step.goal, bound)
            child.consumes = names & bound
            if step.kind != "negation":
                child.produces = names - bound
                bound |= names
            node.children.append(child)
        if plan.choice_goals:
            table = self.ev.chosen_table(plan)
            child = ChoiceFilter(next(self.ids), w, table)
            child.consumes = _names(list(w))
            node.children.append(child)
        if not node.children:
            node.children.append(TrueNode(next(self.ids)))
        return node
