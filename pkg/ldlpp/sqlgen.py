"""
SQL offload.

Rules whose bodies read external relations are rewritten so that the
external part runs as one SQL query: the external goals (plus the
comparisons and negated external goals that only use their variables) are
collapsed into a synthetic `sql_node` predicate, and the rule reads that
predicate followed by whatever goals remain. Single-rule intermediate
predicates over external relations are first unfolded into their callers
(rule compression), and count/sum/min/max/avg heads are pushed into the
query when the whole body collapses.

Queries are SqlQuery trees. Their text form is what a SQL server would
receive; the bundled CSV adapter evaluates the tree directly.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any

from ldlpp.analysis import build_graph, unfold
from ldlpp.lang import AggregateSpec, Atom, BinOp, Comparison, Const, Program, Rule, Var, vars_of
from ldlpp.terms import format_value

log = logging.getLogger(__name__)

SQL_AGGREGATES = {"count": "COUNT", "sum": "SUM", "min": "MIN", "max": "MAX", "avg": "AVG"}
SQL_OPERATORS = {"!=": "<>", "mod": "%"}
SQL_NODE = "sql_node"


# === QUERY TREE ===

@dataclass(frozen=True)
class Column:
    alias: str
    name: str

    def sql(self):
        return f"{self.alias}.{self.name}"


@dataclass(frozen=True)
class Value:
    value: Any

    def sql(self):
        v = self.value
        if isinstance(v, str):
            return "'" + v.replace("'", "''") + "'"
        return format_value(v)


@dataclass(frozen=True)
class Arith:
    op: str
    left: Any
    right: Any

    def sql(self):
        def side(e):
            return f"({e.sql()})" if isinstance(e, Arith) else e.sql()
        return f"{side(self.left)} {SQL_OPERATORS.get(self.op, self.op)} {side(self.right)}"


@dataclass(frozen=True)
class Aggregate:
    func: str
    expr: Any

    def sql(self):
        return f"{self.func}({self.expr.sql()})"


@dataclass(frozen=True)
class Condition:
    op: str
    left: Any
    right: Any

    def sql(self):
        return f"{self.left.sql()} {SQL_OPERATORS.get(self.op, self.op)} {self.right.sql()}"


@dataclass(frozen=True)
class NotExists:
    query: "SqlQuery"

    def sql(self):
        return f"NOT EXISTS ({self.query.render(inline=True)})"


@dataclass(frozen=True)
class TableRef:
    table: str
    alias: str


@dataclass(frozen=True)
class SqlQuery:
    """SELECT list, FROM list with generated aliases, WHERE conjuncts and GROUP BY."""
    select: tuple
    tables: tuple
    where: tuple = ()
    group_by: tuple = ()

    @property
    def aggregated(self):
        return any(isinstance(s, Aggregate) for s in self.select)

    def render(self, inline=False):
        parts = [
            "SELECT " + ", ".join(s.sql() for s in self.select),
            "FROM " + ", ".join(f"{t.table} {t.alias}" for t in self.tables),
        ]
        if self.where:
            sep = " AND " if inline else "\n  AND "
            parts.append("WHERE " + sep.join(c.sql() for c in self.where))
        if self.group_by:
            parts.append("GROUP BY " + ", ".join(g.sql() for g in self.group_by))
        return (" " if inline else "\n").join(parts)

    def __str__(self):
        return self.render()


def normalize_sql(text):
    return " ".join(text.split())


# === TRANSLATION ===

class NotOffloadable(Exception):
    """A goal or term has no SQL counterpart."""


class _Translator:
    """Walks collapsed goals left to right, numbering aliases from one shared counter."""

    def __init__(self, schema, counter=None, outer=None):
        self.schema = schema
        self.counter = counter if counter is not None else itertools.count()
        self.outer = outer or {}
        self.columns = {}
        self.tables = []
        self.where = []

    def lookup(self, name):
        if name in self.columns:
            return self.columns[name]
        if name in self.outer:
            return self.outer[name]
        raise NotOffloadable(f"variable {name} is not bound by an external goal")

    def expr(self, t):
        if isinstance(t, Var):
            return self.lookup(t.name)
        if isinstance(t, Const):
            return Value(t.value)
        if isinstance(t, BinOp):
            return Arith(t.op, self.expr(t.left), self.expr(t.right))
        raise NotOffloadable(f"term {t!r}")

    def _scan(self, a):
        decl = self.schema[a.pred]
        table = decl.source.table
        alias = f"{table}_{next(self.counter)}"
        self.tables.append(TableRef(table, alias))
        return decl, alias

    def atom(self, a):
        decl, alias = self._scan(a)
        for (col, _), t in zip(decl.columns, a.args):
            c = Column(alias, col)
            if isinstance(t, Var) and t.name not in self.columns and t.name not in self.outer:
                self.columns[t.name] = c
            else:
                self.where.append(Condition("=", c, self.expr(t)))

    def comparison(self, g):
        for side, other in ((g.left, g.right), (g.right, g.left)):
            if (g.op == "=" and isinstance(side, Var)
                    and side.name not in self.columns and side.name not in self.outer):
                self.columns[side.name] = self.expr(other)
                return
        self.where.append(Condition(g.op, self.expr(g.left), self.expr(g.right)))

    def negation(self, a):
        sub = _Translator(self.schema, self.counter, {**self.outer, **self.columns})
        decl, alias = sub._scan(a)
        for (col, _), t in zip(decl.columns, a.args):
            c = Column(alias, col)
            if isinstance(t, Var) and t.name not in sub.outer:
                if t.name in sub.columns:
                    sub.where.append(Condition("=", c, sub.columns[t.name]))
                else:
                    sub.columns[t.name] = c
            else:
                sub.where.append(Condition("=", c, sub.expr(t)))
        self.where.append(NotExists(SqlQuery((Value(1),), tuple(sub.tables), tuple(sub.where))))

    def goals(self, goals):
        for g in goals:
            if isinstance(g, Comparison):
                self.comparison(g)
            elif g.negated:
                self.negation(g)
            else:
                self.atom(g)


def generate_sql(goals, head, schema):
    """
    SqlQuery for collapsed `goals` producing the arguments of `head`.

    Shared variables become equality conjuncts, constants become equality
    conjuncts with the column, negated goals become NOT EXISTS subqueries and
    count/sum/min/max/avg head arguments become SQL aggregates grouped by the
    other head arguments. A head without arguments selects the constant 1.

    Raises:
        NotOffloadable: a goal or head term has no SQL form
    """
    tr = _Translator(schema)
    tr.goals(goals)
    select, group_by = [], []
    for a in head.args:
        if isinstance(a, AggregateSpec):
            func = SQL_AGGREGATES.get(a.name)
            if func is None:
                raise NotOffloadable(f"aggregate {a.name} has no SQL counterpart")
            select.append(Aggregate(func, tr.expr(a.arg)))
        else:
            e = tr.expr(a)
            select.append(e)
            group_by.append(e)
    if not any(isinstance(s, Aggregate) for s in select):
        group_by = []
    if not select:
        select = [Value(1)]
    return SqlQuery(tuple(select), tuple(tr.tables), tuple(tr.where), tuple(group_by))


# === COLLAPSING ===

@dataclass
class Collapsed:
    """Goals of a rule that run as one SQL query, and the goals left to the engine."""
    sql_goals: tuple
    residual: tuple
    adapter: str = None

    @property
    def bound(self):
        return {v.name for v in vars_of(list(self.sql_goals))}


def _external(schema, g):
    return isinstance(g, Atom) and g.pred in schema


def _plain_args(a):
    return all(isinstance(t, (Var, Const)) for t in a.args)


def _sql_term(t):
    if isinstance(t, (Var, Const)):
        return True
    if isinstance(t, BinOp):
        return _sql_term(t.left) and _sql_term(t.right)
    return False


def collapse(rule, schema, supports_not_exists=True):
    """
    Split a rule body into an SQL-eligible part and the residual goals.

    The SQL part holds the positive goals on external relations of one
    adapter, the comparisons over their variables and, when the adapter
    supports NOT EXISTS, the negated external goals whose variables they
    bind. Both parts keep textual order.
    """
    body = list(rule.body)
    picked = [i for i, g in enumerate(body)
              if _external(schema, g) and not g.negated and _plain_args(g)]
    if not picked:
        return Collapsed((), tuple(body))
    adapter = schema[body[picked[0]].pred].source.adapter
    picked = [i for i in picked if schema[body[i].pred].source.adapter == adapter]
    bound = {v.name for i in picked for v in vars_of(body[i])}
    changed = True
    while changed:
        changed = False
        for i, g in enumerate(body):
            if i in picked or not isinstance(g, Comparison):
                continue
            if not (_sql_term(g.left) and _sql_term(g.right)):
                continue
            names = {v.name for v in vars_of(g)}
            if names <= bound:
                picked.append(i)
                changed = True
            elif g.op == "=":
                for side, other in ((g.left, g.right), (g.right, g.left)):
                    if isinstance(side, Var) and {v.name for v in vars_of(other)} <= bound:
                        picked.append(i)
                        bound.add(side.name)
                        changed = True
                        break
    if supports_not_exists:
        for i, g in enumerate(body):
            if (_external(schema, g) and g.negated and _plain_args(g)
                    and schema[g.pred].source.adapter == adapter
                    and all(v.name in bound or v.anonymous for v in vars_of(g))):
                picked.append(i)
    chosen = sorted(set(picked))
    return Collapsed(tuple(body[i] for i in chosen),
                     tuple(g for i, g in enumerate(body) if i not in chosen), adapter)


def compress(program, schema):
    """
    Unfold intermediate predicates into their callers. A predicate qualifies
    when it has a single non-recursive rule whose body only reads external
    relations and compares values; its own rule is kept. Repeats so that
    several levels of such rules fold into one body.
    """
    rules = list(program.rules)
    while True:
        p = Program(rules, program.schema, program.facts)
        graph = build_graph(p)
        facts = {a.pred for a in program.facts}
        inline = {}
        for pred in p.derived():
            defs = p.rules_for(pred)
            if len(defs) != 1 or pred in schema or pred in facts or graph.recursive(pred):
                continue
            r = defs[0]
            if r.is_aggregate or r.choice_goals or not r.body:
                continue
            if all(isinstance(g, Comparison) or _external(schema, g) for g in r.body):
                inline[pred] = r
        changed = False
        out = []
        for r in rules:
            at = next((i for i, g in enumerate(r.body)
                       if isinstance(g, Atom) and not g.negated and g.pred in inline
                       and g.pred != r.head.pred), None)
            if at is None:
                out.append(r)
                continue
            lits = unfold(r.body[at], inline[r.body[at].pred])
            if lits is None:
                out.append(r)
                continue
            log.debug("compressing %s into %s", r.body[at].pred, r.name())
            out.append(Rule(r.head, r.body[:at] + lits + r.body[at + 1:], r.label, r.pos))
            changed = True
        rules = out
        if not changed:
            return Program(rules, list(program.schema), list(program.facts))


@dataclass
class Offloaded:
    """A program rewritten for offload plus the SQL of each synthetic predicate."""
    program: Program
    queries: dict = field(default_factory=dict)
    adapters: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)   # sql node -> label of the rule it came from


def _node_names(taken):
    yield from (n for n in itertools.chain([SQL_NODE], (f"{SQL_NODE}_{k}" for k in itertools.count(2)))
                if n not in taken)


def offload(program, capabilities=None):
    """
    Rewrite every rule reading external relations.

    `capabilities` maps an adapter id to (supports NOT EXISTS, supports
    aggregates); adapters not listed support both.
    """
    schema = {d.pred: d for d in program.schema if d.external}
    if not schema:
        return Offloaded(program)
    capabilities = capabilities or {}
    program = compress(program, schema)
    names = _node_names(set(program.predicates()))
    result = Offloaded(program)
    rules = []
    for r in program.rules:
        adapter = next((schema[g.pred].source.adapter for g in r.atoms() if g.pred in schema), None)
        not_exists, aggregates = capabilities.get(adapter, (True, True))
        c = collapse(r, schema, not_exists)
        if not c.sql_goals:
            rules.append(r)
            continue
        try:
            rule, query = _rewrite(r, c, schema, aggregates)
        except NotOffloadable as e:
            log.info("rule %s stays in the engine: %s", r.name(), e)
            rules.append(r)
            continue
        name = next(names)
        node = rule.body[0]
        rule = Rule(rule.head, (Atom(name, node.args),) + rule.body[1:], r.label, r.pos)
        result.queries[name] = query
        result.adapters[name] = c.adapter
        result.sources[name] = r.label
        log.info("offloaded rule %s as %s", r.name(), name)
        rules.append(rule)
    result.program = Program(rules, list(program.schema), list(program.facts))
    return result


def _rewrite(r, c, schema, aggregates):
    """The rule reading a placeholder sql-node atom, and that atom's query."""
    bound = c.bound
    if r.is_aggregate and not c.residual and aggregates and all(
            spec.name in SQL_AGGREGATES for _, spec in r.head.aggregates):
        query = generate_sql(c.sql_goals, r.head, schema)
        outs = tuple(Var(f"V{i}") for i in range(r.head.arity))
        return Rule(Atom(r.head.pred, outs), (Atom(SQL_NODE, outs),), r.label, r.pos), query
    if r.is_aggregate:
        needed = [v for v in vars_of(list(c.sql_goals)) if v.name in bound]
    else:
        needed = [v for v in vars_of([r.head] + list(c.residual)) if v.name in bound]
    query = generate_sql(c.sql_goals, Atom(SQL_NODE, tuple(needed)), schema)
    return Rule(r.head, (Atom(SQL_NODE, tuple(needed)),) + c.residual, r.label, r.pos), query


def table_query(decl):
    """SELECT of every column of an external relation."""
    alias = f"{decl.source.table}_0"
    return SqlQuery(tuple(Column(alias, col) for col, _ in decl.columns), (TableRef(decl.source.table, alias),))
