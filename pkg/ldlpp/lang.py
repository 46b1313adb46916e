"""
LDL++ abstract syntax.

Terms, literals, rules, schema declarations and programs are immutable
dataclasses; source positions and rule labels are carried along but do not
take part in equality, so a program re-parsed from its printed form compares
equal to the original.

Contents:
- term and literal types, Rule / SchemaDecl / Program
- variable helpers (vars_of, substitute, rename_apart)
- the printer (print_program, format_rule, format_term)
- temporal_argument for rules of XY cliques
"""

import itertools
import re
from dataclasses import dataclass, field
from typing import Optional, Union

from ldlpp.errors import NotXYError, Diagnostic, SourcePos

IDENT_RE = re.compile(r"[a-z][A-Za-z0-9_]*\Z")
KEYWORDS = frozenset({"choice", "mod", "database"})
ANON_RE = re.compile(r"_\d+\Z")


# === TERMS ===

@dataclass(frozen=True)
class Var:
    name: str

    @property
    def anonymous(self):
        return self.name.startswith("_")


@dataclass(frozen=True)
class Const:
    """Symbol, quoted string (both Python str), integer or float."""
    value: Union[str, int, float]


@dataclass(frozen=True)
class Compound:
    """Functor applied to arguments; the empty functor is a bare tuple `(A, B)`."""
    functor: str
    args: tuple


@dataclass(frozen=True)
class TemporalExpr:
    """`J+1` in the temporal (first) argument of an atom."""
    base: Var
    offset: int = 1


@dataclass(frozen=True)
class BinOp:
    """Arithmetic: + - * / mod."""
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class AggregateSpec:
    """`name<Arg>` in a rule head."""
    name: str
    arg: object


Term = Union[Var, Const, Compound, TemporalExpr, BinOp]


# === LITERALS ===

@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple = ()
    negated: bool = False

    @property
    def arity(self):
        return len(self.args)

    @property
    def aggregates(self):
        return tuple((i, a) for i, a in enumerate(self.args) if isinstance(a, AggregateSpec))

    def positive(self):
        return Atom(self.pred, self.args) if self.negated else self


@dataclass(frozen=True)
class ChoiceGoal:
    left: tuple
    right: tuple


@dataclass(frozen=True)
class Comparison:
    op: str
    left: object
    right: object


Literal = Union[Atom, ChoiceGoal, Comparison]


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple = ()
    label: str = field(default="", compare=False)
    pos: Optional[SourcePos] = field(default=None, compare=False)

    @property
    def is_aggregate(self):
        return bool(self.head.aggregates)

    @property
    def choice_goals(self):
        return [g for g in self.body if isinstance(g, ChoiceGoal)]

    def atoms(self, negated=None):
        return [g for g in self.body if isinstance(g, Atom) and (negated is None or g.negated == negated)]

    def name(self):
        return self.label or self.head.pred


@dataclass(frozen=True)
class Internal:
    pass


@dataclass(frozen=True)
class External:
    adapter: str
    table: str


@dataclass(frozen=True)
class SchemaDecl:
    pred: str
    columns: tuple           # ((name, type), ...) with type in int/float/string/any
    source: object = Internal()
    options: tuple = ()      # ((key, value), ...) e.g. from/use/user_name

    @property
    def external(self):
        return isinstance(self.source, External)


@dataclass
class Program:
    rules: list = field(default_factory=list)
    schema: list = field(default_factory=list)
    facts: list = field(default_factory=list)

    def predicates(self):
        """Every predicate symbol with its arity, in first-appearance order."""
        seen = {}
        for a in self.facts:
            seen.setdefault(a.pred, a.arity)
        for d in self.schema:
            seen.setdefault(d.pred, len(d.columns))
        for r in self.rules:
            seen.setdefault(r.head.pred, r.head.arity)
            for g in r.atoms():
                seen.setdefault(g.pred, g.arity)
        return seen

    def rules_for(self, pred):
        return [r for r in self.rules if r.head.pred == pred]

    def derived(self):
        return {r.head.pred for r in self.rules}

    def schema_for(self, pred):
        for d in self.schema:
            if d.pred == pred:
                return d
        return None


# === VARIABLE HELPERS ===

def vars_of(x):
    """Variables of a term, literal or list of them, in first-occurrence order."""
    out = []

    def walk(t):
        if isinstance(t, Var):
            if t not in out:
                out.append(t)
        elif isinstance(t, Compound):
            for a in t.args:
                walk(a)
        elif isinstance(t, TemporalExpr):
            walk(t.base)
        elif isinstance(t, BinOp):
            walk(t.left)
            walk(t.right)
        elif isinstance(t, AggregateSpec):
            walk(t.arg)
        elif isinstance(t, Atom):
            for a in t.args:
                walk(a)
        elif isinstance(t, ChoiceGoal):
            for v in t.left + t.right:
                walk(v)
        elif isinstance(t, Comparison):
            walk(t.left)
            walk(t.right)
        elif isinstance(t, (list, tuple)):
            for a in t:
                walk(a)
        elif isinstance(t, Rule):
            walk(t.head)
            walk(t.body)

    walk(x)
    return out


def substitute(x, subst):
    """Apply a Var-name → Term substitution (walks nested values)."""
    if not subst:
        return x
    if isinstance(x, Var):
        if x.name in subst:
            return subst[x.name]
        return x
    if isinstance(x, Const):
        return x
    if isinstance(x, Compound):
        return Compound(x.functor, tuple(substitute(a, subst) for a in x.args))
    if isinstance(x, TemporalExpr):
        base = substitute(x.base, subst)
        if isinstance(base, Var):
            return TemporalExpr(base, x.offset)
        return BinOp("+", base, Const(x.offset)) if x.offset else base
    if isinstance(x, BinOp):
        return BinOp(x.op, substitute(x.left, subst), substitute(x.right, subst))
    if isinstance(x, AggregateSpec):
        return AggregateSpec(x.name, substitute(x.arg, subst))
    if isinstance(x, Atom):
        return Atom(x.pred, tuple(substitute(a, subst) for a in x.args), x.negated)
    if isinstance(x, ChoiceGoal):
        return ChoiceGoal(tuple(substitute(v, subst) for v in x.left),
                          tuple(substitute(v, subst) for v in x.right))
    if isinstance(x, Comparison):
        return Comparison(x.op, substitute(x.left, subst), substitute(x.right, subst))
    if isinstance(x, Rule):
        return Rule(substitute(x.head, subst), tuple(substitute(g, subst) for g in x.body), x.label, x.pos)
    raise TypeError(f"cannot substitute into {x!r}")


_rename_counter = itertools.count(1)


def rename_apart(rule, tag=None):
    """Copy of `rule` with every variable renamed to a fresh name."""
    tag = tag if tag is not None else next(_rename_counter)
    subst = {v.name: Var(f"{v.name}#{tag}") for v in vars_of(rule)}
    return substitute(rule, subst)


def is_ground(t):
    return not vars_of(t)


# === PRINTER ===

def format_term(t):
    if isinstance(t, Var):
        return "_" if ANON_RE.match(t.name) else t.name
    if isinstance(t, Const):
        v = t.value
        if isinstance(v, bool):
            return str(int(v))
        if isinstance(v, (int, float)):
            return repr(v)
        if IDENT_RE.match(v) and v not in KEYWORDS:
            return v
        return "'" + v + "'"
    if isinstance(t, Compound):
        inner = ", ".join(format_term(a) for a in t.args)
        return f"({inner})" if t.functor == "" else f"{t.functor}({inner})"
    if isinstance(t, TemporalExpr):
        return f"{format_term(t.base)}+{t.offset}" if t.offset else format_term(t.base)
    if isinstance(t, BinOp):
        return f"{_operand(t.left)} {t.op} {_operand(t.right)}"
    if isinstance(t, AggregateSpec):
        return f"{t.name}<{format_term(t.arg)}>"
    raise TypeError(f"not a term: {t!r}")


def _operand(t):
    text = format_term(t)
    return f"({text})" if isinstance(t, BinOp) else text


def format_literal(g):
    if isinstance(g, Atom):
        text = g.pred if not g.args else f"{g.pred}({', '.join(format_term(a) for a in g.args)})"
        return "~" + text if g.negated else text
    if isinstance(g, ChoiceGoal):
        left = ", ".join(format_term(v) for v in g.left)
        right = ", ".join(format_term(v) for v in g.right)
        return f"choice(({left}), ({right}))"
    if isinstance(g, Comparison):
        return f"{format_term(g.left)} {g.op} {format_term(g.right)}"
    raise TypeError(f"not a literal: {g!r}")


def format_rule(r):
    head = format_literal(r.head)
    if not r.body:
        return head + "."
    return f"{head} <- {', '.join(format_literal(g) for g in r.body)}."


def format_schema(decls):
    entries = []
    for d in decls:
        cols = ", ".join(f"{n}:{t}" for n, t in d.columns)
        prefix = f"{d.source.adapter}::" if d.external else ""
        name = d.source.table if d.external else d.pred
        opts = "".join(f" {k} {format_term(Const(v))}" for k, v in d.options)
        entries.append(f"    {prefix}{name}({cols}){opts}")
    return "database({\n" + ",\n".join(entries) + "\n}).\n"


def print_program(p):
    """Source text that parses back to a structurally equal Program."""
    parts = []
    if p.schema:
        parts.append(format_schema(p.schema))
    for a in p.facts:
        parts.append(format_literal(a) + ".\n")
    for r in p.rules:
        parts.append(format_rule(r) + "\n")
    return "".join(parts)


# === TEMPORAL ARGUMENTS ===

@dataclass(frozen=True)
class TemporalArgument:
    """
    Temporal structure of one rule of an XY clique.

    head_offset is 0 or 1, or None when the head carries the constant
    `head_constant` (an exit rule); atom_offsets pairs the index of each
    recursive body atom with its offset.
    """
    position: int
    variable: Optional[str]
    head_offset: Optional[int]
    head_constant: Optional[object]
    atom_offsets: tuple

    @property
    def exit(self):
        return self.head_offset is None


def _temporal_term(t):
    """(variable name, offset), ('#const', value) or None."""
    if isinstance(t, Var):
        return t.name, 0
    if isinstance(t, TemporalExpr):
        return t.base.name, t.offset
    if isinstance(t, Const) and isinstance(t.value, int):
        return "#const", t.value
    return None


def temporal_argument(r, recursive=None):
    """
    Identify the temporal argument of a rule in a recursive clique.

    The temporal argument is always the first argument. Atoms whose predicate
    is in `recursive` (default: the head predicate) are recursive atoms.
    Returns None when the rule has no temporal structure (first argument not a
    variable or `J+1`, or a variable head with no recursive body atom).

    Raises:
        NotXYError: offsets outside {0, +1} or more than one temporal variable
    """
    recursive = set(recursive) if recursive is not None else {r.head.pred}
    if not r.head.args:
        return None
    head = _temporal_term(r.head.args[0])
    offending = r.head.args[0] if head is None else None
    if offending is not None and isinstance(offending, BinOp):
        raise NotXYError([Diagnostic(r.name(), f"temporal term {format_term(offending)} is not J or J+1", r.pos)])
    if head is None:
        return None
    offsets = []
    variable = None if head[0] == "#const" else head[0]
    for i, g in enumerate(r.body):
        if not isinstance(g, Atom) or g.pred not in recursive or not g.args:
            continue
        t = _temporal_term(g.args[0])
        if t is None:
            if isinstance(g.args[0], BinOp):
                raise NotXYError([Diagnostic(r.name(), f"temporal term {format_term(g.args[0])} is not J or J+1", r.pos)])
            return None
        if t[0] == "#const":
            if variable is not None or t[1] != head[1]:
                raise NotXYError([Diagnostic(r.name(), "constant temporal term in a recursive goal", r.pos)])
            offsets.append((i, 0))
            continue
        if variable is None:
            variable = t[0]
        if t[0] != variable:
            raise NotXYError([Diagnostic(r.name(), f"temporal variables {variable} and {t[0]} are mixed", r.pos)])
        offsets.append((i, t[1]))
    if head[0] == "#const":
        if any(off for _, off in offsets):
            raise NotXYError([Diagnostic(r.name(), "exit rule reads a later state", r.pos)])
        return TemporalArgument(0, None, None, head[1], tuple(offsets))
    if not offsets:
        return None
    return TemporalArgument(0, head[0], head[1], None, tuple(offsets))
