"""
Ground values and the operations the engine performs on them.

Ground values are plain Python scalars (str for symbols and strings, int,
float) and Struct for compound terms. Relations store tuples of such values.
"""

from dataclasses import dataclass
from typing import Any, Optional

from ldlpp.lang import (
    BinOp, Comparison, Compound, Const, IDENT_RE, KEYWORDS, TemporalExpr, Var, vars_of,
)


@dataclass(frozen=True)
class Struct:
    """A ground compound value; functor "" is a bare tuple."""
    functor: str
    args: tuple

    def __str__(self):
        return format_value(self)


class EvalFailure(Exception):
    """Arithmetic on non-numbers, or on unbound variables; the goal simply fails."""


def term_key(v):
    """Total order on ground values: numbers, then strings, then structs."""
    if isinstance(v, (int, float)):
        return (0, v)
    if isinstance(v, str):
        return (1, v)
    if isinstance(v, Struct):
        return (2, v.functor, len(v.args), tuple(term_key(a) for a in v.args))
    return (3, repr(v))


def row_key(row):
    return tuple(term_key(v) for v in row)


def format_value(v):
    if isinstance(v, str):
        if IDENT_RE.match(v) and v not in KEYWORDS:
            return v
        return "'" + v + "'"
    if isinstance(v, Struct):
        inner = ", ".join(format_value(a) for a in v.args)
        return f"({inner})" if v.functor == "" else f"{v.functor}({inner})"
    return repr(v)


def format_row(pred, row):
    if not row:
        return pred
    return f"{pred}({', '.join(format_value(v) for v in row)})"


def ground(t):
    """Term without variables → ground value."""
    return evaluate(t, {})


# === ARITHMETIC ===

def arith(op, a, b):
    if not (isinstance(a, (int, float)) and isinstance(b, (int, float))):
        raise EvalFailure(f"{op} on non-numbers")
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            raise EvalFailure("division by zero")
        return float(a) / float(b)
    if op == "mod":
        if b == 0:
            raise EvalFailure("mod by zero")
        return a % b
    raise EvalFailure(f"unknown operator {op}")


def evaluate(t, env):
    """Value of a term under `env`; raises EvalFailure when a variable is unbound."""
    if isinstance(t, Var):
        try:
            return env[t.name]
        except KeyError:
            raise EvalFailure(f"unbound variable {t.name}")
    if isinstance(t, Const):
        return t.value
    if isinstance(t, TemporalExpr):
        return arith("+", evaluate(t.base, env), t.offset)
    if isinstance(t, BinOp):
        return arith(t.op, evaluate(t.left, env), evaluate(t.right, env))
    if isinstance(t, Compound):
        return Struct(t.functor, tuple(evaluate(a, env) for a in t.args))
    raise EvalFailure(f"cannot evaluate {t!r}")


def compare(op, a, b):
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        pass
    elif isinstance(a, str) and isinstance(b, str):
        pass
    else:
        a, b = term_key(a), term_key(b)
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise ValueError(f"unknown comparison {op}")


# === MATCHING ===

def match(t, v, env):
    """
    Unify term `t` with ground value `v`, binding unbound variables in `env`
    (mutated in place). Returns False on mismatch.
    """
    if isinstance(t, Var):
        if t.name in env:
            return env[t.name] == v
        env[t.name] = v
        return True
    if isinstance(t, Const):
        return t.value == v
    if isinstance(t, Compound):
        if not isinstance(v, Struct) or v.functor != t.functor or len(v.args) != len(t.args):
            return False
        return all(match(a, b, env) for a, b in zip(t.args, v.args))
    if isinstance(t, TemporalExpr):
        if t.base.name in env:
            return _equal_eval(t, v, env)
        if not isinstance(v, int):
            return False
        env[t.base.name] = v - t.offset
        return True
    if isinstance(t, BinOp):
        return _equal_eval(t, v, env)
    return False


def _equal_eval(t, v, env):
    try:
        return evaluate(t, env) == v
    except EvalFailure:
        return False


def evaluable(t, bound):
    return all(v.name in bound for v in vars_of(t))


def bindable(t):
    """Terms that `=` can bind by matching a value."""
    if isinstance(t, (Var, Const, TemporalExpr)):
        return True
    if isinstance(t, Compound):
        return all(bindable(a) for a in t.args)
    return False


def _binds(g, bound):
    """`=` with one evaluable side and a pattern on the other."""
    if g.op != "=":
        return False
    return ((evaluable(g.left, bound) and bindable(g.right))
            or (evaluable(g.right, bound) and bindable(g.left)))


def check(goal, env):
    """
    Evaluate a comparison under `env`. `=` with one side not yet evaluable
    binds it by matching. Returns the (possibly extended) env or None.
    """
    try:
        left = evaluate(goal.left, env)
    except EvalFailure:
        left = None
    try:
        right = evaluate(goal.right, env)
    except EvalFailure:
        right = None
    if left is not None and right is not None:
        return env if compare(goal.op, left, right) else None
    if goal.op != "=":
        return None
    out = dict(env)
    if left is None and right is not None:
        return out if match(goal.left, right, out) else None
    if right is None and left is not None:
        return out if match(goal.right, left, out) else None
    return None


def solve_comparisons(goals, env):
    """
    Run comparison-only bodies (aggregate definitions, inline predicates):
    evaluates each goal as soon as it can, in textual order otherwise.
    Returns the final env or None.
    """
    pending = list(goals)
    while pending:
        progress = False
        for g in list(pending):
            names = {v.name for v in vars_of(g)}
            missing = names - set(env)
            if missing and not _binds(g, env):
                continue
            env = check(g, env)
            if env is None:
                return None
            pending.remove(g)
            progress = True
        if not progress:
            return None
    return env


# === SCAN ARGUMENT OPERATIONS ===

@dataclass(frozen=True)
class ArgOp:
    """
    How one atom argument is handled by a scan.

    kind: const (value known at compile time), bound (variable bound before
    the scan), eval (expression over bound variables), bind (first occurrence
    of a free variable), match (anything else, unified against the row).
    """
    kind: str
    term: Any
    value: Optional[Any] = None

    @property
    def keyed(self):
        return self.kind in ("const", "bound", "eval")


def compile_args(args, bound):
    """ArgOps for an atom's arguments given the variables bound before it."""
    ops = []
    seen = set()
    for a in args:
        names = {v.name for v in vars_of(a)}
        if isinstance(a, Const):
            ops.append(ArgOp("const", a, a.value))
        elif not names and isinstance(a, Compound):
            ops.append(ArgOp("const", a, ground(a)))
        elif isinstance(a, Var) and a.name in bound:
            ops.append(ArgOp("bound", a))
        elif names <= set(bound):
            ops.append(ArgOp("eval", a))
        elif isinstance(a, Var) and a.name not in seen:
            ops.append(ArgOp("bind", a))
        else:
            ops.append(ArgOp("match", a))
        seen |= names
    return ops


def scan_key(ops, env):
    """Values of the keyed positions; raises EvalFailure when an expression fails."""
    key = []
    for op in ops:
        if op.kind == "const":
            key.append(op.value)
        elif op.kind == "bound":
            key.append(env[op.term.name])
        elif op.kind == "eval":
            key.append(evaluate(op.term, env))
    return tuple(key)


def bind_row(ops, row, env):
    """Extend a copy of `env` with the free positions of `row`; None on mismatch."""
    out = None
    for op, v in zip(ops, row):
        if op.kind == "bind":
            if out is None:
                out = dict(env)
            name = op.term.name
            if name in out and out[name] != v:
                return None
            out[name] = v
        elif op.kind == "match":
            if out is None:
                out = dict(env)
            if not match(op.term, v, out):
                return None
    return out if out is not None else dict(env)


def mask_of(ops):
    return tuple(i for i, op in enumerate(ops) if op.keyed)


def comparison_ready(g, bound):
    """A comparison can run once both sides are evaluable, or `=` can bind its other side."""
    if isinstance(g, Comparison):
        if evaluable(g.left, bound) and evaluable(g.right, bound):
            return True
        return _binds(g, bound)
    return False
