"""
User-defined aggregates.

An aggregate is written as ordinary rules over the reserved predicates
single/multi/ereturn/freturn whose first argument is the aggregate name.
The runtime folds a group's elements through those rules: single on the
first element, multi on every later one, ereturn on each (element, old
state) pair, freturn once on the last element and the final state.
"""

import functools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ldlpp.errors import UdaError
from ldlpp.lang import Comparison, Const, Program, format_rule
from ldlpp.parser import parse_program
from ldlpp.terms import EvalFailure, evaluate, match, solve_comparisons

log = logging.getLogger(__name__)

DEFINITION_PREDICATES = ("single", "multi", "ereturn", "freturn")
BUILTINS_PATH = Path(__file__).parent / "builtins.ldl"


@dataclass
class AggregateDef:
    name: str
    single_rules: list = field(default_factory=list)
    multi_rules: list = field(default_factory=list)
    ereturn_rules: list = field(default_factory=list)
    freturn_rules: list = field(default_factory=list)

    @property
    def monotone(self):
        return not self.freturn_rules

    @property
    def rules(self):
        return self.single_rules + self.multi_rules + self.ereturn_rules + self.freturn_rules

    def validate(self):
        if not self.single_rules:
            raise UdaError(f"aggregate {self.name} has no single rule")
        if not self.multi_rules:
            raise UdaError(f"aggregate {self.name} has no multi rule")
        for r in self.rules:
            for g in r.body:
                if not isinstance(g, Comparison):
                    raise UdaError(f"aggregate {self.name}: definition rules may only use comparisons "
                                   f"({format_rule(r)})")


@dataclass
class GroupCursor:
    """Fold state of one group."""
    key: Any
    state: Any = None
    count: int = 0
    last: Any = None


class Registry:
    """Aggregate definitions by name."""

    def __init__(self, defs=()):
        self.defs = {}
        for d in defs:
            self.register(d)

    def register(self, d):
        if d.name in self.defs:
            raise UdaError(f"aggregate {d.name} is already defined")
        d.validate()
        self.defs[d.name] = d
        log.debug("registered aggregate %s (%s)", d.name, "monotone" if d.monotone else "nonmonotone")

    def get(self, name):
        try:
            return self.defs[name]
        except KeyError:
            raise UdaError(f"unknown aggregate: {name}")

    def __contains__(self, name):
        return name in self.defs

    def __iter__(self):
        return iter(self.defs.values())

    def names(self):
        return list(self.defs)

    def copy(self):
        other = Registry()
        other.defs = dict(self.defs)
        return other

    def register_program(self, program):
        """
        Register every aggregate defined by `program`'s single/multi/ereturn/
        freturn rules; returns the program without those rules.
        """
        defs = {}
        rest = []
        for r in program.rules:
            kind = r.head.pred
            if kind not in DEFINITION_PREDICATES:
                rest.append(r)
                continue
            first = r.head.args[0] if r.head.args else None
            if not isinstance(first, Const) or not isinstance(first.value, str):
                raise UdaError(f"{kind} rule must name its aggregate as first argument: {format_rule(r)}")
            d = defs.setdefault(first.value, AggregateDef(first.value))
            getattr(d, f"{kind}_rules").append(r)
        for d in defs.values():
            self.register(d)
        return Program(rest, list(program.schema), list(program.facts))


@functools.lru_cache(maxsize=1)
def _builtin_defs():
    program = parse_program(BUILTINS_PATH.read_text(encoding="utf-8"))
    registry = Registry()
    registry.register_program(program)
    return registry


def builtin_catalog():
    """A fresh registry holding count, sum, min, max, avg, mcount, msum and coales."""
    return _builtin_defs().copy()


# === RUNTIME ===

def _fire(rule, inputs):
    """Output of a definition rule for the given input values, or None."""
    head = rule.head.args
    env = {}
    for t, v in zip(head[1:-1], inputs):
        if not match(t, v, env):
            return None
    env = solve_comparisons(rule.body, env)
    if env is None:
        return None
    try:
        return evaluate(head[-1], env)
    except EvalFailure:
        raise UdaError(f"{format_rule(rule)}: result not bound by the rule body")


def _first(rules, inputs):
    for r in rules:
        out = _fire(r, inputs)
        if out is not None:
            return out
    return None


def feed(d, gc, y):
    """
    Fold element `y` into the group; returns (new state, early returns).

    Monotone aggregates report the state built by single as their first
    early return, so that an n-element group yields n early returns.
    """
    if gc.count == 0:
        state = _first(d.single_rules, (y,))
        if state is None:
            raise UdaError(f"no single rule of {d.name} applies to {y!r}")
        early = [state] if d.monotone else []
    else:
        early = [out for out in (_fire(r, (y, gc.state)) for r in d.ereturn_rules) if out is not None]
        state = _first(d.multi_rules, (y, gc.state))
        if state is None:
            raise UdaError(f"no multi rule of {d.name} applies to {y!r} with state {gc.state!r}")
    gc.state = state
    gc.count += 1
    gc.last = y
    return state, early


def finalize(d, gc):
    """Final return of the group, or None for monotone aggregates and empty groups."""
    if gc.count == 0 or d.monotone:
        return None
    return _first(d.freturn_rules, (gc.last, gc.state))


def fold(d, values):
    """Feed all values into a fresh group; returns (early returns, final return)."""
    gc = GroupCursor(None)
    early = []
    for y in values:
        _, returns = feed(d, gc, y)
        early.extend(returns)
    return early, finalize(d, gc)
