"""
LDL++ source parser.

A lark LALR grammar produces a parse tree which the _ToAst transformer turns
into the dataclasses of ldlpp.lang. Errors carry the line and column of the
offending token.
"""

import functools
import logging

from lark import Lark, Transformer, v_args
from lark.exceptions import UnexpectedInput, VisitError

from ldlpp.errors import ArityError, ParseError, SourcePos
from ldlpp.lang import (
    AggregateSpec, Atom, BinOp, ChoiceGoal, Comparison, Compound, Const, External,
    Internal, Program, Rule, SchemaDecl, TemporalExpr, Var,
)

log = logging.getLogger(__name__)

GRAMMAR = r"""
    start: clause*
    query: (compound | IDENT) ["."]

    ?clause: rule | schema

    rule: head "<-" literal ("," literal)* "."
        | head "."                              -> bodyless

    head: compound | IDENT

    ?literal: compound                          -> pos_atom
            | IDENT                             -> pos_prop
            | "~" compound                      -> neg_atom
            | "~" IDENT                         -> neg_prop
            | CHOICE "(" vargroup "," vargroup ")" -> choice
            | sum compop sum                    -> comparison

    vargroup: "(" [VAR ("," VAR)*] ")"

    !compop: "=" | "!=" | "<" | "<=" | ">" | ">=" | "≠" | "≤" | "≥"
    !addop: "+" | "-"
    !mulop: "*" | "/" | MOD

    ?sum: product
        | sum addop product                     -> binop
    ?product: unary
            | product mulop unary               -> binop
    ?unary: primary
          | "-" primary                         -> neg
    ?primary: VAR                               -> var
            | NUMBER                            -> number
            | STRING                            -> string
            | IDENT                             -> symbol
            | compound
            | "(" sum ")"
            | "(" sum ("," sum)+ ")"            -> tuple_term

    compound: IDENT "(" [arg ("," arg)*] ")"
    ?arg: sum | aggregate
    aggregate: IDENT "<" sum ">"

    schema: "database" "(" "{" [entry ("," entry)*] "}" ")" "."
    entry: [IDENT "::"] IDENT "(" [column ("," column)*] ")" option*
    column: (VAR | IDENT) ":" IDENT ["(" NUMBER ")"]
    option: IDENT (IDENT | STRING | NUMBER)

    CHOICE: "choice"
    MOD: "mod"
    VAR: /[A-Z_][A-Za-z0-9_]*/
    IDENT: /[a-z][A-Za-z0-9_]*/
    NUMBER: /\d+(\.\d+)?([eE][+-]?\d+)?/
    STRING: /'[^'\n]*'/ | /"[^"\n]*"/
    COMMENT: /%[^\n]*/

    %import common.WS
    %ignore WS
    %ignore COMMENT
"""

COLUMN_TYPES = {
    "int": "int", "integer": "int",
    "float": "float", "real": "float",
    "char": "string", "varchar": "string", "string": "string",
    "any": "any",
}

COMPARISON_OPS = {"≠": "!=", "≤": "<=", "≥": ">="}


@functools.lru_cache(maxsize=None)
def _lark():
    return Lark(GRAMMAR, parser="lalr", start=["start", "query"],
                maybe_placeholders=False, propagate_positions=True)


def _pos(meta):
    return None if getattr(meta, "empty", True) else SourcePos(meta.line, meta.column)


def _has_aggregate(t):
    if isinstance(t, AggregateSpec):
        return True
    if isinstance(t, Compound):
        return any(_has_aggregate(a) for a in t.args)
    if isinstance(t, BinOp):
        return _has_aggregate(t.left) or _has_aggregate(t.right)
    return False


def _temporal(args):
    """Rewrite `J+1` in the first argument of an atom to a TemporalExpr."""
    if args:
        first = args[0]
        if (isinstance(first, BinOp) and first.op == "+" and isinstance(first.left, Var)
                and isinstance(first.right, Const) and first.right.value == 1
                and type(first.right.value) is int):
            return (TemporalExpr(first.left, 1),) + tuple(args[1:])
    return tuple(args)


def _ground(t):
    if isinstance(t, Const):
        return True
    if isinstance(t, Compound):
        return all(_ground(a) for a in t.args)
    return False


class _ToAst(Transformer):
    """Parse tree → lang dataclasses. One instance per parse (anonymous variable counter)."""

    def __init__(self):
        super().__init__()
        self._anon = 0
        self._rules = 0

    # --- terms ---

    @v_args(inline=True)
    def var(self, tok):
        name = str(tok)
        if name == "_":
            self._anon += 1
            name = f"_{self._anon}"
        return Var(name)

    @v_args(inline=True)
    def number(self, tok):
        text = str(tok)
        if any(c in text for c in ".eE"):
            return Const(float(text))
        return Const(int(text))

    @v_args(inline=True)
    def string(self, tok):
        return Const(str(tok)[1:-1])

    @v_args(inline=True)
    def symbol(self, tok):
        return Const(str(tok))

    @v_args(inline=True)
    def neg(self, operand):
        if isinstance(operand, Const) and isinstance(operand.value, (int, float)):
            return Const(-operand.value)
        return BinOp("-", Const(0), operand)

    @v_args(inline=True)
    def binop(self, left, op, right):
        return BinOp(op, left, right)

    def addop(self, children):
        return str(children[0])

    def mulop(self, children):
        return str(children[0])

    def compop(self, children):
        op = str(children[0])
        return COMPARISON_OPS.get(op, op)

    def tuple_term(self, children):
        return Compound("", tuple(children))

    @v_args(meta=True)
    def compound(self, meta, children):
        functor, args = str(children[0]), tuple(children[1:])
        for a in args:
            if isinstance(a, Compound) and _has_aggregate(a):
                raise ParseError("aggregate nested inside a term", meta.line, meta.column)
        return Compound(functor, args)

    @v_args(meta=True, inline=True)
    def aggregate(self, meta, name, arg):
        if _has_aggregate(arg):
            raise ParseError("nested aggregate", meta.line, meta.column)
        return AggregateSpec(str(name), arg)

    # --- literals ---

    def _atom(self, meta, node, negated=False, head=False):
        if isinstance(node, Compound):
            pred, args = node.functor, node.args
        else:
            pred, args = str(node), ()
        if not head and any(isinstance(a, AggregateSpec) for a in args):
            raise ParseError(f"aggregate {pred}(...) outside a rule head", meta.line, meta.column)
        return Atom(pred, _temporal(args), negated)

    @v_args(meta=True, inline=True)
    def pos_atom(self, meta, node):
        return self._atom(meta, node)

    pos_prop = pos_atom

    @v_args(meta=True, inline=True)
    def neg_atom(self, meta, node):
        return self._atom(meta, node, negated=True)

    neg_prop = neg_atom

    def vargroup(self, children):
        return tuple(Var(str(c)) for c in children)

    @v_args(meta=True, inline=True)
    def choice(self, meta, _kw, left, right):
        if not right:
            raise ParseError("the right side of a choice goal cannot be empty", meta.line, meta.column)
        common = set(left) & set(right)
        if common:
            names = ", ".join(sorted(v.name for v in common))
            raise ParseError(f"choice goal sides share variables: {names}", meta.line, meta.column)
        return ChoiceGoal(left, right)

    @v_args(meta=True, inline=True)
    def comparison(self, meta, left, op, right):
        if _has_aggregate(left) or _has_aggregate(right):
            raise ParseError("aggregate inside a comparison", meta.line, meta.column)
        return Comparison(op, left, right)

    # --- clauses ---

    @v_args(meta=True, inline=True)
    def head(self, meta, node):
        return self._atom(meta, node, head=True)

    @v_args(meta=True)
    def rule(self, meta, children):
        self._rules += 1
        return Rule(children[0], tuple(children[1:]), f"r{self._rules}", _pos(meta))

    @v_args(meta=True, inline=True)
    def bodyless(self, meta, head):
        if all(_ground(a) for a in head.args):
            return head
        self._rules += 1
        return Rule(head, (), f"r{self._rules}", _pos(meta))

    # --- schema ---

    @v_args(meta=True)
    def column(self, meta, children):
        name, kind = str(children[0]), str(children[1])
        if kind not in COLUMN_TYPES:
            raise ParseError(f"unknown column type '{kind}'", meta.line, meta.column)
        return name, COLUMN_TYPES[kind]

    def option(self, children):
        key, value = str(children[0]), str(children[1])
        if value[:1] in "'\"":
            value = value[1:-1]
        return [key, value]

    def entry(self, children):
        names = [str(c) for c in children if not isinstance(c, (tuple, list))]
        columns = tuple(c for c in children if isinstance(c, tuple))
        options = tuple((k, v) for k, v in (c for c in children if isinstance(c, list)))
        if len(names) == 2:
            adapter, table = names
            return SchemaDecl(table, columns, External(adapter, table), options)
        return SchemaDecl(names[0], columns, Internal(), options)

    def schema(self, children):
        return list(children)

    def start(self, children):
        program = Program()
        for c in children:
            if isinstance(c, Rule):
                program.rules.append(c)
            elif isinstance(c, Atom):
                program.facts.append(c)
            else:
                program.schema.extend(c)
        return program

    def query(self, children):
        node = children[0]
        if isinstance(node, Compound):
            return Atom(node.functor, _temporal(node.args))
        return Atom(str(node))



def _unexpected(e):
    line = getattr(e, "line", None)
    column = getattr(e, "column", None)
    token = getattr(e, "token", None)
    if token is not None and getattr(token, "type", "") == "$END":
        return ParseError("unexpected end of input", line, column)
    if token is not None:
        return ParseError(f"unexpected '{token}'", line, column)
    char = getattr(e, "char", None)
    return ParseError(f"unexpected character '{char}'" if char else str(e).splitlines()[0], line, column)


def _transform(text, start):
    try:
        tree = _lark().parse(text, start=start)
        return _ToAst().transform(tree)
    except UnexpectedInput as e:
        raise _unexpected(e) from None
    except VisitError as e:
        if isinstance(e.orig_exc, ParseError):
            raise e.orig_exc from None
        raise


def check_arities(program):
    """Raise ArityError when a predicate is used with two different arities."""
    seen = {}

    def note(pred, arity, where):
        if pred in seen and seen[pred][0] != arity:
            first, at = seen[pred]
            raise ArityError(f"predicate {pred} used with arity {first} ({at}) and {arity} ({where})")
        seen.setdefault(pred, (arity, where))

    for d in program.schema:
        note(d.pred, len(d.columns), "schema")
    for a in program.facts:
        note(a.pred, a.arity, "fact")
    for r in program.rules:
        where = f"rule {r.name()}" + (f" at line {r.pos.line}" if r.pos else "")
        note(r.head.pred, r.head.arity, where)
        for g in r.atoms():
            note(g.pred, g.arity, where)


def parse_program(text):
    """
    Parse LDL++ source text into a Program.

    Raises:
        ParseError: syntax errors (with line and column), empty choice right sides
        ArityError: a predicate used with inconsistent arities
    """
    program = _transform(text, "start")
    check_arities(program)
    log.debug("parsed %d rules, %d facts, %d schema entries",
              len(program.rules), len(program.facts), len(program.schema))
    return program


def parse_query(text):
    """Parse a query form such as `actual_adv(S, P).` into a positive Atom."""
    return _transform(text.strip(), "query")
