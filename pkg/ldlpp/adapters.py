"""
External relation adapters.

An adapter runs SqlQuery trees against some tabular source and streams
tuples typed per the declared schema. The CSV adapter reads
`<base_dir>/<table>.csv` (or the file named by the schema's `file` option):
UTF-8, comma-separated, one header row naming the declared columns.
"""

import logging
from collections import defaultdict
from pathlib import Path

import pandas as pd
from more_itertools import unique_everseen

from ldlpp.errors import AdapterError
from ldlpp.sqlgen import Aggregate, Arith, Column, Condition, NotExists, Value, normalize_sql
from ldlpp.terms import EvalFailure, arith, compare, term_key

log = logging.getLogger(__name__)


class ExternalAdapter:
    """Interface of an external source."""

    name = "adapter"
    supports_not_exists = True
    supports_aggregates = True

    def execute(self, query):
        """Stream the result tuples of `query`."""
        raise NotImplementedError

    @property
    def capabilities(self):
        return self.supports_not_exists, self.supports_aggregates


def _coerce(kind, text):
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "string":
        return text
    for convert in (int, float):
        try:
            return convert(text)
        except ValueError:
            pass
    return text


def _sql_aggregate(func, values):
    if func == "COUNT":
        return len(values)
    if func == "SUM":
        return sum(values)
    if func == "MIN":
        return min(values, key=term_key)
    if func == "MAX":
        return max(values, key=term_key)
    if func == "AVG":
        return float(sum(values)) / float(len(values))
    raise AdapterError(f"unsupported aggregate {func}")


class CsvAdapter(ExternalAdapter):
    """Evaluates query trees over CSV files, one file per table."""

    name = "csv"

    def __init__(self, base_dir, decls):
        self.base_dir = Path(base_dir)
        self.decls = {d.source.table: d for d in decls}
        self.tables = {}

    def path(self, table):
        decl = self.decls[table]
        options = dict(decl.options)
        return self.base_dir / options.get("file", f"{table}.csv")

    def _load(self, table, sql):
        rows = self.tables.get(table)
        if rows is not None:
            return rows
        decl = self.decls.get(table)
        if decl is None:
            raise AdapterError(f"no schema declared for table {table}", sql)
        path = self.path(table)
        frame = self._read(path, sql)
        records = [] if frame is None else frame.to_dict("records")
        missing = [] if frame is None else [c for c, _ in decl.columns if c not in frame.columns]
        if missing:
            raise AdapterError(f"{path.name}: missing column(s) {', '.join(missing)}", sql)
        rows = []
        for n, record in enumerate(records, 1):
            row = {}
            for col, kind in decl.columns:
                text = record[col]
                try:
                    row[col] = _coerce(kind, text.strip())
                except ValueError:
                    raise AdapterError(f"{path.name}: row {n}, column {col}: expected {kind}, got {text!r}", sql)
            rows.append(row)
        rows = list(unique_everseen(rows, key=lambda r: tuple(r.values())))
        log.debug("csv: loaded %d rows of %s from %s", len(rows), table, path)
        self.tables[table] = rows
        return rows

    @staticmethod
    def _read(path, sql):
        """Every cell as text; None for an empty file."""
        try:
            return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
        except pd.errors.EmptyDataError:
            return None
        except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
            raise AdapterError(f"cannot read {path}: {e}", sql)

    def execute(self, query):
        sql = normalize_sql(query.render())
        log.debug("csv: %s", sql)
        envs = self._join(query, {}, sql)
        if query.aggregated:
            return iter(self._grouped(query, envs))
        rows = (self._row(query.select, e) for e in envs)
        return iter(list(unique_everseen(r for r in rows if r is not None)))

    def _row(self, exprs, env):
        """Values of `exprs` under `env`, or None when one of them fails (that row has no answer)."""
        try:
            return tuple(self._value(x, env) for x in exprs)
        except EvalFailure:
            return None

    def _join(self, query, outer, sql):
        """Bindings (alias, column) -> value satisfying the WHERE conjuncts, tables joined left to right."""
        envs = [dict(outer)]
        pending = list(query.where)
        available = {alias for alias, _ in outer}
        for t in query.tables:
            rows = self._load(t.table, sql)
            envs = [{**env, **{(t.alias, c): v for c, v in row.items()}} for env in envs for row in rows]
            available.add(t.alias)
            ready = [c for c in pending if isinstance(c, Condition) and _aliases(c) <= available]
            if ready:
                envs = [e for e in envs if all(self._holds(c, e, sql) for c in ready)]
                pending = [c for c in pending if c not in ready]
        return [e for e in envs if all(self._holds(c, e, sql) for c in pending)]

    def _holds(self, cond, env, sql):
        if isinstance(cond, NotExists):
            return not self._join(cond.query, env, sql)
        try:
            return compare(cond.op, self._value(cond.left, env), self._value(cond.right, env))
        except EvalFailure:
            return False

    def _value(self, e, env):
        if isinstance(e, Column):
            return env[(e.alias, e.name)]
        if isinstance(e, Value):
            return e.value
        if isinstance(e, Arith):
            return arith(e.op, self._value(e.left, env), self._value(e.right, env))
        raise AdapterError(f"cannot evaluate {e!r} per row")

    def _grouped(self, query, envs):
        exprs = [s.expr if isinstance(s, Aggregate) else s for s in query.select]
        groups = defaultdict(list)
        for e in envs:
            key, values = self._row(query.group_by, e), self._row(exprs, e)
            if key is not None and values is not None:
                groups[key].append(values)
        out = []
        for members in groups.values():
            row = []
            for i, s in enumerate(query.select):
                if isinstance(s, Aggregate):
                    row.append(_sql_aggregate(s.func, [m[i] for m in members]))
                else:
                    row.append(members[0][i])
            out.append(tuple(row))
        return out


def _aliases(cond):
    out = set()
    for side in (cond.left, cond.right):
        stack = [side]
        while stack:
            e = stack.pop()
            if isinstance(e, Column):
                out.add(e.alias)
            elif isinstance(e, Arith):
                stack += [e.left, e.right]
    return out


ADAPTERS = {
    "csv": CsvAdapter,
}


def make_adapter(adapter_id, base_dir, decls):
    """An adapter instance for the schema entries declared with `adapter_id`."""
    try:
        cls = ADAPTERS[adapter_id]
    except KeyError:
        raise AdapterError(f"no adapter named '{adapter_id}' (available: {', '.join(ADAPTERS)})")
    return cls(base_dir, decls)


def execute_external(query, adapter):
    """Run `query` on `adapter`, attaching the SQL text to any failure."""
    try:
        yield from adapter.execute(query)
    except AdapterError as e:
        if e.sql is None:
            raise AdapterError(str(e), query.render())
        raise
