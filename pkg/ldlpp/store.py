"""
In-memory fact base.

Relations are duplicate-free tuple sets kept in insertion order, with hash
indexes per bound-position mask built lazily on first use. The module also
holds the chosen tables of choice rules, the aggregate state tables, the XY
step counter and the old/new relation pairs of XY programs.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from ldlpp.config import SessionConfig
from ldlpp.errors import StoreError
from ldlpp.terms import ground

log = logging.getLogger(__name__)


class InsertResult(Enum):
    INSERTED = "inserted"
    DUPLICATE = "duplicate"


class FdResult(Enum):
    ACCEPTED = "accepted"
    VIOLATES = "violates"


@dataclass(frozen=True)
class Bound:
    value: Any


class _Free:
    def __repr__(self):
        return "FREE"


FREE = _Free()


class Relation:
    """
    A named, fixed-arity set of ground tuples.

    Rows keep insertion order so that consumers can hold integer cursors and
    scans can iterate a snapshot while the relation grows.
    """

    def __init__(self, name, arity, index_threshold=SessionConfig.INDEX_THRESHOLD):
        self.name = name
        self.arity = arity
        self.index_threshold = index_threshold
        self.rows = []
        self._set = set()
        self.indexes = {}

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows[:len(self.rows)])

    def __contains__(self, row):
        return row in self._set

    def __repr__(self):
        return f"Relation({self.name}/{self.arity}, {len(self.rows)} rows)"

    def insert_if_new(self, row):
        row = tuple(row)
        if len(row) != self.arity:
            raise StoreError(f"{self.name}: expected {self.arity} values, got {len(row)}")
        if row in self._set:
            return InsertResult.DUPLICATE
        self._set.add(row)
        self.rows.append(row)
        for mask, index in self.indexes.items():
            index[tuple(row[i] for i in mask)].append(row)
        return InsertResult.INSERTED

    def insert_all(self, rows):
        """Insert many rows; returns how many were new."""
        return sum(1 for r in rows if self.insert_if_new(r) is InsertResult.INSERTED)

    def build_index(self, mask):
        index = defaultdict(list)
        for row in self.rows:
            index[tuple(row[i] for i in mask)].append(row)
        self.indexes[mask] = index
        log.debug("index on %s%s over %d rows", self.name, list(mask), len(self.rows))
        return index

    def lookup(self, mask, key):
        """
        Rows whose `mask` positions equal `key`, as a snapshot-bounded iterator.

        An index for the mask is built on first use once the relation holds more
        than `index_threshold` rows; smaller relations are filtered directly.
        """
        if not mask:
            return self._snapshot(self.rows)
        index = self.indexes.get(mask)
        if index is None and len(self.rows) > self.index_threshold:
            index = self.build_index(mask)
        if index is not None:
            bucket = index.get(key)
            return self._snapshot(bucket) if bucket else iter(())
        return (row for row in self._snapshot(self.rows)
                if all(row[i] == k for i, k in zip(mask, key)))

    @staticmethod
    def _snapshot(rows):
        n = len(rows)
        return (rows[i] for i in range(n))

    def scan(self, pattern):
        """Tuples matching the Bound positions of `pattern` (Bound(value) or FREE per column)."""
        if len(pattern) != self.arity:
            raise StoreError(f"{self.name}: pattern of {len(pattern)} columns for arity {self.arity}")
        mask = tuple(i for i, p in enumerate(pattern) if isinstance(p, Bound))
        key = tuple(pattern[i].value for i in mask)
        return self.lookup(mask, key)

    def copy(self, name=None):
        other = Relation(name or self.name, self.arity, self.index_threshold)
        other.rows = list(self.rows)
        other._set = set(self._set)
        return other


class Store:
    """Relations of one session, by predicate name."""

    def __init__(self, index_threshold=SessionConfig.INDEX_THRESHOLD):
        self.index_threshold = index_threshold
        self.relations = {}

    def relation(self, name, arity):
        rel = self.relations.get(name)
        if rel is None:
            rel = self.relations[name] = Relation(name, arity, self.index_threshold)
        elif rel.arity != arity:
            raise StoreError(f"{name} has arity {rel.arity}, not {arity}")
        return rel

    def get(self, name):
        return self.relations.get(name)

    def __contains__(self, name):
        return name in self.relations

    def load_facts(self, atoms):
        for a in atoms:
            self.relation(a.pred, a.arity).insert_if_new(tuple(ground(t) for t in a.args))

    def model(self):
        """Plain sets per predicate."""
        return {name: set(rel.rows) for name, rel in self.relations.items()}


class ChosenTable:
    """
    Memo of a choice rule: per choice goal, the map from left-side values to
    right-side values, plus the set of chosen W tuples.

    `goals` lists (left positions, right positions) into W.
    """

    def __init__(self, rule_name, goals):
        self.rule_name = rule_name
        self.goals = [(tuple(l), tuple(r)) for l, r in goals]
        self.maps = [dict() for _ in self.goals]
        self.chosen = set()

    def fd_insert(self, w):
        w = tuple(w)
        if w in self.chosen:
            return FdResult.ACCEPTED
        keys = []
        for (left, right), fmap in zip(self.goals, self.maps):
            lv = tuple(w[i] for i in left)
            rv = tuple(w[i] for i in right)
            current = fmap.get(lv)
            if current is not None and current != rv:
                return FdResult.VIOLATES
            keys.append((lv, rv))
        for (lv, rv), fmap in zip(keys, self.maps):
            fmap[lv] = rv
        self.chosen.add(w)
        return FdResult.ACCEPTED

    def reset(self):
        self.maps = [dict() for _ in self.goals]
        self.chosen = set()

    def copy(self):
        other = ChosenTable(self.rule_name, self.goals)
        other.maps = [dict(m) for m in self.maps]
        other.chosen = set(self.chosen)
        return other

    def satisfies_fds(self):
        for left, right in self.goals:
            seen = {}
            for w in self.chosen:
                lv = tuple(w[i] for i in left)
                rv = tuple(w[i] for i in right)
                if seen.setdefault(lv, rv) != rv:
                    return False
        return True


class AggStateTable:
    """Per aggregate invocation: group key → GroupCursor."""

    def __init__(self, factory):
        self.factory = factory
        self.groups = {}

    def cursor(self, key):
        gc = self.groups.get(key)
        if gc is None:
            gc = self.groups[key] = self.factory(key)
        return gc

    def __iter__(self):
        return iter(self.groups.values())

    def __len__(self):
        return len(self.groups)


@dataclass
class StepCounter:
    """The XY temporal counter; unbounded, starts at 0."""
    value: int = 0

    def advance(self):
        self.value += 1
        return self.value


@dataclass
class StatePair:
    """old_q / new_q handles of one XY predicate."""
    name: str
    arity: int
    old: Relation = None
    new: Relation = None
    shared: bool = field(default=False)

    def __post_init__(self):
        if self.old is None:
            self.old = Relation(f"old_{self.name}", self.arity)
        if self.new is None:
            self.new = Relation(f"new_{self.name}", self.arity)

    def swap(self):
        """old := new, new := empty; constant time."""
        self.old = self.new
        self.old.name = f"old_{self.name}"
        self.new = Relation(f"new_{self.name}", self.arity, self.old.index_threshold)
        self.shared = False

    def share_old(self):
        """Let new_q start as old_q itself (copy rule evaluated by pointer switch)."""
        self.new = self.old
        self.shared = True


class OverlayStore:
    """
    A store view whose `private` relations shadow those of `base`.

    Writes to any other predicate go to the base store.
    """

    def __init__(self, base, private=None):
        self.base = base
        self.private = dict(private or {})
        self.index_threshold = base.index_threshold

    def relation(self, name, arity):
        if name in self.private:
            return self.private[name]
        return self.base.relation(name, arity)

    def get(self, name):
        if name in self.private:
            return self.private[name]
        return self.base.get(name)

    def __contains__(self, name):
        return name in self.private or name in self.base

    def model(self):
        out = self.base.model()
        out.update({name: set(rel.rows) for name, rel in self.private.items()})
        return out
