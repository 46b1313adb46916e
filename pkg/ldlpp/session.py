"""
Interpreter session: the loaded program, its analysis, the fact base and the
compiled query forms.
"""

import logging
from dataclasses import replace
from pathlib import Path

from ldlpp.adapters import execute_external, make_adapter
from ldlpp.analysis import analyze, bistate, foe_transform, format_graph, stratify, syncbi
from ldlpp.config import SessionOptions
from ldlpp.console import set_trace
from ldlpp.errors import ConfigError, LdlError, UnknownPredicate
from ldlpp.fixpoint import Evaluator, load_facts
from ldlpp.lam import QueryCompiler, adornment, parameterize
from ldlpp.lang import Program, print_program
from ldlpp.parser import check_arities, parse_program, parse_query
from ldlpp.sqlgen import Offloaded, offload, table_query
from ldlpp.store import Store
from ldlpp.terms import row_key
from ldlpp.uda import builtin_catalog

log = logging.getLogger(__name__)

EXPLAIN_KINDS = ("strata", "foe", "bistate", "syncbi", "graph", "sql")


class Session:
    """
    One interpreter session. Loading text re-analyzes the whole program and
    starts from a fresh fact base; queries compile into query forms cached by
    predicate and bound/free adornment.
    """

    def __init__(self, options=None, registry=None):
        self.options = options or SessionOptions.from_profile()
        self.registry = registry or builtin_catalog()
        self.source = Program()
        self.base_dir = Path.cwd()
        self.offloaded = None
        self.analyzed = None
        self.store = None
        self.evaluator = None
        self.compiler = None
        self.forms = {}
        self.adapters = {}
        self._fetched = set()

    # === LOADING ===

    def load(self, path):
        """
        Load rules, facts and schema entries from a file.

        Relative adapter file names resolve against the directory of `path`.

        Args:
            path (str | Path): program file, UTF-8

        Raises:
            OSError: the file cannot be read
            LdlError: the merged program fails to parse or analyze
        """
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        self.base_dir = path.resolve().parent
        log.info("loading %s", path)
        self.load_text(text)

    def load_text(self, text, base_dir=None):
        """
        Add program text to the session and re-analyze everything loaded so far.

        New rules are labelled after the ones already loaded. The fact base
        starts over from the merged program's facts.

        Args:
            text (str): LDL++ source
            base_dir (str | Path, optional): directory for adapter files
        """
        if base_dir is not None:
            self.base_dir = Path(base_dir)
        program = parse_program(text)
        offset = len(self.source.rules)
        rules = [replace(r, label=f"r{offset + k}") for k, r in enumerate(program.rules, 1)]
        merged = Program(self.source.rules + rules,
                         self.source.schema + program.schema,
                         self.source.facts + program.facts)
        check_arities(merged)
        self._analyze(merged)
        self.source = merged

    def schema(self, path):
        """
        Load a file of `database(...)` declarations.

        Args:
            path (str | Path): schema file

        Raises:
            ConfigError: the file holds rules or facts
        """
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        program = parse_program(text)
        if program.rules or program.facts:
            raise ConfigError(f"{path}: a schema file may only hold database(...) declarations")
        self.load_text(text, base_dir=path.resolve().parent)

    def _capabilities(self, program):
        caps = {}
        for adapter_id, decls in self._decls(program).items():
            caps[adapter_id] = make_adapter(adapter_id, self.base_dir, decls).capabilities
        return caps

    @staticmethod
    def _decls(program):
        out = {}
        for d in program.schema:
            if d.external:
                out.setdefault(d.source.adapter, []).append(d)
        return out

    def _analyze(self, program):
        if self.options.offload:
            offloaded = offload(program, self._capabilities(program))
        else:
            offloaded = Offloaded(program)
        analyzed = analyze(offloaded.program, self.registry)
        self.offloaded = offloaded
        self.analyzed = analyzed
        self.adapters = {a: make_adapter(a, self.base_dir, decls)
                         for a, decls in self._decls(program).items()}
        self.reset()

    def reset(self):
        """Fresh fact base and evaluation state for the analyzed program."""
        if self.analyzed is None:
            return
        self.store = Store(self.options.index_threshold)
        load_facts(self.store, self.analyzed.program, self.options.seed)
        self.evaluator = Evaluator(self.analyzed, self.store, self.options)
        externals = {pred: (lambda p=pred: self._fetch(p)) for pred in self._external_sources()}
        self.compiler = QueryCompiler(self.evaluator, externals, self.options.intelligent_backtracking)
        self.forms = {}
        self._fetched = set()

    def _require_program(self):
        if self.analyzed is None:
            raise LdlError("no program loaded")

    # === EXTERNAL RELATIONS ===

    def _external_sources(self):
        """Predicate -> (query, adapter id) for every relation served by an adapter."""
        out = {}
        for name, query in self.offloaded.queries.items():
            out[name] = (query, self.offloaded.adapters[name])
        for d in self.offloaded.program.schema:
            if d.external:
                out[d.pred] = (table_query(d), d.source.adapter)
        return out

    def _fetch(self, pred):
        """The store relation of an adapter-served predicate, fetched on first use."""
        rel = self.store.get(pred)
        if pred in self._fetched:
            return rel
        query, adapter_id = self._external_sources()[pred]
        arity = self.analyzed.program.predicates().get(pred, len(query.select))
        rel = self.store.relation(pred, arity)
        added = rel.insert_all(tuple(row)[:arity] for row in execute_external(query, self.adapters[adapter_id]))
        log.debug("fetched %d rows for %s", added, pred)
        self._fetched.add(pred)
        return rel

    def _ensure_externals(self):
        referenced = {a.pred for r in self.analyzed.program.rules for a in r.atoms()}
        for pred in self._external_sources():
            if pred in referenced:
                self._fetch(pred)

    # === QUERIES ===

    def stream_answers(self, atom):
        """
        Answers of a query atom, one tuple at a time.

        Query forms are cached per predicate and adornment, so repeated
        queries with other constants reuse the compiled form.

        Args:
            atom (Atom): the query; constants mark bound arguments

        Returns:
            Iterator[tuple]: full argument rows, in derivation order

        Raises:
            UnknownPredicate: no rule, fact or schema entry defines the predicate
            ArityError: the atom has the wrong number of arguments
        """
        self._require_program()
        self._ensure_externals()
        set_trace(self.options.trace)
        key = (atom.pred, atom.arity, adornment(atom))
        form = self.forms.get(key)
        if form is None:
            form = self.forms[key] = self.compiler.compile(atom)
        _, _, values = parameterize(atom)
        return form.answers(values)

    def query(self, text):
        """
        Parse and run a query.

        Args:
            text (str): one atom ending in a period, e.g. `actual_adv(S, P).`

        Returns:
            tuple: (query atom, answer iterator)
        """
        atom = parse_query(text)
        return atom, self.stream_answers(atom)

    def evaluate(self):
        """Bottom-up model of the whole program, as sets per predicate."""
        self._require_program()
        self._ensure_externals()
        self.evaluator.run()
        return self.store.model()

    def facts(self, pred):
        """
        Every tuple of a predicate.

        Args:
            pred (str): predicate name

        Returns:
            list[tuple]: the rows in term order
        """
        self._require_program()
        if pred not in self.analyzed.program.predicates():
            raise UnknownPredicate(pred)
        self._ensure_externals()
        if pred in self._external_sources():
            self._fetch(pred)
        self.evaluator.materialize({pred})
        rel = self.store.get(pred)
        return sorted(rel.rows, key=row_key) if rel is not None else []

    # === OPTIONS ===

    def set(self, name, value):
        """
        Change a live option. Turning offload on or off re-analyzes the
        program; any other change only resets the fact base.

        Args:
            name (str): option name, `-` or `_` separated
            value (str): textual value as typed in the interpreter
        """
        self.options = self.options.set_text(name, value)
        log.info("set %s = %s", name, value)
        if name.replace("-", "_") == "offload" and self.analyzed is not None:
            self._analyze(self.source)
        else:
            self.reset()

    # === INSPECTION ===

    def explain(self, kind, pred=None):
        """
        Text of a compilation artifact.

        Args:
            kind (str): one of EXPLAIN_KINDS
            pred (str, optional): predicate; required except for strata and graph

        Returns:
            str: the artifact, without a trailing newline
        """
        self._require_program()
        program = self.analyzed.program
        if kind == "graph":
            return format_graph(self.analyzed.graph)
        if kind == "strata":
            if pred is not None and self.analyzed.group_of(pred) is not None:
                b = bistate(program, [pred])
                return stratify(b.program(), self.analyzed.registry).format()
            return self.analyzed.stratification.format()
        if pred is None:
            raise ConfigError(f"explain {kind} needs a predicate")
        if pred not in program.predicates():
            raise UnknownPredicate(pred)
        if kind == "foe":
            return print_program(foe_transform(Program(self.analyzed.source.rules_for(pred)))).rstrip("\n")
        if kind == "bistate":
            return print_program(bistate(program, [pred]).program()).rstrip("\n")
        if kind == "syncbi":
            return print_program(syncbi(program, [pred])).rstrip("\n")
        if kind == "sql":
            labels = {r.label for r in self.offloaded.program.rules_for(pred)}
            parts = [f"{name}:\n{query.render()}" for name, query in self.offloaded.queries.items()
                     if self.offloaded.sources[name] in labels]
            return "\n\n".join(parts) if parts else f"no SQL generated for {pred}"
        raise ConfigError(f"unknown explain kind '{kind}' (choose from {', '.join(EXPLAIN_KINDS)})")
