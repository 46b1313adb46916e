"""
Command-line front end.

`command_loop` is the line-oriented interpreter: each input line is one
command, answers are printed one per line as the query machine produces
them. `run_batch` loads a program and feeds a query file through the same
loop. Errors are reported on standard error; the exit code tells the kind of
the first failure (1 parse or analysis, 2 usage or file, 3 step limit).
"""

import logging
import sys
from pathlib import Path
from typing import Optional

import typer

from ldlpp.config import SessionOptions, load_overrides
from ldlpp.console import setup_logging, stderr, stdout
from ldlpp.errors import (AdapterError, ConfigError, LdlError, StepLimitReached, UnknownPredicate,
                          UsageError)
from ldlpp.session import EXPLAIN_KINDS, Session
from ldlpp.terms import format_row

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ANALYSIS = 1
EXIT_USAGE = 2
EXIT_STEP_LIMIT = 3

PROMPT = "ldl> "

COMMANDS = {}


def command(name):
    """Register an interpreter command handler `fn(session, argument)`."""
    def register(fn):
        COMMANDS[name] = fn
        return fn
    return register


class Quit(Exception):
    pass


def exit_code(error):
    """
    Exit status for a failed command.

    Args:
        error (Exception): the LdlError or OSError raised by the command

    Returns:
        int: EXIT_STEP_LIMIT, EXIT_USAGE or EXIT_ANALYSIS
    """
    if isinstance(error, StepLimitReached):
        return EXIT_STEP_LIMIT
    if isinstance(error, (UsageError, ConfigError, UnknownPredicate, AdapterError, OSError)):
        return EXIT_USAGE
    return EXIT_ANALYSIS


def report(error):
    """Print `error: <message>` on standard error."""
    if isinstance(error, OSError):
        text = f"{error.filename or 'file'}: {error.strerror or error}"
    else:
        text = str(error)
    stderr.print(f"error: {text}", markup=False)


def print_rows(pred, rows):
    """
    Print rows one per line as they arrive, then the count line.

    Args:
        pred (str): predicate name used to format each row
        rows (Iterable[tuple]): answers, consumed lazily

    Returns:
        int: number of rows printed
    """
    n = 0
    for row in rows:
        stdout.print(format_row(pred, row), markup=False)
        n += 1
    stdout.print(f"-- {n} answer{'' if n == 1 else 's'}", markup=False)
    return n


def _argument(arg, usage):
    if not arg:
        raise UsageError(f"usage: {usage}")
    return arg


# ==================================================
# INTERPRETER COMMANDS
# ==================================================

@command("load")
def load_command(session, arg):
    path = _argument(arg, "load <file>")
    session.load(path)
    log.info("loaded %s: %d rules, %d facts", path, len(session.source.rules), len(session.source.facts))


@command("schema")
def schema_command(session, arg):
    session.schema(_argument(arg, "schema <file>"))


@command("query")
def query_command(session, arg):
    text = _argument(arg, "query <atom>.")
    atom, answers = session.query(text)
    print_rows(atom.pred, answers)


@command("explain")
def explain_command(session, arg):
    words = _argument(arg, f"explain {'|'.join(EXPLAIN_KINDS)} [<pred>]").split()
    if len(words) > 2:
        raise UsageError(f"usage: explain {'|'.join(EXPLAIN_KINDS)} [<pred>]")
    kind, pred = words[0], words[1] if len(words) == 2 else None
    if kind not in EXPLAIN_KINDS:
        raise UsageError(f"unknown explain kind '{kind}' (choose from {', '.join(EXPLAIN_KINDS)})")
    stdout.print(session.explain(kind, pred), markup=False)


@command("set")
def set_command(session, arg):
    words = (arg or "").split()
    if len(words) != 2:
        raise UsageError("usage: set <option> <value>")
    session.set(*words)


@command("facts")
def facts_command(session, arg):
    pred = _argument(arg, "facts <pred>")
    print_rows(pred, session.facts(pred))


@command("quit")
def quit_command(session, arg):
    raise Quit


COMMANDS["exit"] = quit_command


def run_command(session, line):
    """
    Execute one input line.

    A registered command word runs its handler. Otherwise a line holding
    `<-` adds a rule and any other line ending in `.` is a query.

    Args:
        session (Session): the interpreter session
        line (str): stripped input line

    Raises:
        UsageError: the line is none of the above
        Quit: the line was `quit` or `exit`
    """
    word, _, rest = line.partition(" ")
    handler = COMMANDS.get(word)
    if handler is not None:
        handler(session, rest.strip())
    elif "<-" in line:
        session.load_text(line)
    elif line.endswith("."):
        query_command(session, line)
    else:
        raise UsageError(f"unknown command: {word}")


def command_loop(lines, session, stop_on_error=False, prompt=None):
    """
    Run interpreter commands from an iterable of lines.

    Blank lines and `%` comments are skipped. Failures are reported and the
    loop goes on unless `stop_on_error` is set.

    Args:
        lines (Iterable[str]): raw input lines
        session (Session): the interpreter session
        stop_on_error (bool): stop at the first failing command
        prompt (str, optional): prompt written to stderr before each line

    Returns:
        int: exit code of the first failing command, EXIT_OK when none failed
    """
    status = EXIT_OK
    if prompt:
        stderr.print(prompt, end="", markup=False)
    for raw in lines:
        line = raw.strip()
        if line and not line.startswith("%"):
            try:
                run_command(session, line)
            except Quit:
                break
            except (LdlError, OSError) as e:
                report(e)
                status = status or exit_code(e)
                if stop_on_error:
                    break
        if prompt:
            stderr.print(prompt, end="", markup=False)
    return status


def run_batch(session, program, queries):
    """
    Load a program and run every command of a query file.

    Args:
        session (Session): the interpreter session
        program (Path, optional): program file to load first
        queries (Path): file of interpreter commands, UTF-8

    Returns:
        int: exit code, as for command_loop
    """
    try:
        if program is not None:
            session.load(program)
        with open(queries, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except (LdlError, OSError) as e:
        report(e)
        return exit_code(e)
    return command_loop(lines, session, stop_on_error=True)


def run_repl(session, program=None):
    """Load `program` when given, then read commands from standard input."""
    if program is not None:
        try:
            session.load(program)
        except (LdlError, OSError) as e:
            report(e)
            return exit_code(e)
    return command_loop(sys.stdin, session, prompt=PROMPT if sys.stdin.isatty() else None)


app = typer.Typer(add_completion=False, help="LDL++ deductive database interpreter.")


@app.command()
def main(
    program: Optional[Path] = typer.Argument(None, help="Program file (rules, facts, schema) to load first."),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Shuffle fact insertion order with this seed."),
    max_steps: Optional[int] = typer.Option(None, "--max-steps", min=0, help="Step limit for XY evaluation."),
    no_offload: bool = typer.Option(False, "--no-offload", help="Evaluate external relations in the engine."),
    trace: bool = typer.Option(False, "--trace", help="Log every get_tuple transition on stderr."),
    batch: Optional[Path] = typer.Option(None, "--batch", help="Run the commands of this file and exit."),
    profile: str = typer.Option("default", "--profile", help="Option profile: default, trace or naive."),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML file of option overrides."),
    verbose: int = typer.Option(0, "--verbose", "-v", count=True, help="-v for info, -vv for debug logging."),
):
    """Load a program and answer queries from standard input or a batch file."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    try:
        overrides = load_overrides(config) if config is not None else {}
        if seed is not None:
            overrides["seed"] = seed
        if max_steps is not None:
            overrides["max_steps"] = max_steps
        if no_offload:
            overrides["offload"] = False
        if trace:
            overrides["trace"] = True
        options = SessionOptions.from_profile(profile, overrides)
    except ConfigError as e:
        setup_logging(level)
        report(e)
        raise typer.Exit(EXIT_USAGE)
    setup_logging(level, options.trace)
    log.debug("options: %s", options)
    session = Session(options)
    if batch is not None:
        code = run_batch(session, program, batch)
    else:
        code = run_repl(session, program)
    raise typer.Exit(code)


def RUN():
    """Entry point of `ldl.py`."""
    app()
