"""
Console output and logging setup.

Diagnostics and engine progress go through the standard logging tree with a
rich handler; get_tuple trace lines use a plain `[HH:MM:SS] message` stream
handler so that each transition stays on one line. Answers are printed on the
stdout console, one per line.
"""

import logging
import sys

from rich.console import Console
from rich.logging import RichHandler

TRACE_LOGGER = "ldlpp.trace"

# rich resolves sys.stdout / sys.stderr at write time
stdout = Console(highlight=False, soft_wrap=True)
stderr = Console(stderr=True, highlight=False, soft_wrap=True)


def setup_logging(level=logging.WARNING, trace=False):
    """
    Install handlers on the package loggers.

    Args:
        level: level for the `ldlpp` logger tree
        trace: when True the get_tuple trace logger is enabled
    """
    handler = RichHandler(console=stderr, show_path=False, log_time_format="[%H:%M:%S]", markup=False)
    root = logging.getLogger("ldlpp")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False

    trace_handler = logging.StreamHandler(sys.stderr)
    trace_handler.setFormatter(logging.Formatter("[%(asctime)s] %(message)s", datefmt="%H:%M:%S"))
    tracer = logging.getLogger(TRACE_LOGGER)
    tracer.handlers[:] = [trace_handler]
    tracer.propagate = False
    set_trace(trace)


def set_trace(enabled):
    logging.getLogger(TRACE_LOGGER).setLevel(logging.DEBUG if enabled else logging.WARNING)
