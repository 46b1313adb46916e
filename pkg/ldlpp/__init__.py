"""
ldlpp: a deductive database for the LDL++ language.

Rules with stratified negation, choice, user-defined aggregates and
XY-stratified recursion, evaluated bottom-up or pipelined tuple by tuple,
with goals on external relations pushed down as SQL.
"""

from ldlpp.config import SessionOptions
from ldlpp.errors import LdlError
from ldlpp.session import Session

__all__ = ["Session", "SessionOptions", "LdlError"]
__version__ = "0.1.0"
