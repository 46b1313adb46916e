"""Shared helpers for the test suites."""

from ldlpp.terms import format_row


def answers(session, query):
    """All answers of a query as a set of tuples."""
    _, rows = session.query(query)
    return set(rows)


def facts_text(pred, rows):
    """Program text holding one fact per row."""
    return "".join(format_row(pred, tuple(row)) + ".\n" for row in rows)
