from pathlib import Path

import pytest

from ldlpp.config import SessionOptions
from ldlpp.session import Session

FIXTURES = Path(SessionOptions.from_profile().fixtures_dir)


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def make_session():
    """Factory for fresh sessions: make_session("party.ldl", "extra text", seed=3)."""
    def make(name=None, text=None, **options):
        session = Session(SessionOptions.from_profile(overrides=options))
        if name is not None:
            session.load(FIXTURES / name)
        if text:
            session.load_text(text)
        return session
    return make
