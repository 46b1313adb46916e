"""
Session configuration.

Settings are class attributes on profile classes, the same way build profiles
are laid out: a base class carrying the defaults, a few specialised profiles
overriding a handful of them, and a registry dict naming every profile.
A session works on a mutable SessionOptions copy, which can be overridden
from a YAML file, from command-line flags, or with `set <option> <value>`.
"""

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from ldlpp.errors import ConfigError

# Project root directory (parent of the package)
PROJECT_ROOT = Path(__file__).parent.parent


class SessionConfig:
    """Default settings shared by every profile."""

    SEED = None                  # None keeps textual fact order
    MAX_STEPS = 10_000           # XY step guard
    OFFLOAD = True               # push external-relation goals to SQL
    TRACE = False                # one log line per get_tuple transition
    INTELLIGENT_BACKTRACKING = True
    COPY_RULES = True            # pointer-switch evaluation of copy rules
    INDEX_THRESHOLD = 64         # relation size above which scans build an index
    FIXTURES_DIR = str(PROJECT_ROOT / "fixtures")

    @classmethod
    def options(cls):
        """Build a SessionOptions carrying this profile's values."""
        return SessionOptions(
            seed=cls.SEED,
            max_steps=cls.MAX_STEPS,
            offload=cls.OFFLOAD,
            trace=cls.TRACE,
            intelligent_backtracking=cls.INTELLIGENT_BACKTRACKING,
            copy_rules=cls.COPY_RULES,
            index_threshold=cls.INDEX_THRESHOLD,
            fixtures_dir=os.environ.get("LDL_FIXTURES", cls.FIXTURES_DIR),
        )


class DefaultConfig(SessionConfig):
    """Interactive use and batch runs."""
    PROFILE = "default"


class TraceConfig(SessionConfig):
    """Debugging: trace every dataflow transition."""
    PROFILE = "trace"
    TRACE = True


class NaiveConfig(SessionConfig):
    """All evaluation shortcuts off; used to cross-check optimized runs."""
    PROFILE = "naive"
    INTELLIGENT_BACKTRACKING = False
    COPY_RULES = False
    OFFLOAD = False


SESSION_PROFILES = {
    "default": DefaultConfig,
    "trace": TraceConfig,
    "naive": NaiveConfig,
}


@dataclass
class SessionOptions:
    """Live options of one session."""
    seed: Optional[int] = None
    max_steps: int = SessionConfig.MAX_STEPS
    offload: bool = True
    trace: bool = False
    intelligent_backtracking: bool = True
    copy_rules: bool = True
    index_threshold: int = SessionConfig.INDEX_THRESHOLD
    fixtures_dir: str = SessionConfig.FIXTURES_DIR

    @classmethod
    def from_profile(cls, name="default", overrides=None):
        """Options of the named profile, with `overrides` applied on top."""
        try:
            profile = SESSION_PROFILES[name]
        except KeyError:
            raise ConfigError(f"unknown profile '{name}' (choose from {', '.join(SESSION_PROFILES)})")
        options = profile.options()
        if overrides:
            options = options.updated(**overrides)
        return options

    def updated(self, **changes):
        known = {f.name for f in fields(self)}
        unknown = sorted(set(changes) - known)
        if unknown:
            raise ConfigError(f"unknown option(s): {', '.join(unknown)}")
        return replace(self, **{k: v for k, v in changes.items() if v is not None or k == "seed"})

    def set_text(self, name, text):
        """Apply a textual `set <option> <value>` command; returns the new options."""
        name = name.replace("-", "_")
        kinds = {f.name: f.type for f in fields(self)}
        if name not in kinds:
            raise ConfigError(f"unknown option: {name}")
        current = getattr(self, name)
        if isinstance(current, bool) or name in ("offload", "trace", "intelligent_backtracking", "copy_rules"):
            value = _parse_bool(text)
        elif name == "seed":
            value = None if text.lower() in ("none", "off") else _parse_int(name, text)
        elif name in ("max_steps", "index_threshold"):
            value = _parse_int(name, text)
        else:
            value = text
        return replace(self, **{name: value})


def load_overrides(path):
    """Read option overrides from a YAML mapping."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of option names to values")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("on", "true", "yes", "1"):
        return True
    if lowered in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"expected on/off, got '{text}'")


def _parse_int(name, text):
    try:
        value = int(text)
    except ValueError:
        raise ConfigError(f"{name}: expected an integer, got '{text}'")
    if value < 0:
        raise ConfigError(f"{name}: must be non-negative")
    return value
