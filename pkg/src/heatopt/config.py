"""Flat ``key = value`` run configuration files.

Example::

    # benchmark default
    geometry = quarter_annulus
    level = 4
    degree = 2
    alpha = 1e-3
    kappa = 1e-2
    observation = partial        # or: full, or 0:0.0625, 0.25:0.3125
    formulation = 3x3
    backend = cholesky
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .kkt import ProblemConfig

__all__ = ["ConfigError", "parse_config", "load_config", "dump_config"]

_SECTION = "run"


class ConfigError(ValueError):
    def __init__(self, key, msg):
        super().__init__("%s: %s" % (key, msg) if key else msg)
        self.key = key


def _parse_observation(text: str):
    text = text.strip()
    if not text:
        return "none"
    if text in ("partial", "full", "none"):
        return text
    out = []
    for item in text.split(","):
        a, sep, b = item.partition(":")
        if not sep:
            raise ValueError("expected partial, full, none or start:end pairs")
        out.append((float(a), float(b)))
    return out


_CONVERTERS = {int: int, float: float, str: str}


def parse_config(text: str) -> ProblemConfig:
    """Parse configuration text; errors name the offending key."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string("[%s]\n%s" % (_SECTION, text))
    except configparser.Error as exc:
        raise ConfigError(None, "malformed configuration: %s" % exc) from exc
    fields = {f.name: f for f in dataclasses.fields(ProblemConfig)}
    kw = {}
    for key, raw in cp.items(_SECTION):
        if key not in fields:
            raise ConfigError(key, "unknown key")
        try:
            if key == "observation":
                kw[key] = _parse_observation(raw)
            else:
                kw[key] = _CONVERTERS[type(getattr(ProblemConfig, key))](raw.strip())
        except ValueError as exc:
            raise ConfigError(key, "invalid value %r (%s)" % (raw, exc)) from exc
    try:
        return ProblemConfig(**kw)
    except ValueError as exc:
        key = str(exc).split()[0]
        raise ConfigError(key if key in fields else None, str(exc)) from exc


def load_config(path) -> ProblemConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: ProblemConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "observation" and not isinstance(v, str):
            v = ", ".join("%r:%r" % (a, b) for a, b in v)
        lines.append("%s = %s" % (f.name, v))
    return "\n".join(lines) + "\n"
