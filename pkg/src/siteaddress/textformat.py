"""Plain-text key/value files with dotted sections and SI unit suffixes.

Example::

    [simulation]
    drift_rate = 10 nm/s
    shot_interval = 10 s

    [pulse.0]
    shape = gaussian
    sigma_t = 20 us

Values carrying a unit are converted to SI on read. Fields in gauss stay in
gauss and angular frequencies may be given in Hz (converted with 2 pi) by
the consumer, not here.
"""
from __future__ import annotations

import configparser
import io
import math
import re

_PREFIX = {"": 1.0, "k": 1e3, "M": 1e6, "G": 1e9, "m": 1e-3, "u": 1e-6, "µ": 1e-6, "μ": 1e-6,
           "n": 1e-9, "p": 1e-12, "c": 1e-2}
# base unit -> SI factor; gauss is kept as the field unit
_BASE = {"m": 1.0, "s": 1.0, "Hz": 1.0, "A": 1.0, "K": 1.0, "G": 1.0, "kg": 1.0, "g": 1e-3,
         "rad": 1.0, "site": 1.0, "sites": 1.0}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


class FormatError(ValueError):
    pass


def _atom_factor(token: str) -> float:
    m = re.fullmatch(r"([A-Za-zµμ]+)(?:\^(-?\d+))?", token)
    if not m:
        raise FormatError(f"cannot parse unit {token!r}")
    name, power = m.group(1), int(m.group(2) or 1)
    if name in _BASE:
        return _BASE[name] ** power
    for pre, scale in _PREFIX.items():
        if pre and name.startswith(pre) and name[len(pre):] in _BASE:
            return (scale * _BASE[name[len(pre):]]) ** power
    raise FormatError(f"unknown unit {name!r}")


def _product_factor(expr: str) -> float:
    expr = expr.strip()
    if expr.startswith("(") and expr.endswith(")"):
        expr = expr[1:-1]
    f = 1.0
    for tok in re.split(r"[\s*·]+", expr.strip()):
        if tok:
            f *= _atom_factor(tok)
    return f


def unit_factor(unit: str) -> float:
    """SI conversion factor of a unit expression such as ``Hz/(um A)``."""
    if not unit.strip():
        return 1.0
    num, *dens = unit.split("/")
    f = _product_factor(num) if num.strip() not in ("", "1") else 1.0
    for d in dens:
        f /= _product_factor(d)
    return f


def parse_quantity(text: str) -> float:
    m = _NUMBER.match(text)
    if not m:
        raise FormatError(f"not a number with optional unit: {text!r}")
    return float(m.group(1)) * unit_factor(m.group(2))


def format_float(x: float) -> str:
    """Shortest text that round-trips the float exactly."""
    if math.isfinite(x) and x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def loads(text: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise FormatError(str(exc)) from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def dumps(sections: dict[str, dict[str, str]]) -> str:
    buf = io.StringIO()
    for i, (name, items) in enumerate(sections.items()):
        if i:
            buf.write("\n")
        buf.write(f"[{name}]\n")
        for k, v in items.items():
            buf.write(f"{k} = {v}\n")
    return buf.getvalue()


def check_keys(section: str, items: dict, allowed) -> None:
    unknown = sorted(set(items) - set(allowed))
    if unknown:
        raise FormatError(f"unknown key {unknown[0]!r} in section [{section}]")
