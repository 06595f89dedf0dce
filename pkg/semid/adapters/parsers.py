"""
Parsing helpers for command-line values and code tuples.

Values such as ``--branching 32,40`` or ``--anchors auto`` arrive as
strings; these functions turn them into typed values and raise
``ConfigError`` (exit code 2) on anything they cannot interpret.
"""

from __future__ import annotations

import re
from typing import List, Optional, Tuple

from semid.errors import ConfigError

_INT_LIST_RE = re.compile(r"^\s*\d+(\s*,\s*\d+)*\s*$")


def parse_int_list(txt: Optional[str], what: str = "value") -> Optional[List[int]]:
    """Interprets a comma-separated list of non-negative integers.

    Examples:
        "32,40"   -> [32, 40]
        " 8 , 8 " -> [8, 8]
        None / "" -> None
    """
    if txt is None:
        return None
    s = str(txt).strip()
    if not s:
        return None
    if not _INT_LIST_RE.match(s):
        raise ConfigError(f"{what}: expected comma-separated integers, got {txt!r}")
    return [int(p) for p in s.split(",")]


def parse_branching(txt: Optional[str]) -> Optional[List[int]]:
    out = parse_int_list(txt, "--branching")
    if out is not None and any(b < 2 for b in out):
        raise ConfigError(f"--branching: every factor must be >= 2, got {txt!r}")
    return out


def parse_anchors(txt: Optional[str]) -> Optional[List[int]]:
    """``auto`` (or nothing) keeps g_l = b_l; otherwise one count per level."""
    if txt is None or str(txt).strip().lower() in {"", "auto"}:
        return None
    return parse_int_list(txt, "--anchors")


def parse_code_tuple(txt: str) -> Tuple[int, ...]:
    """"3,0,12" -> (3, 0, 12)."""
    out = parse_int_list(txt, "code tuple")
    if not out:
        raise ValueError(f"empty code tuple: {txt!r}")
    return tuple(out)


def format_code_tuple(codes) -> str:
    return ",".join(str(int(c)) for c in codes)


def parse_float_list(txt: Optional[str], what: str = "value") -> Optional[List[float]]:
    """"1,1,0.5" -> [1.0, 1.0, 0.5]; None / "" -> None."""
    if txt is None or not str(txt).strip():
        return None
    try:
        return [float(p) for p in str(txt).split(",")]
    except ValueError as exc:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {txt!r}") from exc
