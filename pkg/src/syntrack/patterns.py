"""Built-in trajectory grammars (lines, arcs, m-rectangles) and language predicates.

Terminals are compass headings: ``a`` = 45 deg (north-east), ``b`` = 90 deg
(east), ... ``h`` = 360 deg (north).  Every pattern is wrapped in its own
grammar with start symbol ``S`` and the single rule ``S -> <pattern>``.

Default rule probabilities are uniform per left-hand side.  Uniform values
are already subcritical for every pattern, so no capping was needed:

==========  =========================================  ===============
pattern     recursive mass per rewrite                 spectral radius
==========  =========================================  ===============
L_u         P(L_u -> u L_u) = 1/2                      0.5
A_ur, A_dr  aAc + bA + Ab = 3/5                        0.6
R_cl, R_cc  P(T -> b T f) = 1/2 (L_d / L_h also 1/2)   0.5
==========  =========================================  ===============

The downward arc is written ``A_dr -> c A_dr a | b A_dr | A_dr b | c a | b``.
Its second alternative references an undefined ``A_ul`` in the original rule
listing; it is read as ``A_dr`` so the arc is the exact mirror of ``A_ur``.
"""
from __future__ import annotations

import math
import re
from functools import lru_cache

from .grammar import Grammar

TERMINALS = ("a", "b", "c", "d", "e", "f", "g", "h")
HEADINGS = {t: (i + 1) * math.pi / 4 for i, t in enumerate(TERMINALS)}

LINE_NAMES = tuple(f"L_{t}" for t in TERMINALS)
PATTERN_NAMES = LINE_NAMES + ("A_ur", "A_dr", "R_cl", "R_cc")

LINE_CONTINUE = 0.5
ARC_PROB = 0.2
TURN_CONTINUE = 0.5


def _line_rules(t: str, p: float = LINE_CONTINUE):
    return [(f"L_{t}", f"{t} L_{t}", p), (f"L_{t}", t, 1.0 - p)]


def _arc_rules(name: str, up: str, down: str, p: float = ARC_PROB):
    # rule skeleton: X -> up X down | b X | X b | up down | b
    return [
        (name, f"{up} {name} {down}", p),
        (name, f"b {name}", p),
        (name, f"{name} b", p),
        (name, f"{up} {down}", p),
        (name, "b", 1.0 - 4 * p),
    ]


def _rect_rules(name: str, turn: str, leg: str, close: str, p: float = TURN_CONTINUE):
    return [
        (name, f"{turn} L_{close}", 1.0),
        (turn, f"b {turn} f", p),
        (turn, f"L_{leg}", 1.0 - p),
        *_line_rules(leg),
        *_line_rules(close),
    ]


def pattern_rules(name: str) -> list[tuple[str, str, float]]:
    if name in LINE_NAMES:
        return _line_rules(name[-1])
    if name == "A_ur":
        return _arc_rules("A_ur", "a", "c")
    if name == "A_dr":
        return _arc_rules("A_dr", "c", "a")
    if name == "R_cl":
        return _rect_rules("R_cl", "T_cl", "d", "h")
    if name == "R_cc":
        return _rect_rules("R_cc", "T_cc", "h", "d")
    raise KeyError(f"unknown pattern {name!r}")


@lru_cache(maxsize=None)
def pattern_grammar(name: str) -> Grammar:
    rules = [("S", name, 1.0)] + pattern_rules(name)
    return Grammar.from_rules(rules, start="S")


def builtin_patterns() -> dict[str, Grammar]:
    """Map pattern name -> grammar wrapped with its own start symbol."""
    return {name: pattern_grammar(name) for name in PATTERN_NAMES}


@lru_cache(maxsize=None)
def line_grammar() -> Grammar:
    """Start symbol over the eight directed lines only (uniform 1/8)."""
    rules = [("S", name, 1.0 / len(LINE_NAMES)) for name in LINE_NAMES]
    for t in TERMINALS:
        rules += _line_rules(t)
    return Grammar.from_rules(rules, start="S")


@lru_cache(maxsize=None)
def full_grammar() -> Grammar:
    """All twelve patterns behind a single start symbol (uniform 1/12)."""
    rules = [("S", name, 1.0 / len(PATTERN_NAMES)) for name in PATTERN_NAMES]
    seen = set()
    for name in PATTERN_NAMES:
        for r in pattern_rules(name):
            if r not in seen:
                seen.add(r)
                rules.append(r)
    return Grammar.from_rules(rules, start="S")


def pattern_family(name: str) -> str:
    if name.startswith("L_"):
        return "line"
    if name.startswith("A_"):
        return "arc"
    if name.startswith("R_"):
        return "m-rectangle"
    return "unclassified"


# ---------------------------------------------------------------------------
# membership predicates (independent of any parser)

def in_arc_language(s: str, up: str = "a", down: str = "c", proper: bool = False) -> bool:
    """Strings of ``X -> up X down | b X | X b | up down | b``.

    Deleting every ``b`` must leave ``up^n down^n``; b's may appear anywhere
    (including between the innermost pair, via the ``b`` base rule).  With
    n == 0 the string is a non-empty run of b's.  ``proper`` demands n >= 1.
    """
    if not s or set(s) - {up, down, "b"}:
        return False
    core = s.replace("b", "")
    n = len(core) // 2
    if core != up * n + down * n:
        return False
    return n >= 1 or not proper


def in_rectangle_language(s: str, clockwise: bool = True, proper: bool = False) -> bool:
    """``b^n leg^m f^n close^p`` with m, p >= 1 (leg/close = d/h clockwise, h/d counter)."""
    leg, close = ("d", "h") if clockwise else ("h", "d")
    m = re.fullmatch(rf"(b*)({leg}+)(f*)({close}+)", s)
    if not m or len(m.group(1)) != len(m.group(3)):
        return False
    return len(m.group(1)) >= 1 or not proper


def in_line_language(s: str, t: str) -> bool:
    return bool(s) and set(s) == {t}


def in_pattern_language(name: str, s: str, proper: bool = False) -> bool:
    if name in LINE_NAMES:
        return in_line_language(s, name[-1])
    if name == "A_ur":
        return in_arc_language(s, "a", "c", proper)
    if name == "A_dr":
        return in_arc_language(s, "c", "a", proper)
    if name == "R_cl":
        return in_rectangle_language(s, True, proper)
    if name == "R_cc":
        return in_rectangle_language(s, False, proper)
    raise KeyError(name)
