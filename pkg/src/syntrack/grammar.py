"""Stochastic context-free grammars: types, validation and branching analysis.

A grammar is the usual four-tuple (nonterminals, terminals, productions,
start).  Symbols are plain strings; whether a symbol is a terminal is decided
by membership in ``Grammar.terminals``.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

PROB_TOL = 1e-9


class GrammarError(ValueError):
    """Raised when an operation needs a valid grammar and did not get one."""


class GrammarSyntaxError(GrammarError):
    def __init__(self, message: str, lineno: int | None = None, path=None):
        self.lineno = lineno
        self.path = path
        self.reason = message
        if path is not None:
            message = f"{path}:{lineno}: {message}" if lineno is not None else f"{path}: {message}"
        elif lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Production:
    lhs: str
    rhs: tuple[str, ...]
    prob: float

    def __post_init__(self):
        object.__setattr__(self, "rhs", tuple(self.rhs))

    def __str__(self):
        return f"{self.lhs} -> {' '.join(self.rhs)} @ {self.prob:.12g}"


class Violation(NamedTuple):
    kind: str  # probability-sum | undeclared-symbol | unreachable | unproductive | epsilon | ...
    symbol: str | None
    message: str


@dataclass(frozen=True)
class Grammar:
    terminals: frozenset[str]
    nonterminals: frozenset[str]
    productions: tuple[Production, ...]
    start: str
    _by_lhs: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "terminals", frozenset(self.terminals))
        object.__setattr__(self, "nonterminals", frozenset(self.nonterminals))
        object.__setattr__(self, "productions", tuple(self.productions))
        by_lhs = defaultdict(list)
        for p in self.productions:
            by_lhs[p.lhs].append(p)
        object.__setattr__(self, "_by_lhs", {k: tuple(v) for k, v in by_lhs.items()})

    @classmethod
    def from_rules(cls, rules: Iterable[tuple[str, str, float]], start: str,
                   terminals: Iterable[str] | None = None) -> "Grammar":
        """Build a grammar from ``(lhs, "space separated rhs", prob)`` triples.

        Nonterminals are the left-hand sides; when ``terminals`` is omitted
        every other rhs symbol is taken to be a terminal.
        """
        prods = [Production(lhs, tuple(rhs.split()), float(p)) for lhs, rhs, p in rules]
        nts = {p.lhs for p in prods} | {start}
        if terminals is None:
            terminals = {s for p in prods for s in p.rhs if s not in nts}
        return cls(frozenset(terminals), frozenset(nts), tuple(prods), start)

    def rules_for(self, lhs: str) -> tuple[Production, ...]:
        return self._by_lhs.get(lhs, ())

    def is_terminal(self, sym: str) -> bool:
        return sym in self.terminals

    @property
    def nonterminal_order(self) -> list[str]:
        """Deterministic nonterminal ordering: start first, then first appearance."""
        order = [self.start]
        for p in self.productions:
            for s in (p.lhs, *p.rhs):
                if s in self.nonterminals and s not in order:
                    order.append(s)
        order.extend(sorted(self.nonterminals - set(order)))
        return order

    def replace(self, productions=None, terminals=None, nonterminals=None, start=None) -> "Grammar":
        return Grammar(
            self.terminals if terminals is None else terminals,
            self.nonterminals if nonterminals is None else nonterminals,
            self.productions if productions is None else productions,
            self.start if start is None else start,
        )

    # -- serialization -------------------------------------------------
    def to_text(self) -> str:
        lines = [
            f"%start {self.start}",
            "%terminals " + " ".join(sorted(self.terminals)),
            "%nonterminals " + " ".join(self.nonterminal_order),
        ]
        lines.extend(str(p) for p in self.productions)
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "terminals": sorted(self.terminals),
            "nonterminals": self.nonterminal_order,
            "productions": [
                {"lhs": p.lhs, "rhs": list(p.rhs), "prob": p.prob} for p in self.productions
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "Grammar":
        try:
            prods = [Production(d["lhs"], tuple(d["rhs"]), float(d["prob"]))
                     for d in doc["productions"]]
            return cls(frozenset(doc["terminals"]), frozenset(doc["nonterminals"]),
                       tuple(prods), doc["start"])
        except (KeyError, TypeError) as exc:
            raise GrammarSyntaxError(f"malformed grammar document: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "Grammar":
        return cls.from_dict(json.loads(text))


def parse_grammar_text(text: str) -> Grammar:
    """Parse the line-oriented grammar format.

    ::

        # comment
        %start S
        %terminals a b c
        %nonterminals S A
        S -> A @ 1.0
        A -> a A c @ 0.5

    ``%terminals``/``%nonterminals`` are optional; undeclared sets are
    inferred the same way as :meth:`Grammar.from_rules`.
    """
    start = None
    terminals = nonterminals = None
    prods = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("%"):
            key, _, rest = line.partition(" ")
            names = rest.split()
            if key == "%start":
                if len(names) != 1:
                    raise GrammarSyntaxError("%start takes exactly one symbol", lineno)
                start = names[0]
            elif key == "%terminals":
                terminals = set(names)
            elif key == "%nonterminals":
                nonterminals = set(names)
            else:
                raise GrammarSyntaxError(f"unknown directive {key!r}", lineno)
            continue
        if "->" not in line:
            raise GrammarSyntaxError("expected 'LHS -> symbols @ prob'", lineno)
        lhs, _, rest = line.partition("->")
        lhs = lhs.strip()
        if not lhs or len(lhs.split()) != 1:
            raise GrammarSyntaxError("left-hand side must be a single symbol", lineno)
        body, sep, prob_txt = rest.rpartition("@")
        if not sep:
            raise GrammarSyntaxError("missing '@ probability'", lineno)
        try:
            prob = float(prob_txt)
        except ValueError:
            raise GrammarSyntaxError(f"bad probability {prob_txt.strip()!r}", lineno) from None
        prods.append(Production(lhs, tuple(body.split()), prob))
    if not prods:
        raise GrammarSyntaxError("grammar has no productions")
    if start is None:
        start = prods[0].lhs
    if nonterminals is None:
        nonterminals = {p.lhs for p in prods} | {start}
    if terminals is None:
        terminals = {s for p in prods for s in p.rhs if s not in nonterminals}
    return Grammar(frozenset(terminals), frozenset(nonterminals), tuple(prods), start)


def load_grammar(path) -> Grammar:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        if str(path).endswith(".json"):
            return Grammar.from_json(text)
        return parse_grammar_text(text)
    except GrammarSyntaxError as exc:
        raise GrammarSyntaxError(exc.reason, exc.lineno, path) from None
    except json.JSONDecodeError as exc:
        raise GrammarSyntaxError(exc.msg, exc.lineno, path) from None


# ---------------------------------------------------------------------------
# validation

def validate(grammar: Grammar) -> list[Violation]:
    """Return every invariant violation; an empty list means the grammar is usable."""
    out: list[Violation] = []
    g = grammar
    for sym in sorted(g.terminals & g.nonterminals):
        out.append(Violation("overlap", sym, f"{sym!r} is both terminal and nonterminal"))
    if g.start not in g.nonterminals:
        out.append(Violation("undeclared-symbol", g.start, f"start symbol {g.start!r} is not a nonterminal"))
    declared = g.terminals | g.nonterminals
    for p in g.productions:
        if p.lhs not in g.nonterminals:
            out.append(Violation("undeclared-symbol", p.lhs, f"lhs {p.lhs!r} is not a declared nonterminal"))
        if not p.rhs:
            out.append(Violation("epsilon", p.lhs, f"empty production for {p.lhs!r}"))
        for s in p.rhs:
            if s not in declared:
                out.append(Violation("undeclared-symbol", s, f"symbol {s!r} in '{p}' is not declared"))
        if not (0.0 < p.prob <= 1.0) or not math.isfinite(p.prob):
            out.append(Violation("probability-range", p.lhs, f"probability of '{p}' outside (0, 1]"))

    for nt in g.nonterminal_order:
        rules = g.rules_for(nt)
        if rules:
            total = math.fsum(p.prob for p in rules)
            if abs(total - 1.0) > PROB_TOL:
                out.append(Violation("probability-sum", nt, f"probabilities for {nt!r} sum to {total:.12g}"))

    # productive: derives some terminal string
    productive: set[str] = set()
    changed = True
    while changed:
        changed = False
        for p in g.productions:
            if p.lhs in productive or not p.rhs:
                continue
            if all(s in g.terminals or s in productive for s in p.rhs):
                productive.add(p.lhs)
                changed = True
    reachable = {g.start}
    stack = [g.start]
    while stack:
        for p in g.rules_for(stack.pop()):
            for s in p.rhs:
                if s in g.nonterminals and s not in reachable:
                    reachable.add(s)
                    stack.append(s)
    for nt in g.nonterminal_order:
        if nt not in reachable:
            out.append(Violation("unreachable", nt, f"{nt!r} is not reachable from {g.start!r}"))
        if nt not in productive:
            out.append(Violation("unproductive", nt, f"{nt!r} derives no terminal string"))
    return out


def require_valid(grammar: Grammar) -> None:
    problems = validate(grammar)
    if problems:
        raise GrammarError("invalid grammar: " + "; ".join(v.message for v in problems))


# ---------------------------------------------------------------------------
# branching-process analysis

@dataclass(frozen=True)
class MeanMatrix:
    """Expected offspring counts: ``matrix[i, j]`` = E[# of symbol j per rewrite of i]."""
    symbols: tuple[str, ...]
    matrix: np.ndarray

    def __getitem__(self, key: tuple[str, str]) -> float:
        a, b = key
        return float(self.matrix[self.symbols.index(a), self.symbols.index(b)])


def mean_matrix(grammar: Grammar) -> MeanMatrix:
    require_valid(grammar)
    order = grammar.nonterminal_order
    idx = {s: i for i, s in enumerate(order)}
    m = np.zeros((len(order), len(order)))
    for p in grammar.productions:
        for s in p.rhs:
            if s in idx:
                m[idx[p.lhs], idx[s]] += p.prob
    m.setflags(write=False)
    return MeanMatrix(tuple(order), m)


class SpectralRadius(NamedTuple):
    radius: float
    converged: bool
    iterations: int


def spectral_radius(m, tol: float = 1e-12, max_iter: int = 10_000) -> SpectralRadius:
    """Dominant eigenvalue of a non-negative square matrix by power iteration.

    Iterates on ``M + I`` so that periodic (e.g. nilpotent or permutation-like)
    structure still converges; the shift is removed from the returned value.
    Convergence is declared when successive Rayleigh-quotient estimates differ
    by less than ``tol``.  Defective matrices (Jordan blocks) converge only
    like 1/k; when the iteration cap is hit the radius comes from a direct
    eigenvalue solve and ``converged`` is False.
    """
    a = np.asarray(m.matrix if isinstance(m, MeanMatrix) else m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("spectral_radius needs a square matrix")
    if np.any(a < 0):
        raise ValueError("spectral_radius expects a non-negative matrix")
    n = a.shape[0]
    if n == 0:
        return SpectralRadius(0.0, True, 0)
    shifted = a + np.eye(n)
    v = np.full(n, 1.0 / math.sqrt(n))
    prev = None
    for it in range(1, max_iter + 1):
        w = shifted @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return SpectralRadius(0.0, True, it)
        est = float(v @ w) - 1.0  # Rayleigh quotient of the shifted matrix, unshifted
        v = w / norm
        if prev is not None and abs(est - prev) < tol:
            return SpectralRadius(max(est, 0.0), True, it)
        prev = est
    return SpectralRadius(float(np.max(np.abs(np.linalg.eigvals(a)))), False, max_iter)


class WellPosedness(NamedTuple):
    subcritical: bool
    radius: float


@lru_cache(maxsize=256)
def is_well_posed(grammar: Grammar) -> WellPosedness:
    rad = spectral_radius(mean_matrix(grammar)).radius
    return WellPosedness(rad < 1.0 - PROB_TOL, rad)


# ---------------------------------------------------------------------------
# non-detection augmentation

def augment_nondetection(grammar: Grammar, nd_symbol: str = "nd", nd_prob: float = 0.05) -> Grammar:
    """Add ``lhs -> nd sigma`` siblings for every ``lhs -> t sigma`` rule.

    Each terminal-initial rule keeps ``1 - nd_prob`` of its mass and hands
    ``nd_prob`` to its non-detection sibling, so per-lhs sums are preserved.
    """
    if nd_symbol in grammar.terminals or nd_symbol in grammar.nonterminals:
        raise GrammarError(f"non-detection symbol {nd_symbol!r} already used by the grammar")
    if not 0.0 <= nd_prob < 1.0:
        raise ValueError("nd_prob must lie in [0, 1)")
    prods = []
    touched = False
    for p in grammar.productions:
        if p.rhs and p.rhs[0] in grammar.terminals and nd_prob > 0:
            touched = True
            prods.append(Production(p.lhs, p.rhs, p.prob * (1.0 - nd_prob)))
            prods.append(Production(p.lhs, (nd_symbol,) + p.rhs[1:], p.prob * nd_prob))
        else:
            prods.append(p)
    if not touched:
        return grammar
    return grammar.replace(productions=tuple(prods), terminals=grammar.terminals | {nd_symbol})
