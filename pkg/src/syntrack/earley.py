"""Probabilistic Earley parser over soft terminal inputs.

The chart follows Stolcke's formulation: each state carries a forward
(prefix) probability and an inner probability, prediction folds unbounded
left-corner chains through ``R_L = (I - P_L)^-1`` and completion folds unit
chains through ``R_U = (I - P_U)^-1``.  Two extensions are layered on top:

* inputs are distributions over terminals (the mode probabilities of a
  tracker) rather than hard symbols, and each input carries a kinematic
  estimate that is stored as the state's low/high anchor;
* completions are weighted by a spatial similarity between anchors, and
  states far below the best state of their column are pruned.

All probabilities are kept in natural-log space.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .grammar import Grammar, GrammarError, require_valid
from .kinematics import KinematicState
from .patterns import TERMINALS

NEG_INF = float("-inf")
DEFAULT_PRUNE = -20.0
DUMMY_LHS = "_"


def _lse(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def _log(p: float) -> float:
    return math.log(p) if p > 0 else NEG_INF


# ---------------------------------------------------------------------------
# inputs and configuration

@dataclass(frozen=True)
class SoftTerminal:
    dist: Mapping[str, float]
    kinematic: KinematicState | None = None
    scan_index: int = 0

    def __post_init__(self):
        total = math.fsum(self.dist.values())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"terminal distribution sums to {total}, expected 1")
        if any(v < 0 for v in self.dist.values()):
            raise ValueError("terminal probabilities must be non-negative")

    @classmethod
    def hard(cls, terminal: str, kinematic=None, scan_index: int = 0) -> "SoftTerminal":
        return cls({terminal: 1.0}, kinematic, scan_index)


@dataclass(frozen=True)
class SimilarityConfig:
    """Power-exponential similarity ``exp(-(d / theta1) ** theta2)``.

    ``anchor`` picks which anchor of the finished state is compared with the
    pending state's high anchor during completion: ``"high"`` (the default)
    or ``"low"`` (the start of the finished span).
    """
    theta1: float = 50.0
    theta2: float = 1.5
    enabled: bool = True
    anchor: str = "high"

    def __post_init__(self):
        if not self.theta1 > 0:
            raise ValueError("theta1 must be positive")
        if not 0 < self.theta2 <= 2:
            raise ValueError("theta2 must lie in (0, 2]")
        if self.anchor not in ("high", "low"):
            raise ValueError("anchor must be 'high' or 'low'")


NO_SIMILARITY = SimilarityConfig(enabled=False)


def similarity(d: float, cfg: SimilarityConfig = SimilarityConfig()) -> float:
    if d < 0:
        raise ValueError("distance must be non-negative")
    return math.exp(-((d / cfg.theta1) ** cfg.theta2))


def _log_similarity(a: KinematicState | None, b: KinematicState | None, cfg: SimilarityConfig) -> float:
    if not cfg.enabled or a is None or b is None or a is b:
        return 0.0
    d = math.hypot(a.mean[0] - b.mean[0], a.mean[1] - b.mean[1])
    return -((d / cfg.theta1) ** cfg.theta2)


# ---------------------------------------------------------------------------
# closures

class Closures(NamedTuple):
    symbols: tuple[str, ...]
    left_corner: np.ndarray   # R_L
    unit: np.ndarray          # R_U

    def R_L(self, x: str, y: str) -> float:
        return float(self.left_corner[self.symbols.index(x), self.symbols.index(y)])

    def R_U(self, x: str, y: str) -> float:
        return float(self.unit[self.symbols.index(x), self.symbols.index(y)])


def closures(grammar: Grammar) -> Closures:
    """Left-corner and unit-production closures ``(I - P)^-1``."""
    require_valid(grammar)
    order = grammar.nonterminal_order
    idx = {s: i for i, s in enumerate(order)}
    n = len(order)
    pl = np.zeros((n, n))
    pu = np.zeros((n, n))
    for p in grammar.productions:
        first = p.rhs[0]
        if first in idx:
            pl[idx[p.lhs], idx[first]] += p.prob
            if len(p.rhs) == 1:
                pu[idx[p.lhs], idx[first]] += p.prob
    eye = np.eye(n)
    out = []
    for name, m in (("left-corner", pl), ("unit-production", pu)):
        if abs(np.linalg.det(eye - m)) < 1e-12:
            raise GrammarError(f"{name} relation has a probability-one cycle; closure is singular")
        inv = np.linalg.inv(eye - m)
        inv[np.abs(inv) < 1e-15] = 0.0
        out.append(inv)
    return Closures(tuple(order), out[0], out[1])


class _Rule:
    __slots__ = ("index", "lhs", "rhs", "prob", "logp", "is_unit")

    def __init__(self, index, lhs, rhs, prob, nonterminals):
        self.index = index
        self.lhs = lhs
        self.rhs = rhs
        self.prob = prob
        self.logp = _log(prob)
        self.is_unit = len(rhs) == 1 and rhs[0] in nonterminals


class CompiledGrammar:
    """Grammar plus the lookup tables the parser needs; immutable, shareable."""

    def __init__(self, grammar: Grammar):
        self.grammar = grammar
        self.closures = closures(grammar)
        nts = grammar.nonterminals
        self.rules = [_Rule(i, p.lhs, p.rhs, p.prob, nts) for i, p in enumerate(grammar.productions)]
        self.dummy = _Rule(-1, DUMMY_LHS, (grammar.start,), 1.0, nts)
        self.nonterminals = nts
        self.terminals = grammar.terminals
        syms = self.closures.symbols
        idx = {s: i for i, s in enumerate(syms)}
        by_lhs: dict[str, list[_Rule]] = {}
        for r in self.rules:
            by_lhs.setdefault(r.lhs, []).append(r)
        rl, ru = self.closures.left_corner, self.closures.unit
        # Z -> [(rule, log(R_L(Z, lhs) * P(rule)))]
        self.predict_table: dict[str, list[tuple[_Rule, float]]] = {}
        for z in syms:
            row = []
            for r in self.rules:
                c = rl[idx[z], idx[r.lhs]]
                if c > 0:
                    row.append((r, math.log(c) + r.logp))
            self.predict_table[z] = row
        # Y -> [(Z, log R_U(Z, Y))]
        self.unit_into: dict[str, list[tuple[str, float]]] = {}
        for y in syms:
            self.unit_into[y] = [(z, math.log(ru[idx[z], idx[y]])) for z in syms if ru[idx[z], idx[y]] > 0]
        self.rules_by_lhs = by_lhs


# ---------------------------------------------------------------------------
# chart

class ParserState:
    """``end: lhs_start -> rhs[:dot] . rhs[dot:] [low, high, forward, inner]``."""
    __slots__ = ("end", "start", "rule", "dot", "low", "high", "forward", "inner", "origin")

    def __init__(self, end, start, rule, dot, low, high, forward, inner, origin):
        self.end = end
        self.start = start
        self.rule = rule
        self.dot = dot
        self.low = low
        self.high = high
        self.forward = forward
        self.inner = inner
        self.origin = origin

    @property
    def lhs(self) -> str:
        return self.rule.lhs

    @property
    def rhs(self) -> tuple[str, ...]:
        return self.rule.rhs

    @property
    def key(self):
        return (self.start, self.rule.index, self.dot)

    @property
    def finished(self) -> bool:
        return self.dot == len(self.rule.rhs)

    def next_symbol(self):
        rhs = self.rule.rhs
        return rhs[self.dot] if self.dot < len(rhs) else None

    def __repr__(self):
        rhs = list(self.rule.rhs)
        rhs.insert(self.dot, ".")
        return (f"{self.end}: {self.rule.lhs}_{self.start} -> {' '.join(rhs)} "
                f"[fwd={math.exp(self.forward):.4g}, inner={math.exp(self.inner):.4g}]")

    def to_dict(self) -> dict:
        def anchor(a):
            return None if a is None else [float(a.mean[0]), float(a.mean[1])]
        return {
            "end": self.end, "start": self.start, "lhs": self.rule.lhs,
            "rhs": list(self.rule.rhs), "dot": self.dot, "origin": self.origin,
            "forward": math.exp(self.forward), "inner": math.exp(self.inner),
            "log_forward": self.forward, "log_inner": self.inner,
            "low": anchor(self.low), "high": anchor(self.high),
        }


class Chart:
    """Per-scan state sets for one grammar, advanced one input at a time."""

    def __init__(self, compiled: CompiledGrammar, anchor: KinematicState | None = None,
                 sim: SimilarityConfig = NO_SIMILARITY, prune: float | None = None):
        self.compiled = compiled
        self.sim = sim
        self.prune = prune
        self.columns: list[dict] = [{}]
        self.anchors: list[KinematicState | None] = [anchor]
        self.inputs: list[SoftTerminal] = []
        self._pending: list[dict | None] = [None]

    @property
    def grammar(self) -> Grammar:
        return self.compiled.grammar

    @property
    def k(self) -> int:
        """Index of the newest column."""
        return len(self.columns) - 1

    def states(self, k: int) -> list[ParserState]:
        return list(self.columns[k].values())

    def fork(self) -> "Chart":
        """Cheap copy sharing the finished columns (they are never mutated again)."""
        other = Chart.__new__(Chart)
        other.compiled = self.compiled
        other.sim = self.sim
        other.prune = self.prune
        other.columns = list(self.columns)
        other.columns[-1] = dict(self.columns[-1])
        other.anchors = list(self.anchors)
        other.inputs = list(self.inputs)
        other._pending = list(self._pending)
        other._pending[-1] = None
        return other

    @property
    def alive(self) -> bool:
        return bool(self.columns[-1])

    # -- state insertion ---------------------------------------------------
    def _add(self, col: dict, end, start, rule, dot, low, high, fwd, inner, origin):
        key = (start, rule.index, dot)
        st = col.get(key)
        if st is None:
            st = ParserState(end, start, rule, dot, low, high, fwd, inner, origin)
            col[key] = st
            return st, True
        st.forward = _lse(st.forward, fwd)
        st.inner = _lse(st.inner, inner)
        return st, False

    def insert_dummy(self, k: int | None = None) -> ParserState:
        k = self.k if k is None else k
        anchor = self.anchors[k]
        st, _ = self._add(self.columns[k], k, k, self.compiled.dummy, 0, anchor, anchor, 0.0, 0.0, "dummy")
        self._pending[k] = None
        return st

    def _pending_index(self, j: int) -> dict:
        idx = self._pending[j]
        if idx is None:
            idx = {}
            nts = self.compiled.nonterminals
            for st in self.columns[j].values():
                rhs = st.rule.rhs
                if st.dot < len(rhs) and rhs[st.dot] in nts:
                    idx.setdefault(rhs[st.dot], []).append(st)
            self._pending[j] = idx
        return idx

    def _prune_column(self, k: int, origins: tuple[str, ...]) -> None:
        if self.prune is None:
            return
        col = self.columns[k]
        if not col:
            return
        best = max(st.forward for st in col.values())
        cut = best + self.prune
        drop = [key for key, st in col.items() if st.origin in origins and st.forward < cut]
        for key in drop:
            del col[key]
        if drop:
            self._pending[k] = None

    # -- the three operations ------------------------------------------------
    def predict(self, k: int | None = None, spawn: bool = False) -> "Chart":
        k = self.k if k is None else k
        if spawn:
            self.insert_dummy(k)
        col = self.columns[k]
        nts = self.compiled.nonterminals
        mass: dict[str, float] = {}
        for st in col.values():
            if st.origin == "predicted":
                continue
            rhs = st.rule.rhs
            if st.dot < len(rhs) and rhs[st.dot] in nts:
                z = rhs[st.dot]
                mass[z] = _lse(mass.get(z, NEG_INF), st.forward)
        anchor = self.anchors[k]
        table = self.compiled.predict_table
        for z in sorted(mass, key=self.compiled.closures.symbols.index):
            m = mass[z]
            for rule, logc in table[z]:
                self._add(col, k, k, rule, 0, anchor, anchor, m + logc, rule.logp, "predicted")
        self._prune_column(k, ("predicted",))
        self._pending[k] = None
        return self

    def scan(self, inp: SoftTerminal) -> "Chart":
        k = self.k
        src = self.columns[k]
        new: dict = {}
        self.columns.append(new)
        self.anchors.append(inp.kinematic)
        self.inputs.append(inp)
        self._pending.append(None)
        terms = self.compiled.terminals
        logs = {t: _log(p) for t, p in inp.dist.items()}
        for st in src.values():
            rhs = st.rule.rhs
            if st.dot < len(rhs):
                a = rhs[st.dot]
                if a in terms:
                    lp = logs.get(a, NEG_INF)
                    if lp == NEG_INF:
                        continue
                    self._add(new, k + 1, st.start, st.rule, st.dot + 1, st.low, inp.kinematic,
                              st.forward + lp, st.inner + lp, "scanned")
        return self

    def complete(self, k: int | None = None) -> "Chart":
        k = self.k if k is None else k
        col = self.columns[k]
        unit_into = self.compiled.unit_into
        sim = self.sim
        use_low = sim.anchor == "low"
        heap = []
        seq = 0
        for st in col.values():
            if st.rule.index >= 0 and st.dot == len(st.rule.rhs) and not st.rule.is_unit:
                heap.append((-st.start, seq, st))
                seq += 1
        heapq.heapify(heap)
        while heap:
            _, _, fin = heapq.heappop(heap)
            j = fin.start
            pending = self._pending_index(j)
            fin_anchor = fin.low if use_low else fin.high
            for z, log_ru in unit_into.get(fin.rule.lhs, ()):
                for pend in pending.get(z, ()):
                    logf = _log_similarity(pend.high, fin_anchor, sim) if sim.enabled else 0.0
                    w = log_ru + fin.inner + logf
                    st, created = self._add(col, k, pend.start, pend.rule, pend.dot + 1, pend.low,
                                            fin.high, pend.forward + w, pend.inner + w, "completed")
                    if created and st.rule.index >= 0 and st.dot == len(st.rule.rhs) and not st.rule.is_unit:
                        heapq.heappush(heap, (-st.start, seq, st))
                        seq += 1
        self._prune_column(k, ("scanned", "completed"))
        self._pending[k] = None
        return self

    def advance(self, inp: SoftTerminal, predict: bool = True) -> "Chart":
        self.scan(inp)
        self.complete()
        if predict:
            self.predict()
        return self

    # -- readouts --------------------------------------------------------------
    def log_prefix_probability(self, k: int | None = None) -> float:
        k = self.k if k is None else k
        if k == 0:
            return 0.0
        total = NEG_INF
        for st in self.columns[k].values():
            if st.origin == "scanned":
                total = _lse(total, st.forward)
        return total

    def log_sentence_probability(self, k: int | None = None, start: int = 0) -> float:
        k = self.k if k is None else k
        st = self.columns[k].get((start, -1, 1))
        return NEG_INF if st is None else st.inner

    def dump(self) -> list[dict]:
        return [st.to_dict() for col in self.columns for st in col.values()]

    def dump_jsonl(self) -> str:
        return "".join(json.dumps(d, sort_keys=True) + "\n" for d in self.dump())


# ---------------------------------------------------------------------------
# functional surface

def compile_grammar(grammar: Grammar) -> CompiledGrammar:
    return CompiledGrammar(grammar)


def init_chart(grammar, anchor: KinematicState | None = None, sim: SimilarityConfig = NO_SIMILARITY,
               prune: float | None = None) -> Chart:
    compiled = grammar if isinstance(grammar, CompiledGrammar) else CompiledGrammar(grammar)
    chart = Chart(compiled, anchor, sim, prune)
    chart.insert_dummy(0)
    chart.predict(0)
    return chart


def predict(chart: Chart, k: int | None = None, prune_threshold: float | None = None,
            spawn: bool = False) -> Chart:
    if prune_threshold is not None:
        chart.prune = prune_threshold
    return chart.predict(k, spawn=spawn)


def scan(chart: Chart, inp: SoftTerminal) -> Chart:
    return chart.scan(inp)


def complete(chart: Chart, k: int | None = None, sim: SimilarityConfig | None = None,
             prune_threshold: float | None = None) -> Chart:
    if sim is not None:
        chart.sim = sim
    if prune_threshold is not None:
        chart.prune = prune_threshold
    return chart.complete(k)


def prefix_probability(chart: Chart, k: int | None = None) -> float:
    return math.exp(chart.log_prefix_probability(k))


def next_terminal_distribution(chart: Chart, k: int | None = None,
                               terminals: Iterable[str] = TERMINALS) -> dict[str, float]:
    """Predictive distribution of the next terminal given the parsed prefix.

    Sums forward probabilities of states at column ``k`` awaiting each
    terminal and renormalizes over ``terminals``; uniform when nothing
    survives.
    """
    k = chart.k if k is None else k
    terminals = list(terminals)
    mass = dict.fromkeys(terminals, NEG_INF)
    if k < len(chart.columns):
        for st in chart.columns[k].values():
            a = st.next_symbol()
            if a in mass:
                mass[a] = _lse(mass[a], st.forward)
    top = max(mass.values()) if mass else NEG_INF
    if top == NEG_INF:
        return {t: 1.0 / len(terminals) for t in terminals}
    w = {t: math.exp(v - top) for t, v in mass.items()}
    z = math.fsum(w.values())
    return {t: v / z for t, v in w.items()}


def parse(grammar, string, sim: SimilarityConfig = NO_SIMILARITY, prune: float | None = None,
          final: bool = True) -> Chart:
    """Parse a hard terminal sequence; ``final`` skips prediction after the last symbol."""
    chart = init_chart(grammar, None, sim, prune)
    symbols = list(string)
    for i, a in enumerate(symbols):
        last = i == len(symbols) - 1
        chart.advance(SoftTerminal.hard(a, None, i + 1), predict=not (final and last))
    return chart


def sentence_probability(grammar, string) -> float:
    return math.exp(parse(grammar, string).log_sentence_probability())


def parse_soft(grammar, inputs: Iterable[SoftTerminal], sim: SimilarityConfig = NO_SIMILARITY,
               prune: float | None = None, anchor=None) -> Chart:
    chart = init_chart(grammar, anchor, sim, prune)
    for inp in inputs:
        chart.advance(inp)
    return chart


# ---------------------------------------------------------------------------
# Viterbi parse

@dataclass(frozen=True)
class ParseNode:
    symbol: str
    start: int
    end: int
    children: tuple["ParseNode", ...] = ()
    rule: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.rule is None

    def bracket(self) -> str:
        if self.is_leaf:
            return self.symbol
        return f"{self.symbol}({', '.join(c.bracket() for c in self.children)})"

    def leaves(self) -> list[str]:
        if self.is_leaf:
            return [self.symbol]
        return [s for c in self.children for s in c.leaves()]

    def to_text(self, indent: int = 0) -> str:
        pad = "  " * indent
        line = f"{pad}{self.symbol} [{self.start}, {self.end})\n"
        return line + "".join(c.to_text(indent + 1) for c in self.children)

    def to_dict(self) -> dict:
        d = {"symbol": self.symbol, "start": self.start, "end": self.end}
        if not self.is_leaf:
            d["rule"] = self.rule
            d["children"] = [c.to_dict() for c in self.children]
        return d


@dataclass(frozen=True)
class ParseTree:
    root: ParseNode
    log_prob: float

    @property
    def prob(self) -> float:
        return math.exp(self.log_prob)

    def bracket(self) -> str:
        return self.root.bracket()

    def to_text(self) -> str:
        return self.root.to_text()

    def to_dict(self) -> dict:
        return {"log_prob": self.log_prob, "tree": self.root.to_dict()}

    def __bool__(self) -> bool:
        return True


@dataclass(frozen=True)
class NoParse:
    reason: str

    def __bool__(self) -> bool:
        return False

    def to_dict(self) -> dict:
        return {"log_prob": None, "tree": None, "reason": self.reason}


class _VState:
    __slots__ = ("start", "rule", "dot", "low", "high", "fwd", "inner", "bp")

    def __init__(self, start, rule, dot, low, high, fwd, inner, bp):
        self.start = start
        self.rule = rule
        self.dot = dot
        self.low = low
        self.high = high
        self.fwd = fwd
        self.inner = inner
        self.bp = bp


def _v_relax(col, key, start, rule, dot, low, high, fwd, inner, bp):
    """Insert or improve a Viterbi state; returns it when it changed."""
    st = col.get(key)
    if st is None:
        st = _VState(start, rule, dot, low, high, fwd, inner, bp)
        col[key] = st
        return st
    if inner > st.inner:
        st.inner, st.fwd, st.bp, st.low, st.high = inner, max(fwd, st.fwd), bp, low, high
        return st
    if fwd > st.fwd:
        st.fwd = fwd
    return None


def viterbi_parse(chart: Chart) -> ParseTree | NoParse:
    """Most probable parse of the inputs consumed by ``chart``.

    Replays the chart's inputs with max-product recursions and explicit
    backpointers (no closures: unit and left-corner chains are expanded
    state by state).  Ties keep the earliest rule in grammar order.
    """
    cg = chart.compiled
    nts = cg.nonterminals
    sim = chart.sim
    use_low = sim.anchor == "low"
    prune = chart.prune
    anchors = chart.anchors
    cols: list[dict] = [{}]
    dummy = cg.dummy
    cols[0][(0, -1, 0)] = _VState(0, dummy, 0, anchors[0], anchors[0], 0.0, 0.0, None)

    def predict_v(k):
        col = cols[k]
        anchor = anchors[k]
        work = [st for st in col.values()]
        while work:
            st = work.pop(0)
            rhs = st.rule.rhs
            if st.dot >= len(rhs) or rhs[st.dot] not in nts:
                continue
            for rule in cg.rules_by_lhs.get(rhs[st.dot], ()):
                new = _v_relax(col, (k, rule.index, 0), k, rule, 0, anchor, anchor,
                               st.fwd + rule.logp, rule.logp, None)
                if new is not None:
                    work.append(new)

    def complete_v(k):
        col = cols[k]
        heap = []
        seq = 0
        for key, st in col.items():
            if st.dot == len(st.rule.rhs) and st.rule.index >= 0:
                heap.append((-st.start, seq, key))
                seq += 1
        heapq.heapify(heap)
        while heap:
            _, _, fkey = heapq.heappop(heap)
            fin = col[fkey]
            j = fin.start
            y = fin.rule.lhs
            fin_anchor = fin.low if use_low else fin.high
            for pkey, pend in list(cols[j].items()):
                rhs = pend.rule.rhs
                if pend.dot >= len(rhs) or rhs[pend.dot] != y:
                    continue
                logf = _log_similarity(pend.high, fin_anchor, sim) if sim.enabled else 0.0
                w = fin.inner + logf
                key = (pend.start, pend.rule.index, pend.dot + 1)
                new = _v_relax(col, key, pend.start, pend.rule, pend.dot + 1, pend.low, fin.high,
                               pend.fwd + w, pend.inner + w, ("comp", j, pkey, fkey))
                if new is not None and new.rule.index >= 0 and new.dot == len(new.rule.rhs):
                    heapq.heappush(heap, (-new.start, seq, key))
                    seq += 1

    def prune_v(k):
        if prune is None or not cols[k]:
            return
        best = max(st.fwd for st in cols[k].values())
        # finished states may already be referenced by completions in this column
        for key in [key for key, st in cols[k].items()
                    if st.fwd < best + prune and st.rule.index >= 0 and st.dot < len(st.rule.rhs)]:
            del cols[k][key]

    predict_v(0)
    prune_v(0)
    for k, inp in enumerate(chart.inputs):
        new: dict = {}
        cols.append(new)
        logs = {t: _log(p) for t, p in inp.dist.items()}
        for pkey, st in cols[k].items():
            rhs = st.rule.rhs
            if st.dot < len(rhs) and rhs[st.dot] in cg.terminals:
                lp = logs.get(rhs[st.dot], NEG_INF)
                if lp == NEG_INF:
                    continue
                key = (st.start, st.rule.index, st.dot + 1)
                new[key] = _VState(st.start, st.rule, st.dot + 1, st.low, inp.kinematic,
                                   st.fwd + lp, st.inner + lp, ("scan", pkey))
        complete_v(k + 1)
        prune_v(k + 1)
        if k + 1 < len(chart.inputs):
            predict_v(k + 1)
            prune_v(k + 1)

    n = len(chart.inputs)
    top = cols[n].get((0, -1, 1))
    if top is None:
        return NoParse("no complete parse of the input")

    def build(k, key) -> ParseNode:
        st = cols[k][key]
        children: list[ParseNode] = []
        cur_k, cur = k, st
        while cur.bp is not None:
            if cur.bp[0] == "scan":
                sym = cur.rule.rhs[cur.dot - 1]
                children.append(ParseNode(sym, cur_k - 1, cur_k))
                cur_k, cur = cur_k - 1, cols[cur_k - 1][cur.bp[1]]
            else:
                _, j, pkey, fkey = cur.bp
                children.append(build(cur_k, fkey))
                cur_k, cur = j, cols[j][pkey]
        children.reverse()
        return ParseNode(st.rule.lhs, st.start, k, tuple(children), st.rule.index)

    root = build(n, (0, -1, 1)).children[0]
    return ParseTree(root, top.inner)
