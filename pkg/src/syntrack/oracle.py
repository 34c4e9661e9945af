"""Reference probabilities computed without the Earley machinery.

Two independent routes are provided:

* :func:`inside_oracle` converts the grammar to Chomsky normal form (unit
  chains kept as a closure matrix) and runs bottom-up inside/CYK dynamic
  programming.
* :func:`enumerate_derivations` expands leftmost derivations exhaustively.
"""
from __future__ import annotations

from collections import defaultdict
from functools import lru_cache

import numpy as np

from .grammar import Grammar, GrammarError, require_valid

MAX_ORACLE_LEN = 20


class _CNF:
    """Grammar in CNF: lexical rules, binary rules and a unit closure."""

    def __init__(self, grammar: Grammar):
        require_valid(grammar)
        symbols = list(grammar.nonterminal_order)
        index = {s: i for i, s in enumerate(symbols)}

        def fresh(base):
            name = base
            while name in index or name in grammar.terminals:
                name += "'"
            index[name] = len(symbols)
            symbols.append(name)
            return index[name]

        lexical = defaultdict(list)   # terminal -> [(A, p)]
        binary = []                   # (A, B, C, p)
        unit = []                     # (A, B, p)
        preterm = {}

        def as_nt(sym):
            if sym in grammar.terminals:
                if sym not in preterm:
                    preterm[sym] = fresh(f"<{sym}>")
                    lexical[sym].append((preterm[sym], 1.0))
                return preterm[sym]
            return index[sym]

        for n, p in enumerate(grammar.productions):
            a = index[p.lhs]
            rhs = p.rhs
            if len(rhs) == 1:
                if rhs[0] in grammar.terminals:
                    lexical[rhs[0]].append((a, p.prob))
                else:
                    unit.append((a, index[rhs[0]], p.prob))
                continue
            ids = [as_nt(s) for s in rhs]
            prob = p.prob
            while len(ids) > 2:
                rest = fresh(f"<{p.lhs}#{n}.{len(ids)}>")
                binary.append((a, ids[0], rest, prob))
                a, ids, prob = rest, ids[1:], 1.0
            binary.append((a, ids[0], ids[1], prob))

        n_sym = len(symbols)
        pu = np.zeros((n_sym, n_sym))
        for a, b, p in unit:
            pu[a, b] += p
        try:
            self.unit_closure = np.linalg.inv(np.eye(n_sym) - pu)
        except np.linalg.LinAlgError as exc:
            raise GrammarError("unit-production cycle with probability one") from exc
        self.symbols = symbols
        self.index = index
        self.terminals = grammar.terminals
        self.start = index[grammar.start]
        self.lexical = {}
        for t, entries in lexical.items():
            v = np.zeros(n_sym)
            for a, p in entries:
                v[a] += p
            self.lexical[t] = v
        self.binary = np.zeros((n_sym, n_sym, n_sym))
        for a, b, c, p in binary:
            self.binary[a, b, c] += p


class InsideOracle:
    """Memoized inside probabilities keyed by substring.

    Inside vectors only depend on the substring, so sweeping many strings
    that share substrings (exhaustive enumeration tests) reuses work.
    """

    def __init__(self, grammar: Grammar):
        self.grammar = grammar
        self._cnf = _CNF(grammar)
        self._cache: dict[tuple[str, ...], np.ndarray] = {}

    def _inside(self, s: tuple[str, ...]) -> np.ndarray:
        hit = self._cache.get(s)
        if hit is not None:
            return hit
        cnf = self._cnf
        if len(s) == 1:
            raw = cnf.lexical.get(s[0])
            raw = np.zeros(len(cnf.symbols)) if raw is None else raw
        else:
            raw = np.zeros(len(cnf.symbols))
            for split in range(1, len(s)):
                left = self._inside(s[:split])
                right = self._inside(s[split:])
                if left.any() and right.any():
                    raw += np.einsum("abc,b,c->a", cnf.binary, left, right)
        vec = cnf.unit_closure @ raw
        self._cache[s] = vec
        return vec

    def prob(self, s, symbol: str | None = None) -> float:
        s = tuple(s)
        if not s:
            return 0.0
        if len(s) > MAX_ORACLE_LEN:
            raise ValueError(f"oracle strings are limited to {MAX_ORACLE_LEN} symbols")
        unknown = set(s) - self.grammar.terminals
        if unknown:
            raise ValueError(f"unknown terminals {sorted(unknown)}")
        idx = self._cnf.start if symbol is None else self._cnf.index[symbol]
        return float(self._inside(s)[idx])


@lru_cache(maxsize=64)
def _oracle_for(grammar: Grammar) -> InsideOracle:
    return InsideOracle(grammar)


def inside_oracle(grammar: Grammar, s) -> float:
    """Exact probability that ``grammar`` derives the terminal string ``s``.

    ``s`` may be a string of single-character terminals or any sequence of
    terminal ids.
    """
    return _oracle_for(grammar).prob(s)


def enumerate_derivations(grammar: Grammar, max_len: int, max_steps: int = 25) -> dict[tuple, float]:
    """Sum of leftmost-derivation probabilities for every string up to ``max_len``.

    Derivations longer than ``max_steps`` rewrites are dropped, so the totals
    are exact only when every derivation of a short string is shorter than
    that (true for grammars without unit cycles).
    """
    require_valid(grammar)
    nts = grammar.nonterminals
    totals: dict[tuple, float] = defaultdict(float)
    stack = [((grammar.start,), 1.0, 0)]
    while stack:
        form, prob, steps = stack.pop()
        pos = next((i for i, sym in enumerate(form) if sym in nts), None)
        if pos is None:
            totals[form] += prob
            continue
        if steps >= max_steps:
            continue
        head, tail = form[:pos], form[pos + 1:]
        for rule in grammar.rules_for(form[pos]):
            new = head + rule.rhs + tail
            if len(new) <= max_len:
                stack.append((new, prob * rule.prob, steps + 1))
    return dict(totals)
