"""Probabilistic Earley parser against the inside oracle, brute force and the golden chart."""
import itertools
import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chart_golden import mismatches
from syntrack.earley import (
    SimilarityConfig,
    SoftTerminal,
    closures,
    init_chart,
    next_terminal_distribution,
    parse,
    parse_soft,
    prefix_probability,
    similarity,
    viterbi_parse,
)
from syntrack.grammar import Grammar, GrammarError
from syntrack.kinematics import KinematicState
from syntrack.oracle import enumerate_derivations, inside_oracle
from syntrack.patterns import ARC_PROB, PATTERN_NAMES, TERMINALS, line_grammar, pattern_grammar

ARC = pattern_grammar("A_ur")


# ---------------------------------------------------------------------------
# golden chart

def test_table1_golden_chart():
    assert mismatches(parse(line_grammar(), "bb", final=True).dump()) == []


def test_table1_column0_predictions():
    chart = init_chart(line_grammar())
    preds = {(s.lhs, s.rhs) for s in chart.states(0) if s.origin == "predicted"}
    expect = {("S", (f"L_{u}",)) for u in TERMINALS}
    expect |= {(f"L_{u}", (u, f"L_{u}")) for u in TERMINALS} | {(f"L_{u}", (u,)) for u in TERMINALS}
    assert preds == expect


def test_column1_completion_and_prediction():
    chart = init_chart(line_grammar()).advance(SoftTerminal.hard("b"))
    col = {(s.start, s.lhs, s.rhs, s.dot, s.origin) for s in chart.states(1)}
    assert (0, "S", ("L_b",), 1, "completed") in col
    assert (1, "L_b", ("b", "L_b"), 0, "predicted") in col
    assert (1, "L_b", ("b",), 0, "predicted") in col


# ---------------------------------------------------------------------------
# closures

def test_closures_identity_without_chains():
    g = Grammar.from_rules([("S", "a S", 0.5), ("S", "a", 0.5)], start="S")
    c = closures(g)
    assert np.allclose(c.left_corner, np.eye(1)) and np.allclose(c.unit, np.eye(1))


def test_left_corner_chain():
    g = Grammar.from_rules([("S", "A x", 0.5), ("S", "y", 0.5), ("A", "B z", 1.0), ("B", "b", 1.0)], start="S")
    assert closures(g).R_L("S", "B") == pytest.approx(0.5)


def test_unit_closure_geometric_series():
    g = Grammar.from_rules([("S", "A", 0.5), ("S", "s", 0.5), ("A", "S", 0.4), ("A", "a", 0.6)], start="S")
    c = closures(g)
    # R_U(S, S) = 1 / (1 - 0.5 * 0.4)
    assert c.R_U("S", "S") == pytest.approx(1 / 0.8)
    assert c.R_U("S", "A") == pytest.approx(0.5 / 0.8)


def test_singular_unit_closure_rejected():
    g = Grammar.from_rules([("S", "A", 0.5), ("S", "s", 0.5), ("A", "S", 1.0)], start="S")
    c = closures(g)  # loop mass 0.5 < 1, still fine
    assert c.R_U("S", "S") == pytest.approx(2.0)
    bad = Grammar.from_rules([("S", "A", 1.0), ("A", "S", 0.5), ("A", "B", 0.5), ("B", "A", 1.0)], start="S")
    with pytest.raises(GrammarError):
        closures(bad)


# ---------------------------------------------------------------------------
# the three operations

def test_arc_prediction_forward_is_closure_times_rule():
    chart = init_chart(ARC)
    c = closures(ARC)
    st_ = next(s for s in chart.states(0) if s.lhs == "A_ur" and s.rhs == ("a", "A_ur", "c"))
    assert math.exp(st_.forward) == pytest.approx(c.R_L("S", "A_ur") * ARC_PROB)


def test_unreachable_rules_never_predicted():
    g = Grammar.from_rules([("S", "a", 1.0), ("B", "b", 1.0)], start="S")
    g_ok = Grammar.from_rules([("S", "a", 1.0)], start="S")
    # an unreachable rule fails validation, so build the chart from the reachable part only
    with pytest.raises(GrammarError):
        init_chart(g)
    assert {s.lhs for s in init_chart(g_ok).states(0)} == {"_", "S"}


def test_two_antecedents_sum_forward():
    g = Grammar.from_rules([("S", "x Y", 0.5), ("S", "x x Y", 0.5), ("Y", "y", 1.0)], start="S",
                           terminals=["x", "y"])
    chart = init_chart(g).advance(SoftTerminal.hard("x"))
    y = next(s for s in chart.states(1) if s.lhs == "Y")
    # only S -> x . Y awaits Y at column 1; S -> x . x Y awaits a terminal
    assert math.exp(y.forward) == pytest.approx(0.5)
    g2 = Grammar.from_rules([("S", "x Y", 0.3), ("S", "X Y", 0.7), ("X", "x", 1.0), ("Y", "y", 1.0)], start="S",
                            terminals=["x", "y"])
    chart = init_chart(g2).advance(SoftTerminal.hard("x"))
    y = [s for s in chart.states(1) if s.lhs == "Y"]
    assert len(y) == 1
    assert math.exp(y[0].forward) == pytest.approx(0.3 + 0.7)


def test_scan_multiplies_by_input_probability():
    g = Grammar.from_rules([("S", "b", 0.3), ("S", "a", 0.7)], start="S")
    chart = init_chart(g)
    chart.scan(SoftTerminal({"a": 0.5, "b": 0.5}))
    got = {s.rhs: math.exp(s.forward) for s in chart.states(1)}
    assert got[("b",)] == pytest.approx(0.15)
    chart = init_chart(g).scan(SoftTerminal({"a": 1.0}))
    assert {s.rhs for s in chart.states(1)} == {("a",)}


def test_soft_terminal_validation():
    with pytest.raises(ValueError):
        SoftTerminal({"a": 0.5})
    with pytest.raises(ValueError):
        SoftTerminal({"a": 1.5, "b": -0.5})


def test_unit_chain_completion_matches_enumeration():
    g = Grammar.from_rules([("S", "A", 0.4), ("S", "a S", 0.6), ("A", "a", 1.0)], start="S")
    totals = enumerate_derivations(g, 5)
    for s, p in totals.items():
        assert math.exp(parse(g, s).log_sentence_probability()) == pytest.approx(p, rel=1e-12)


# ---------------------------------------------------------------------------
# similarity

def test_similarity_values():
    cfg = SimilarityConfig(theta1=40.0, theta2=1.5)
    assert similarity(0.0, cfg) == 1.0
    for t2 in (0.5, 1.0, 2.0):
        assert similarity(40.0, SimilarityConfig(40.0, t2)) == pytest.approx(math.exp(-1))
    assert similarity(80.0, SimilarityConfig(40.0, 2.0)) == pytest.approx(math.exp(-4))
    with pytest.raises(ValueError):
        SimilarityConfig(theta2=2.5)
    with pytest.raises(ValueError):
        similarity(-1.0)


def _anchored(dist_xy, grammar=ARC, string="ac", sim=SimilarityConfig()):
    def ks(x, y):
        return KinematicState(np.array([x, y, 0.0, 0.0]), t=0)
    chart = init_chart(grammar, ks(0, 0), sim)
    for k, (a, xy) in enumerate(zip(string, dist_xy), start=1):
        chart.advance(SoftTerminal.hard(a, ks(*xy), k))
    return chart


def test_identical_anchors_give_plain_completion():
    chart = _anchored([(0, 0), (0, 0)])
    assert math.exp(chart.log_sentence_probability()) == pytest.approx(inside_oracle(ARC, "ac"))


def test_distant_anchors_discount_completion():
    near = _anchored([(10, 0), (20, 0)])
    far = _anchored([(500, 0), (1000, 0)])
    assert far.log_sentence_probability() < near.log_sentence_probability() <= math.log(inside_oracle(ARC, "ac"))


# ---------------------------------------------------------------------------
# prefix and sentence probabilities

def test_empty_prefix_is_one():
    assert prefix_probability(init_chart(ARC), 0) == 1.0


def test_zero_support_prefix():
    chart = parse(ARC, "ca")
    assert not chart.alive
    assert prefix_probability(chart) == 0.0


def test_complete_sentence_prefix_bounds_inside():
    chart = parse(ARC, "ac")
    assert prefix_probability(chart) >= inside_oracle(ARC, "ac") - 1e-15
    assert math.exp(chart.log_sentence_probability()) == pytest.approx(inside_oracle(ARC, "ac"), rel=1e-12)


def test_prefix_probability_closed_form():
    # S -> a S (0.3) | b (0.7): P(prefix a^n) = 0.3^n, P(prefix a^n b) = 0.3^n 0.7
    g = Grammar.from_rules([("S", "a S", 0.3), ("S", "b", 0.7)], start="S")
    for prefix, expected in [("a", 0.3), ("aa", 0.09), ("ab", 0.21), ("aab", 0.063), ("ba", 0.0)]:
        assert prefix_probability(parse(g, prefix)) == pytest.approx(expected, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("name", PATTERN_NAMES)
def test_sentence_probability_matches_oracle(name):
    g = pattern_grammar(name)
    terms = sorted(g.terminals)[:4]
    for n in range(1, 5):
        for s in itertools.product(terms, repeat=n):
            got = math.exp(parse(g, s).log_sentence_probability())
            assert got == pytest.approx(inside_oracle(g, s), rel=1e-9, abs=1e-300)


def test_soft_input_consistency():
    g = ARC
    rng = np.random.default_rng(5)
    for n in range(1, 5):
        dists = [dict(zip("abc", rng.dirichlet(np.ones(3)))) for _ in range(n)]
        chart = parse_soft(g, [SoftTerminal(d, None, k) for k, d in enumerate(dists, 1)])
        expected = 0.0
        for s in itertools.product("abc", repeat=n):
            expected += math.prod(d[a] for d, a in zip(dists, s)) * inside_oracle(g, s)
        assert math.exp(chart.log_sentence_probability()) == pytest.approx(expected, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.text(alphabet="abc", min_size=1, max_size=10))
def test_prefix_probability_non_increasing(s):
    chart = parse(ARC, s, final=False)
    logs = [chart.log_prefix_probability(k) for k in range(len(s) + 1)]
    assert all(b <= a + 1e-12 for a, b in zip(logs, logs[1:]))


def test_long_input_does_not_underflow():
    # 200 scans at 5e-4 per scan is about 1e-660: zero in linear space
    inputs = [SoftTerminal({"b": 1e-3, "a": 1 - 1e-3}, None, k) for k in range(1, 201)]
    chart = parse_soft(pattern_grammar("L_b"), inputs)
    lp = chart.log_sentence_probability()
    assert math.isfinite(lp) and lp == pytest.approx(200 * math.log(0.5e-3))


def test_chart_determinism():
    a = parse(ARC, "abacbc", prune=-10).dump_jsonl()
    b = parse(ARC, "abacbc", prune=-10).dump_jsonl()
    assert a == b


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3), min_size=1, max_size=8),
       st.floats(-30, -1), st.floats(-30, -1))
def test_pruning_never_adds_mass(rows, t1, t2):
    lenient, strict = min(t1, t2), max(t1, t2)
    inputs = [SoftTerminal(dict(zip("abc", np.array(r) / sum(r))), None, k) for k, r in enumerate(rows, 1)]
    a = parse_soft(ARC, inputs, prune=lenient)
    b = parse_soft(ARC, inputs, prune=strict)
    none = parse_soft(ARC, inputs, prune=None)
    for k in range(len(inputs) + 1):
        ref = {key: s.forward for key, s in none.columns[k].items()}
        for chart in (a, b):
            for key, s in chart.columns[k].items():
                assert s.forward <= ref[key] + 1e-9


# ---------------------------------------------------------------------------
# next-terminal distribution

def test_next_terminal_line_b():
    chart = parse(pattern_grammar("L_b"), "b", final=False)
    dist = next_terminal_distribution(chart)
    assert dist["b"] == pytest.approx(1.0)


def test_next_terminal_arc_support():
    chart = parse(ARC, "aa", final=False)
    dist = next_terminal_distribution(chart)
    assert {t for t, p in dist.items() if p > 0} == {"a", "b", "c"}
    assert sum(dist.values()) == pytest.approx(1.0)


def test_next_terminal_matches_inside_sums():
    # P(prefix w) = sum of inside probabilities of all completions of w; truncating
    # the completions at a length L gives lower bounds that rise to the limit
    chart = parse(ARC, "aa", final=False)
    dist = next_terminal_distribution(chart)
    prefix = {t: prefix_probability(parse(ARC, "aa" + t, final=False)) for t in "abc"}
    z = sum(prefix.values())
    prev = dict.fromkeys("abc", 0.0)
    for L in (6, 9, 12):
        for t in "abc":
            lower = sum(inside_oracle(ARC, ("a", "a", t) + r)
                        for n in range(L - 2) for r in itertools.product("abc", repeat=n))
            assert prev[t] - 1e-15 <= lower <= prefix[t] + 1e-15
            prev[t] = lower
    for t in "abc":
        assert prev[t] == pytest.approx(prefix[t], rel=0.1)
        assert dist[t] == pytest.approx(prefix[t] / z, rel=1e-12)


def test_next_terminal_dead_chart_uniform():
    dist = next_terminal_distribution(parse(ARC, "ca"))
    assert dist == {t: 0.125 for t in TERMINALS}


# ---------------------------------------------------------------------------
# Viterbi

def test_viterbi_unique_tree():
    tree = viterbi_parse(parse(ARC, "aacc"))
    assert tree.bracket() == "S(A_ur(a, A_ur(a, c), c))"
    assert tree.prob == pytest.approx(inside_oracle(ARC, "aacc"))


def test_viterbi_single_rule():
    assert viterbi_parse(parse(ARC, "b")).bracket() == "S(A_ur(b))"


def _all_trees(g: Grammar, s: tuple):
    """Every parse tree of ``s`` as (bracket, prob); brute force over spans."""
    @lru_cache(maxsize=None)
    def trees(sym, i, j, depth):
        if sym in g.terminals:
            return [(sym, 1.0)] if j == i + 1 and s[i] == sym else []
        if depth == 0:
            return []
        out = []
        for r in g.rules_for(sym):
            for kids, p in _splits(r.rhs, i, j, depth):
                out.append((f"{sym}({', '.join(kids)})", r.prob * p))
        return out

    def _splits(rhs, i, j, depth):
        if not rhs:
            return [((), 1.0)] if i == j else []
        out = []
        for m in range(i + 1, j - len(rhs) + 2):
            for head, p in trees(rhs[0], i, m, depth - 1):
                for tail, q in _splits(rhs[1:], m, j, depth):
                    out.append(((head,) + tail, p * q))
        return out

    return trees(g.start, 0, len(s), 2 * len(s) + 2)


def test_viterbi_ambiguous_matches_brute_force():
    g = Grammar.from_rules([("A", "b A", 0.3), ("A", "A b", 0.2), ("A", "b", 0.5)], start="A")
    for n in range(1, 6):
        s = ("b",) * n
        trees = _all_trees(g, s)
        assert sum(p for _, p in trees) == pytest.approx(inside_oracle(g, s), rel=1e-12)
        best = max(trees, key=lambda t: t[1])
        tree = viterbi_parse(parse(g, s))
        assert tree.prob == pytest.approx(best[1], rel=1e-12)
        assert tree.bracket() == best[0]


@pytest.mark.parametrize("name", ["A_ur", "R_cl"])
def test_viterbi_max_over_brute_force(name):
    g = pattern_grammar(name)
    for s in (["abacbc", "aabcc"] if name == "A_ur" else ["bdfh", "bbddffhh", "dhh"]):
        best = max(p for _, p in _all_trees(g, tuple(s)))
        assert viterbi_parse(parse(g, s)).prob == pytest.approx(best, rel=1e-12)


def test_viterbi_no_parse():
    res = viterbi_parse(parse(ARC, "ca"))
    assert not res and res.to_dict()["tree"] is None
