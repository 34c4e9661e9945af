import numpy as np
import pytest

from syntrack.grammar import Grammar
from syntrack.kinematics import NoiseConfig, heading_vector, mode_noise_cov, observe, transition_matrices
from syntrack.patterns import PATTERN_NAMES, in_arc_language, in_pattern_language, pattern_grammar
from syntrack.simulator import (
    DerivationDepthError,
    ScenarioConfig,
    SupercriticalWarning,
    emit_detections,
    modes_to_trajectory,
    sample_derivation,
    scenario_pincer,
    simulate,
)

QUIET = dict(process_noise=False, measurement_noise=False)


def test_trivial_grammar_always_a():
    g = Grammar.from_rules([("S", "a", 1.0)], start="S")
    assert {sample_derivation(g, s) for s in range(20)} == {("a",)}


@pytest.mark.parametrize("name", PATTERN_NAMES)
def test_samples_stay_in_language(name):
    g = pattern_grammar(name)
    rng = np.random.default_rng(0)
    for _ in range(2000):
        s = "".join(sample_derivation(g, rng))
        assert in_pattern_language(name, s), s


def test_geometric_mean_length():
    g = Grammar.from_rules([("S", "a S", 0.5), ("S", "a", 0.5)], start="S")
    rng = np.random.default_rng(1)
    lengths = [len(sample_derivation(g, rng)) for _ in range(100_000)]
    assert np.mean(lengths) == pytest.approx(2.0, rel=0.05)


def test_supercritical_needs_cap_and_warns():
    g = Grammar.from_rules([("S", "S S", 0.6), ("S", "a", 0.4)], start="S")
    with pytest.raises(ValueError):
        sample_derivation(g, 0, max_depth=None)
    with pytest.warns(SupercriticalWarning), pytest.raises(DerivationDepthError):
        for seed in range(200):
            sample_derivation(g, seed, max_depth=5)


def test_builtins_never_hit_depth_cap():
    rng = np.random.default_rng(2)
    for name in PATTERN_NAMES:
        g = pattern_grammar(name)
        for _ in range(100_000):
            sample_derivation(g, rng, max_depth=1000)


# ---------------------------------------------------------------------------
# trajectories

def test_straight_b_track_is_eastward():
    truth = modes_to_trajectory("bbbb", ScenarioConfig(**QUIET))
    xs = np.array([s.x for s in truth])
    ys = np.array([s.y for s in truth])
    assert np.all(np.diff(xs) > 0)
    assert np.allclose(ys, ys[0])
    assert len(truth) == 40


def test_arc_heading_mirrors():
    truth = modes_to_trajectory("aacc", ScenarioConfig(**QUIET))
    v0, v1 = truth[0].mean[2:], truth[-1].mean[2:]
    assert v0 == pytest.approx(10 * heading_vector("a"))
    assert v1 == pytest.approx([v0[0], -v0[1]])
    ys = np.array([s.y for s in truth])
    # rises then returns: the apex is strictly inside the track
    assert 0 < np.argmax(ys) < len(ys) - 1 and ys.max() > 100


def test_soft_steering_keeps_initial_velocity():
    truth = modes_to_trajectory("ac", ScenarioConfig(steer="soft", **QUIET))
    assert truth[-1].mean[2:] == pytest.approx(truth[0].mean[2:])


def test_increment_covariance_matches_gqg():
    cfg = ScenarioConfig(scans_per_mode=20_001, measurement_noise=False)
    truth = modes_to_trajectory("a", cfg, seed=4)
    F, G = transition_matrices(cfg.T)
    X = np.array([s.mean for s in truth])
    inc = X[1:] - X[:-1] @ F.T
    emp = np.cov(inc.T)
    ref = G @ mode_noise_cov("a", cfg.noise) @ G.T
    scale = np.sqrt(np.outer(np.diag(ref), np.diag(ref)))
    assert np.all(np.abs(emp - ref) <= 0.05 * scale)


def test_empty_modes_rejected():
    with pytest.raises(ValueError):
        modes_to_trajectory("", ScenarioConfig())


# ---------------------------------------------------------------------------
# detections

def test_noiseless_detections_equal_observe():
    cfg = ScenarioConfig(**QUIET)
    truth = modes_to_trajectory("bd", cfg)
    dets = emit_detections(truth, cfg)
    for st, d in zip(truth, dets):
        assert (d.r, d.rdot, d.theta) == observe(st, cfg.platform.at(st.t * cfg.T))


def test_miss_fraction():
    cfg = ScenarioConfig(p_detect=0.8, scans_per_mode=10_000, **QUIET)
    truth = modes_to_trajectory("b", cfg)
    dets = emit_detections(truth, cfg, seed=5)
    assert np.mean([d.is_miss for d in dets]) == pytest.approx(0.2, abs=0.01)


def test_range_residual_std():
    cfg = ScenarioConfig(scans_per_mode=10_000, process_noise=False)
    truth = modes_to_trajectory("b", cfg)
    dets = emit_detections(truth, cfg, seed=6)
    res = [d.r - observe(st, cfg.platform.at(st.t))[0] for st, d in zip(truth, dets)]
    assert np.std(res) == pytest.approx(cfg.noise.sigma_r, rel=0.03)


def test_detections_are_deterministic():
    a = simulate(ScenarioConfig(grammar="R_cc", seed=11))
    b = simulate(ScenarioConfig(grammar="R_cc", seed=11))
    assert a.detections == b.detections and a.modes == b.modes


def test_simulate_respects_length_and_properness():
    for seed in range(30):
        sc = simulate(ScenarioConfig(grammar="A_ur", seed=seed))
        s = "".join(sc.modes)
        assert 3 <= len(s) <= 8 and in_arc_language(s, proper=True)
        assert len(sc.detections) == len(sc.truth) == 10 * len(s)


def test_config_validation_names_field():
    with pytest.raises(ValueError, match="p_detect"):
        ScenarioConfig(p_detect=1.2)
    with pytest.raises(ValueError, match="speed"):
        ScenarioConfig(speed=0)
    with pytest.raises(ValueError, match="max_depth"):
        ScenarioConfig(max_depth=0)


def test_config_round_trip():
    cfg = ScenarioConfig(grammar="R_cl", p_detect=0.9, noise=NoiseConfig(sigma_r=7.0))
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"bogus": 1})


# ---------------------------------------------------------------------------
# pincer

def test_pincer_structure():
    sc = scenario_pincer(ScenarioConfig(seed=3))
    side = sc.sidecar()
    assert side["labels"] == ["A_ur", "A_dr"]
    up, down = side["modes"].split("|")
    assert in_arc_language(up, "a", "c", proper=True)
    assert in_arc_language(down, "c", "a", proper=True)
    ts = [d.t for d in sc.detections]
    assert ts == sorted(ts)
    assert sorted(set(sc.track_ids)) == [0, 1]
    assert len(side["detections"]) == len(sc.detections)


def test_pincer_is_mirror_symmetric_without_noise():
    cfg = ScenarioConfig(seed=1, **QUIET)
    sc = scenario_pincer(cfg)
    mid = cfg.start[1] + cfg.pincer_offset / 2
    ups = [s for s, tid in zip(sc.truth, sc.track_ids) if tid == 0]
    downs = [s for s, tid in zip(sc.truth, sc.track_ids) if tid == 1]
    for u, d in zip(ups, downs):
        assert u.x == pytest.approx(d.x)
        assert u.y - mid == pytest.approx(mid - d.y, abs=1e-9)
