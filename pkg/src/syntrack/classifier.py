"""Syntactic filtering pipeline: tracker, per-pattern parsers, association and feedback."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .earley import (
    NEG_INF,
    Chart,
    CompiledGrammar,
    NoParse,
    ParseTree,
    SimilarityConfig,
    SoftTerminal,
    init_chart,
    next_terminal_distribution,
    similarity,
    viterbi_parse,
)
from .grammar import augment_nondetection
from .kinematics import MODES, Detection, KinematicState, NoiseConfig, convert_measurement
from .patterns import PATTERN_NAMES, pattern_family, pattern_grammar
from .tracker import (
    ImmConfig,
    imm_step,
    init_imm,
    init_particles_from_detection,
    pf_step,
)

UNCLASSIFIED = "unclassified"
ND = "nd"


@dataclass(frozen=True)
class PipelineConfig:
    patterns: tuple[str, ...] = PATTERN_NAMES
    tracker: str = "imm"                      # "imm" | "pf"
    feedback: bool = False
    feedback_source: str = "best"             # "best" | "mixture"
    soft: bool = True
    sim: SimilarityConfig = field(default_factory=lambda: SimilarityConfig(anchor="low"))
    assoc: SimilarityConfig = field(default_factory=lambda: SimilarityConfig(theta1=300.0, theta2=1.5))
    spawn_threshold: float = 0.01
    associate: bool = True
    prune: float | None = -20.0
    nd_prob: float = 0.05
    mode_floor: float = 1e-4                  # parser-side floor on per-scan mode probabilities
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    imm: ImmConfig = field(default_factory=ImmConfig)
    n_particles: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.tracker not in ("imm", "pf"):
            raise ValueError("tracker must be 'imm' or 'pf'")
        if self.feedback_source not in ("best", "mixture"):
            raise ValueError("feedback_source must be 'best' or 'mixture'")
        unknown = set(self.patterns) - set(PATTERN_NAMES)
        if unknown:
            raise ValueError(f"unknown patterns {sorted(unknown)}")
        if not 0 < self.spawn_threshold < 1:
            raise ValueError("spawn_threshold must lie in (0, 1)")


_COMPILED: dict[tuple[str, float], CompiledGrammar] = {}


def compiled_pattern(name: str, nd_prob: float = 0.05) -> CompiledGrammar:
    key = (name, nd_prob)
    if key not in _COMPILED:
        g = pattern_grammar(name)
        if nd_prob > 0:
            g = augment_nondetection(g, ND, nd_prob)
        _COMPILED[key] = CompiledGrammar(g)
    return _COMPILED[key]


# ---------------------------------------------------------------------------
# traces

@dataclass
class TraceRow:
    k: int
    t: int
    log_prob: dict[str, float]
    posterior: dict[str, float]
    map_label: str
    mode_probs: dict[str, float]
    state: KinematicState | None = None

    @property
    def cov_trace(self) -> float:
        return float(np.trace(self.state.cov[:2, :2])) if self.state is not None else float("nan")


@dataclass
class PatternLikelihoodTrace:
    patterns: tuple[str, ...]
    rows: list[TraceRow] = field(default_factory=list)
    tree: ParseTree | NoParse | None = None

    @property
    def final_map(self) -> str:
        return classify_map(self)

    def posterior(self, pattern: str) -> np.ndarray:
        return np.array([r.posterior.get(pattern, 0.0) for r in self.rows])

    def family_posterior(self, family: str) -> np.ndarray:
        return np.array([sum(p for n, p in r.posterior.items() if pattern_family(n) == family) for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scan", "t", "pattern", "log_prob", "posterior", "map_label", "cov_trace"])
        for r in self.rows:
            for name in self.patterns:
                lp = r.log_prob.get(name, NEG_INF)
                w.writerow([r.k, r.t, name, repr(lp) if math.isfinite(lp) else "-inf",
                            repr(r.posterior.get(name, 0.0)), r.map_label, repr(r.cov_trace)])
        return buf.getvalue()


def normalize_log_probs(log_probs: dict[str, float]) -> dict[str, float]:
    live = {k: v for k, v in log_probs.items() if v > NEG_INF}
    if not live:
        return {k: 0.0 for k in log_probs}
    top = max(live.values())
    w = {k: math.exp(v - top) for k, v in live.items()}
    z = math.fsum(w.values())
    return {k: w.get(k, 0.0) / z for k in log_probs}


def map_label(log_probs: dict[str, float]) -> str:
    live = [(v, k) for k, v in log_probs.items() if v > NEG_INF]
    if not live:
        return UNCLASSIFIED
    best = max(v for v, _ in live)
    return min(k for v, k in live if v == best)


def classify_map(trace) -> str:
    """MAP pattern at the final scan; ``"unclassified"`` when nothing is live."""
    if isinstance(trace, PatternLikelihoodTrace):
        if not trace.rows:
            return UNCLASSIFIED
        return map_label(trace.rows[-1].log_prob)
    return map_label(dict(trace))


# ---------------------------------------------------------------------------
# hypotheses

@dataclass
class TrackHypothesis:
    id: int
    config: PipelineConfig
    charts: dict[str, Chart]
    tracker_state: object
    anchor: KinematicState
    trace: PatternLikelihoodTrace
    rng: np.random.Generator | None = None
    alive: bool = True
    unparseable: bool = False
    detections: list[int] = field(default_factory=list)
    track: list[dict] = field(default_factory=list)

    @property
    def last_t(self) -> int:
        return self.anchor.t

    def predicted_position(self, t: int) -> np.ndarray:
        dt = (t - self.anchor.t) * self.config.noise.T
        return self.anchor.mean[:2] + dt * self.anchor.mean[2:]

    def log_probs(self) -> dict[str, float]:
        out = {}
        for name, ch in self.charts.items():
            out[name] = ch.log_prefix_probability() if ch.k > 0 else 0.0
            if not ch.alive:
                out[name] = NEG_INF
        return out

    def mode_prior(self) -> dict[str, float] | None:
        """Syntactic prior over the next mode from the best chart (or the posterior mixture)."""
        if not self.config.feedback or not self.trace.rows:
            return None
        row = self.trace.rows[-1]
        if row.map_label == UNCLASSIFIED:
            return None
        if self.config.feedback_source == "best":
            return next_terminal_distribution(self.charts[row.map_label], terminals=MODES)
        mix = dict.fromkeys(MODES, 0.0)
        for name, w in row.posterior.items():
            if w > 0:
                for m, p in next_terminal_distribution(self.charts[name], terminals=MODES).items():
                    mix[m] += w * p
        z = math.fsum(mix.values())
        return {m: v / z for m, v in mix.items()}


def new_hypothesis(hid: int, d: Detection, cfg: PipelineConfig, index: int | None = None) -> TrackHypothesis:
    noise = cfg.noise
    rng = np.random.default_rng([cfg.seed, hid])
    if cfg.tracker == "imm":
        state = init_imm(d, noise, cfg.imm)
        anchor = state.combined()
    else:
        state = init_particles_from_detection(d, noise, cfg.n_particles, rng, cfg.imm.init_speed,
                                              cfg.imm.init_speed_sigma)
        anchor = state.combined()
    charts = {name: init_chart(compiled_pattern(name, cfg.nd_prob), anchor, cfg.sim, cfg.prune)
              for name in cfg.patterns}
    h = TrackHypothesis(hid, cfg, charts, state, anchor, PatternLikelihoodTrace(tuple(cfg.patterns)), rng)
    if index is not None:
        h.detections.append(index)
    h.track.append(_track_record(anchor, state_modes(state), None))
    return h


def state_modes(state) -> dict[str, float]:
    return state.mode_probs


def _track_record(st: KinematicState, modes: dict, ess) -> dict:
    rec = {"t": st.t, "x": st.mean.tolist(), "cov": st.cov.ravel().tolist(),
           "mode_probs": [modes[m] for m in MODES]}
    if ess is not None:
        rec["n_eff"] = ess
    return rec


def to_soft_terminal(mode_probs: dict[str, float], kinematic, k: int, soft: bool = True,
                     miss: bool = False, floor: float = 0.0) -> SoftTerminal:
    if miss:
        return SoftTerminal({ND: 1.0}, kinematic, k)
    if not soft:
        best = min(MODES, key=lambda m: (-mode_probs[m], m))
        return SoftTerminal({best: 1.0}, kinematic, k)
    # a particle count of zero is not a zero probability; the floor keeps one
    # unlucky scan from killing every chart
    p = {m: max(mode_probs[m], floor) for m in MODES}
    z = math.fsum(p.values())
    return SoftTerminal({m: p[m] / z for m in MODES}, kinematic, k)


def step(h: TrackHypothesis, d: Detection, index: int | None = None) -> TraceRow:
    """Advance one hypothesis by one detection and record a trace row."""
    if not h.alive:
        raise ValueError("hypothesis is not alive")
    cfg = h.config
    prior = h.mode_prior()
    ess = None
    if cfg.tracker == "imm":
        res = imm_step(h.tracker_state, d, cfg.noise, prior, cfg.imm)
        h.tracker_state = res.bank
        combined, modes = res.combined, res.mode_probs
    else:
        res = pf_step(h.tracker_state, d, cfg.noise, cfg.imm.pi, 0.5, h.rng, prior, cfg.imm.feedback_weight)
        h.tracker_state = res.particles
        combined, modes, ess = res.combined, res.mode_probs, res.ess
    h.anchor = combined
    k = len(h.trace.rows) + 1
    inp = to_soft_terminal(modes, combined, k, cfg.soft, miss=d.is_miss, floor=cfg.mode_floor)
    for ch in h.charts.values():
        if ch.alive:
            ch.advance(inp)
    lp = h.log_probs()
    row = TraceRow(k, d.t, lp, normalize_log_probs(lp), map_label(lp), modes, combined)
    h.trace.rows.append(row)
    if index is not None:
        h.detections.append(index)
    h.track.append(_track_record(combined, modes, ess))
    if row.map_label == UNCLASSIFIED:
        h.unparseable = True
        h.alive = False
    return row


def finalize(h: TrackHypothesis) -> PatternLikelihoodTrace:
    label = classify_map(h.trace)
    if label != UNCLASSIFIED:
        h.trace.tree = viterbi_parse(h.charts[label])
    else:
        h.trace.tree = NoParse("no live pattern")
    return h.trace


# ---------------------------------------------------------------------------
# association

def associate(hypotheses: Sequence[TrackHypothesis], d: Detection, sim: SimilarityConfig,
              spawn_threshold: float = 0.01, noise: NoiseConfig = NoiseConfig()) -> tuple[int | None, float]:
    """Index of the live hypothesis most similar to ``d`` or ``None`` (spawn), plus that similarity.

    A hypothesis that already took a detection at this scan is not eligible.
    Misses carry no position and go to the most recently updated hypothesis.
    """
    live = [(i, h) for i, h in enumerate(hypotheses) if h.alive and h.last_t < d.t]
    if d.is_miss:
        return (live[0][0], 1.0) if live else (None, 0.0)
    z, _ = convert_measurement(d, noise)
    best, best_f = None, -1.0
    for i, h in live:
        dist = float(np.hypot(*(h.predicted_position(d.t) - z[:2])))
        f = similarity(dist, sim)
        if f > best_f:
            best, best_f = i, f
    if best is None or best_f < spawn_threshold:
        return None, max(best_f, 0.0)
    return best, best_f


class SyntacticTracker:
    """Multi-hypothesis syntactic filter fed one detection at a time."""

    def __init__(self, cfg: PipelineConfig = PipelineConfig()):
        self.cfg = cfg
        self.hypotheses: list[TrackHypothesis] = []
        self._n = 0

    def update(self, d: Detection) -> TrackHypothesis | None:
        index = self._n
        self._n += 1
        if not self.hypotheses:
            if d.is_miss:
                return None
            h = new_hypothesis(0, d, self.cfg, index)
            self.hypotheses.append(h)
            return h
        if not self.cfg.associate:
            h = self.hypotheses[0]
            if h.alive:
                step(h, d, index)
            return h
        i, _ = associate(self.hypotheses, d, self.cfg.assoc, self.cfg.spawn_threshold, self.cfg.noise)
        if i is None:
            if d.is_miss:
                return None
            h = new_hypothesis(len(self.hypotheses), d, self.cfg, index)
            self.hypotheses.append(h)
            return h
        h = self.hypotheses[i]
        step(h, d, index)
        return h

    def run(self, detections: Iterable[Detection]) -> list[TrackHypothesis]:
        for d in detections:
            self.update(d)
        for h in self.hypotheses:
            finalize(h)
        return self.hypotheses


def classify_detections(detections, cfg: PipelineConfig = PipelineConfig()) -> list[TrackHypothesis]:
    return SyntacticTracker(cfg).run(detections)


def classify_string(string, patterns: Sequence[str] = PATTERN_NAMES, prune: float | None = None,
                    nd_prob: float = 0.0) -> PatternLikelihoodTrace:
    """Classify a hard terminal string directly (no tracker, no kinematics)."""
    charts = {name: init_chart(compiled_pattern(name, nd_prob), None, SimilarityConfig(enabled=False), prune)
              for name in patterns}
    trace = PatternLikelihoodTrace(tuple(patterns))
    for k, a in enumerate(string, start=1):
        inp = SoftTerminal.hard(a, None, k)
        for ch in charts.values():
            if ch.alive:
                ch.advance(inp)
        lp = {n: (ch.log_prefix_probability() if ch.alive else NEG_INF) for n, ch in charts.items()}
        trace.rows.append(TraceRow(k, k, lp, normalize_log_probs(lp), map_label(lp), {}))
    label = classify_map(trace)
    trace.tree = viterbi_parse(charts[label]) if label != UNCLASSIFIED else NoParse("no live pattern")
    return trace
