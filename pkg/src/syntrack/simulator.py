"""Ground-truth trajectories from sampled grammar strings and noisy GMTI detections."""
from __future__ import annotations

import bisect
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .grammar import Grammar, is_well_posed, require_valid
from .kinematics import (
    Detection,
    KinematicState,
    NoiseConfig,
    Platform,
    heading_vector,
    mode_noise_cov,
    observe,
    transition_matrices,
)
from .patterns import PATTERN_NAMES, in_pattern_language, pattern_grammar


class DerivationDepthError(RuntimeError):
    """Raised when a sampled derivation tree exceeds its depth cap."""


class SupercriticalWarning(UserWarning):
    pass


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@lru_cache(maxsize=256)
def _sampling_tables(grammar: Grammar):
    """Validated per-lhs rule lists with cumulative probabilities, plus the subcriticality verdict."""
    require_valid(grammar)
    tables = {}
    for nt in grammar.nonterminals:
        rules = grammar.rules_for(nt)
        cum = np.cumsum([r.prob for r in rules])
        tables[nt] = (rules, (cum / cum[-1]).tolist())
    return tables, is_well_posed(grammar).subcritical


def sample_derivation(grammar: Grammar, seed=None, max_depth: int | None = 1000) -> tuple[str, ...]:
    """Leftmost stochastic derivation; returns the terminal yield.

    Depth is the height of the derivation tree.  Grammars that are not
    subcritical need a finite ``max_depth`` and trigger a warning.
    """
    if max_depth is not None and max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    tables, subcritical = _sampling_tables(grammar)
    if not subcritical:
        if max_depth is None:
            raise ValueError("grammar is not subcritical; a finite max_depth is required")
        warnings.warn("sampling from a grammar that is not subcritical", SupercriticalWarning, stacklevel=2)
    rng = _rng(seed)
    out: list[str] = []
    stack = [(grammar.start, 0)]
    while stack:
        sym, depth = stack.pop()
        if sym in grammar.terminals:
            out.append(sym)
            continue
        if max_depth is not None and depth >= max_depth:
            raise DerivationDepthError(f"derivation exceeded depth {max_depth}")
        rules, cum = tables[sym]
        rule = rules[min(bisect.bisect_right(cum, rng.random()), len(rules) - 1)]
        stack.extend((s, depth + 1) for s in reversed(rule.rhs))
    return tuple(out)


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario parameters.

    The default platform flies east at 100 m/s and 3 km altitude on a track
    1 km north of the target start, beginning 3 km to the west.  The line of
    sight then sweeps through a wide range of azimuths, so range rate
    separates all eight headings for most of the scenario.
    """
    grammar: str = "A_ur"
    speed: float = 10.0
    T: float = 1.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    p_detect: float = 1.0
    platform: Platform = field(default_factory=lambda: Platform(-3000.0, 1000.0, 3000.0, 100.0, 0.0))
    start: tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    max_depth: int = 1000
    scans_per_mode: int = 10
    steer: str = "hard"
    process_noise: bool = True
    measurement_noise: bool = True
    min_terminals: int = 3
    max_terminals: int = 8
    proper: bool = True
    max_tries: int = 10000
    pincer_offset: float = 2000.0

    def __post_init__(self):
        if not (0.0 < self.p_detect <= 1.0):
            raise ValueError(f"p_detect must lie in (0, 1], got {self.p_detect}")
        if not self.speed > 0:
            raise ValueError(f"speed must be positive, got {self.speed}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be at least 1, got {self.max_depth}")
        if self.scans_per_mode < 1:
            raise ValueError(f"scans_per_mode must be at least 1, got {self.scans_per_mode}")
        if self.steer not in ("hard", "soft"):
            raise ValueError(f"steer must be 'hard' or 'soft', got {self.steer!r}")
        if self.min_terminals < 1 or self.max_terminals < self.min_terminals:
            raise ValueError("need 1 <= min_terminals <= max_terminals")
        if abs(self.noise.T - self.T) > 1e-12:
            object.__setattr__(self, "noise", replace(self.noise, T=self.T))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start"] = list(self.start)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "noise" in d and isinstance(d["noise"], dict):
            d["noise"] = NoiseConfig(**d["noise"])
        if "platform" in d and isinstance(d["platform"], dict):
            d["platform"] = Platform(**d["platform"])
        if "start" in d:
            d["start"] = tuple(d["start"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scenario fields {sorted(unknown)}")
        return cls(**d)


def scan_modes(modes, scans_per_mode: int) -> list[str]:
    return [m for m in modes for _ in range(scans_per_mode)]


def modes_to_trajectory(modes, cfg: ScenarioConfig, seed=None) -> list[KinematicState]:
    """True states, one per scan; each terminal spans ``cfg.scans_per_mode`` scans.

    With ``steer="hard"`` the velocity is rotated onto the mode heading at
    the speed ``cfg.speed`` whenever a new terminal starts; process noise then
    acts as mode-shaped acceleration noise in between.
    """
    modes = list(modes)
    if not modes:
        raise ValueError("mode string is empty")
    rng = _rng(cfg.seed if seed is None else seed)
    F, G = transition_matrices(cfg.T)
    per_scan = scan_modes(modes, cfg.scans_per_mode)
    x = np.array([cfg.start[0], cfg.start[1], *(cfg.speed * heading_vector(modes[0]))])
    chol = {m: np.linalg.cholesky(mode_noise_cov(m, cfg.noise)) for m in set(modes)}
    out = [KinematicState(x.copy(), t=0)]
    for s in range(1, len(per_scan)):
        m = per_scan[s]
        if cfg.steer == "hard" and s % cfg.scans_per_mode == 0:
            x[2:] = cfg.speed * heading_vector(m)
        v = chol[m] @ rng.standard_normal(2) if cfg.process_noise else np.zeros(2)
        x = F @ x + G @ v
        out.append(KinematicState(x.copy(), t=s))
    return out


def _wrap(theta: float) -> float:
    theta = math.remainder(theta, 2 * math.pi)
    return math.pi if theta <= -math.pi else theta


def emit_detections(truth, cfg: ScenarioConfig, seed=None) -> list[Detection]:
    rng = _rng(cfg.seed if seed is None else seed)
    n = cfg.noise
    out = []
    for st in truth:
        plat = cfg.platform.at(st.t * cfg.T)
        noise = rng.standard_normal(3)
        missed = rng.random() >= cfg.p_detect
        if missed:
            out.append(Detection.miss(plat, st.t))
            continue
        r, rdot, theta = observe(st, plat)
        if cfg.measurement_noise:
            r += n.sigma_r * noise[0]
            rdot += n.sigma_rdot * noise[1]
            theta = _wrap(theta + n.sigma_theta * noise[2])
        out.append(Detection(r, rdot, theta, plat, st.t))
    return out


@dataclass(frozen=True)
class Scenario:
    label: str
    modes: tuple[str, ...]
    scan_modes: tuple[str, ...]
    truth: list[KinematicState]
    detections: list[Detection]
    track_ids: list[int]

    def sidecar(self) -> dict:
        return {
            "labels": [self.label] if isinstance(self.label, str) else list(self.label),
            "modes": "".join(self.modes),
            "detections": [
                {"index": i, "track": tid, "t": d.t, "truth": st.to_dict(), "mode": m}
                for i, (d, tid, st, m) in enumerate(zip(self.detections, self.track_ids, self.truth, self.scan_modes))
            ],
        }


def sample_pattern_string(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[str, ...]:
    """Rejection-sample a string of ``cfg.grammar`` within the length bounds."""
    grammar = pattern_grammar(cfg.grammar) if cfg.grammar in PATTERN_NAMES else None
    if grammar is None:
        raise ValueError(f"unknown grammar {cfg.grammar!r}")
    for _ in range(cfg.max_tries):
        s = sample_derivation(grammar, rng, cfg.max_depth)
        if not cfg.min_terminals <= len(s) <= cfg.max_terminals:
            continue
        if cfg.proper and not in_pattern_language(cfg.grammar, "".join(s), proper=True):
            continue
        return s
    raise RuntimeError(f"no acceptable {cfg.grammar} string after {cfg.max_tries} draws")


def simulate(cfg: ScenarioConfig, modes=None) -> Scenario:
    """Single-target scenario; ``modes`` bypasses grammar sampling."""
    rng = np.random.default_rng(cfg.seed)
    modes = tuple(modes) if modes is not None else sample_pattern_string(cfg, rng)
    truth = modes_to_trajectory(modes, cfg, rng)
    dets = emit_detections(truth, cfg, rng)
    per_scan = tuple(scan_modes(modes, cfg.scans_per_mode))
    return Scenario(cfg.grammar, modes, per_scan, truth, dets, [0] * len(dets))


MIRROR = str.maketrans("ac", "ca")


def scenario_pincer(cfg: ScenarioConfig = ScenarioConfig()) -> Scenario:
    """Two mirrored arcs (A_ur above, A_dr below) with their detections interleaved.

    The A_dr string is the A_ur string with ``a`` and ``c`` swapped, started
    ``cfg.pincer_offset`` metres north of the A_ur start.  With the default
    platform track midway between the two starts the scene is mirror
    symmetric, so neither arc sees the easier sensing geometry.
    Detections are sorted by scan; within a scan the order is random.  Track
    identity survives only in ``track_ids`` (the truth sidecar).
    """
    rng = np.random.default_rng(cfg.seed)
    up = sample_pattern_string(replace(cfg, grammar="A_ur"), rng)
    down = tuple("".join(up).translate(MIRROR))
    x0, y0 = cfg.start
    cfgs = [replace(cfg, grammar="A_ur", start=(x0, y0)),
            replace(cfg, grammar="A_dr", start=(x0, y0 + cfg.pincer_offset))]
    streams = []
    for tid, (c, modes) in enumerate(zip(cfgs, (up, down))):
        truth = modes_to_trajectory(modes, c, rng)
        dets = emit_detections(truth, c, rng)
        per_scan = scan_modes(modes, c.scans_per_mode)
        streams.append([(d.t, tid, d, st, m) for d, st, m in zip(dets, truth, per_scan)])
    merged = []
    n = max(len(s) for s in streams)
    for t in range(n):
        group = [s[t] for s in streams if t < len(s)]
        order = rng.permutation(len(group))
        merged.extend(group[i] for i in order)
    return Scenario(
        ("A_ur", "A_dr"),
        up + ("|",) + down,
        tuple(m for *_, m in merged),
        [st for *_, st, _ in merged],
        [d for _, _, d, _, _ in merged],
        [tid for _, tid, *_ in merged],
    )
