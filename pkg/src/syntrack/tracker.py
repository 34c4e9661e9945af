"""Multiple-model trackers: IMM with extended Kalman updates and a particle filter.

Both filters run one model per heading mode.  Each mode model is the
constant-velocity model with mode-shaped process noise.  With
``steer="hard"`` (the default) a mode additionally rotates the velocity onto
its own heading before prediction, which is what lets the measurement
likelihood tell opposite headings apart: with process noise alone all eight
models predict the same mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .kinematics import (
    MODES,
    Detection,
    KinematicState,
    NoiseConfig,
    convert_measurement,
    converted_h,
    heading_vector,
    measurement_jacobian,
    measurement_loglik,
    mode_noise_cov,
    transition_matrices,
)

PSD_FLOOR = 1e-12
_HEADING = np.array([heading_vector(m) for m in MODES])


def default_transition_matrix(n: int = len(MODES), stay: float = 0.9, adjacent: float = 0.04) -> np.ndarray:
    """Row-stochastic heading transition matrix.

    ``stay`` on the diagonal, ``adjacent`` to each neighbouring heading and
    the remainder spread evenly over the other ``n - 3`` headings.
    """
    rest = 1.0 - stay - 2 * adjacent
    if rest < -1e-12 or n < 4:
        raise ValueError("transition probabilities exceed one")
    pi = np.full((n, n), max(rest, 0.0) / (n - 3))
    for i in range(n):
        pi[i, i] = stay
        pi[i, (i + 1) % n] = adjacent
        pi[i, (i - 1) % n] = adjacent
    return pi


def check_transition_matrix(pi: np.ndarray, n: int = len(MODES)) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (n, n):
        raise ValueError(f"transition matrix must be {n}x{n}")
    if np.any(pi < 0) or not np.allclose(pi.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("transition matrix rows must be probability vectors")
    return pi


def repair_covariance(P: np.ndarray) -> tuple[np.ndarray, bool]:
    """Symmetrize and clamp eigenvalues below ``PSD_FLOOR``; flag when clamping was needed."""
    P = 0.5 * (P + P.T)
    vals, vecs = np.linalg.eigh(P)
    if vals.min() >= 0:
        return P, False
    vals = np.maximum(vals, PSD_FLOOR)
    return (vecs * vals) @ vecs.T, True


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    top = np.max(logw)
    if not np.isfinite(top):
        return np.full(len(logw), 1.0 / len(logw))
    w = np.exp(logw - top)
    return w / w.sum()


def _as_vector(probs: Mapping[str, float] | np.ndarray, modes=MODES) -> np.ndarray:
    if isinstance(probs, Mapping):
        extra = set(probs) - set(modes)
        if extra:
            raise ValueError(f"unknown modes {sorted(extra)}")
        return np.array([float(probs.get(m, 0.0)) for m in modes])
    v = np.asarray(probs, dtype=float)
    if v.shape != (len(modes),):
        raise ValueError("mode vector has the wrong length")
    return v


def feedback_mix(rg_probs, cfg_probs, weight_cfg: float = 0.5):
    """Convex combination ``weight_cfg * cfg + (1 - weight_cfg) * rg`` of two mode distributions."""
    if not 0.0 <= weight_cfg <= 1.0:
        raise ValueError("weight_cfg must lie in [0, 1]")
    if isinstance(rg_probs, Mapping) != isinstance(cfg_probs, Mapping):
        raise ValueError("both distributions must be maps or both vectors")
    if isinstance(rg_probs, Mapping):
        if set(rg_probs) != set(cfg_probs):
            raise ValueError("distributions are over different terminal sets")
        out = {k: weight_cfg * cfg_probs[k] + (1.0 - weight_cfg) * rg_probs[k] for k in rg_probs}
        for name, p in (("rg", rg_probs), ("cfg", cfg_probs)):
            if abs(math.fsum(p.values()) - 1.0) > 1e-6:
                raise ValueError(f"{name} distribution does not sum to one")
        return out
    rg = np.asarray(rg_probs, dtype=float)
    cf = np.asarray(cfg_probs, dtype=float)
    if rg.shape != cf.shape:
        raise ValueError("distributions are over different terminal sets")
    return weight_cfg * cf + (1.0 - weight_cfg) * rg


# ---------------------------------------------------------------------------
# IMM / EKF

@dataclass(frozen=True)
class ImmConfig:
    pi: np.ndarray = field(default_factory=default_transition_matrix)
    steer: str = "hard"            # "hard" | "none"
    init_speed: float = 10.0
    init_speed_sigma: float = 5.0
    feedback_weight: float = 0.5
    feedback: str = "prior"        # "prior" | "posterior"

    def __post_init__(self):
        object.__setattr__(self, "pi", check_transition_matrix(self.pi))
        if self.steer not in ("hard", "none"):
            raise ValueError("steer must be 'hard' or 'none'")
        if self.feedback not in ("posterior", "prior"):
            raise ValueError("feedback must be 'posterior' or 'prior'")
        if not 0.0 <= self.feedback_weight <= 1.0:
            raise ValueError("feedback_weight must lie in [0, 1]")


@dataclass(frozen=True)
class ImmBank:
    means: np.ndarray      # (8, 4)
    covs: np.ndarray       # (8, 4, 4)
    weights: np.ndarray    # (8,)
    pi: np.ndarray         # (8, 8)
    t: int = 0
    repairs: int = 0

    def __post_init__(self):
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mode probabilities must sum to one")

    @property
    def mode_probs(self) -> dict[str, float]:
        return {m: float(w) for m, w in zip(MODES, self.weights)}

    def combined(self) -> KinematicState:
        return _combine(self.means, self.covs, self.weights, self.t)


@dataclass(frozen=True)
class ImmResult:
    bank: ImmBank
    combined: KinematicState
    mode_probs: dict[str, float]
    loglik: float
    repaired: bool


def _combine(means, covs, w, t) -> KinematicState:
    x = w @ means
    d = means - x
    P = np.einsum("j,jab->ab", w, covs) + np.einsum("j,ja,jb->ab", w, d, d)
    return KinematicState(x, 0.5 * (P + P.T), t)


def init_imm(d: Detection, noise: NoiseConfig, cfg: ImmConfig = ImmConfig(),
             weights: np.ndarray | None = None) -> ImmBank:
    """Bank initialized from a single detection: one velocity hypothesis per heading."""
    z, R = convert_measurement(d, noise)
    n = len(MODES)
    means = np.zeros((n, 4))
    covs = np.zeros((n, 4, 4))
    for j in range(n):
        means[j, :2] = z[:2]
        means[j, 2:] = cfg.init_speed * _HEADING[j]
        covs[j, :2, :2] = R[:2, :2]
        covs[j, 2:, 2:] = np.eye(2) * cfg.init_speed_sigma ** 2
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    return ImmBank(means, covs, w / w.sum(), cfg.pi, d.t)


def _steer(x, P, j):
    """Rotate the velocity onto heading ``j`` keeping its magnitude (linearized for P)."""
    v = x[2:]
    speed = float(np.hypot(v[0], v[1]))
    u = _HEADING[j]
    S = np.eye(4)
    S[2:, 2:] = np.outer(u, v) / speed if speed > 1e-9 else 0.0
    return np.concatenate([x[:2], speed * u]), S @ P @ S.T


def _steer_all(means, covs, j):
    out = [_steer(x, P, j) for x, P in zip(means, covs)]
    return np.array([o[0] for o in out]), np.array([o[1] for o in out])


def _predict_mode(x, P, j, noise: NoiseConfig, steer: str):
    F, G = transition_matrices(noise.T)
    if steer == "hard":
        x, P = _steer(x, P, j)
    Q = mode_noise_cov(MODES[j], noise)
    return F @ x, F @ P @ F.T + G @ Q @ G.T


def ekf_update(x, P, d: Detection, noise: NoiseConfig):
    """Converted-measurement EKF update; returns (x, P, loglik)."""
    z, R = convert_measurement(d, noise)
    H = measurement_jacobian(x, d.platform)
    nu = z - converted_h(x, d.platform)
    S = H @ P @ H.T + R
    S = 0.5 * (S + S.T)
    L = np.linalg.cholesky(S)
    Sinv_nu = np.linalg.solve(S, nu)
    K = np.linalg.solve(S, H @ P).T
    x = x + K @ nu
    I_KH = np.eye(4) - K @ H
    P = I_KH @ P @ I_KH.T + K @ R @ K.T   # Joseph form
    ll = -0.5 * float(nu @ Sinv_nu) - float(np.log(np.diag(L)).sum()) - 1.5 * math.log(2 * math.pi)
    return x, P, ll


def imm_step(bank: ImmBank, d: Detection, noise: NoiseConfig, mode_prior=None,
             cfg: ImmConfig = ImmConfig()) -> ImmResult:
    """One IMM cycle: mixing, per-mode EKF, mode update (optionally with a syntactic prior), combination."""
    pi = bank.pi
    w = bank.weights
    n = len(w)
    # 1. mixing probabilities
    c = w @ pi
    mix = (pi * w[:, None]) / np.where(c > 0, c, 1.0)[None, :]   # mix[i, j] = u^{i|j}
    # a mode nobody can reach keeps its own estimate
    for j in np.flatnonzero(c <= 0):
        mix[:, j] = 0.0
        mix[j, j] = 1.0
    # 2. mixed initial conditions
    x0 = np.empty_like(bank.means)
    P0 = np.empty_like(bank.covs)
    for j in range(n):
        if cfg.steer == "hard":
            # sources are steered onto heading j first, so only speeds are mixed
            src, srcP = _steer_all(bank.means, bank.covs, j)
        else:
            src, srcP = bank.means, bank.covs
        x0[j] = mix[:, j] @ src
        dlt = src - x0[j]
        P0[j] = np.einsum("i,iab->ab", mix[:, j], srcP) + np.einsum("i,ia,ib->ab", mix[:, j], dlt, dlt)
    # 3. mode-matched filtering
    means = np.empty_like(bank.means)
    covs = np.empty_like(bank.covs)
    loglik = np.zeros(n)
    repaired = False
    for j in range(n):
        x, P = _predict_mode(x0[j], P0[j], j, noise, cfg.steer)
        if not d.is_miss:
            x, P, loglik[j] = ekf_update(x, P, d, noise)
        P, flag = repair_covariance(P)
        repaired |= flag
        means[j], covs[j] = x, P
    # 4. mode probability update
    prior = None if mode_prior is None else _as_vector(mode_prior)
    logc = np.log(np.maximum(c, 1e-300))
    if prior is not None and cfg.feedback == "prior":
        mixed = feedback_mix(c / c.sum(), prior / prior.sum(), cfg.feedback_weight)
        logc = np.log(np.maximum(mixed, 1e-300))
    new_w = _normalize_log(loglik + logc)
    if prior is not None and cfg.feedback == "posterior":
        cfg_post = _normalize_log(loglik + np.log(np.maximum(prior, 1e-300)))
        new_w = feedback_mix(new_w, cfg_post, cfg.feedback_weight)
        new_w = new_w / new_w.sum()
    top = float(np.max(loglik + logc))
    total_ll = top + math.log(float(np.exp(loglik + logc - top).sum()))
    # 5. combination
    t = d.t
    new_bank = ImmBank(means, covs, new_w, pi, t, bank.repairs + int(repaired))
    comb = _combine(means, covs, new_w, t)
    P, flag = repair_covariance(comb.cov)
    if flag:
        repaired = True
        comb = KinematicState(comb.mean, P, t)
    return ImmResult(new_bank, comb, new_bank.mode_probs, total_ll if not d.is_miss else 0.0, repaired)


# ---------------------------------------------------------------------------
# particle filter

@dataclass(frozen=True)
class ParticleSet:
    states: np.ndarray     # (N, 4)
    modes: np.ndarray      # (N,) mode indices
    weights: np.ndarray    # (N,)
    t: int = 0

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValueError("particle weights must be non-negative")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("particle weights must sum to one")

    @property
    def N(self) -> int:
        return len(self.weights)

    @property
    def particles(self) -> list[dict]:
        return [{"state": s.copy(), "mode": MODES[m], "weight": float(w)}
                for s, m, w in zip(self.states, self.modes, self.weights)]

    @property
    def mode_probs(self) -> dict[str, float]:
        p = np.bincount(self.modes, weights=self.weights, minlength=len(MODES))
        return {m: float(v) for m, v in zip(MODES, p / p.sum())}

    def combined(self) -> KinematicState:
        w = self.weights
        x = w @ self.states
        d = self.states - x
        P = (d * w[:, None]).T @ d
        return KinematicState(x, 0.5 * (P + P.T), self.t)


@dataclass(frozen=True)
class PfResult:
    particles: ParticleSet
    combined: KinematicState
    mode_probs: dict[str, float]
    ess: float
    resampled: bool
    diverged: bool


def effective_sample_size(ps) -> float:
    w = ps.weights if isinstance(ps, ParticleSet) else np.asarray(ps, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn by systematic resampling (one uniform offset, N evenly spaced pointers)."""
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right").clip(max=n - 1)


def init_particles(mean, cov, n: int, rng: np.random.Generator, modes=None) -> ParticleSet:
    states = rng.multivariate_normal(np.asarray(mean, dtype=float), np.asarray(cov, dtype=float), size=n)
    if modes is None:
        modes = rng.integers(0, len(MODES), size=n)
    modes = np.broadcast_to(np.asarray(modes), (n,)).astype(int).copy()
    return ParticleSet(states, modes, np.full(n, 1.0 / n))


def init_particles_from_detection(d: Detection, noise: NoiseConfig, n: int, rng: np.random.Generator,
                                  init_speed: float = 10.0, init_speed_sigma: float = 5.0) -> ParticleSet:
    z, R = convert_measurement(d, noise)
    modes = rng.integers(0, len(MODES), size=n)
    pos = rng.multivariate_normal(z[:2], R[:2, :2], size=n)
    vel = init_speed * _HEADING[modes] + rng.normal(0.0, init_speed_sigma, size=(n, 2))
    return ParticleSet(np.hstack([pos, vel]), modes, np.full(n, 1.0 / n), d.t)


def _mode_noise_factors(noise: NoiseConfig) -> np.ndarray:
    return np.array([np.linalg.cholesky(mode_noise_cov(m, noise)) for m in MODES])


def pf_step(ps: ParticleSet, d: Detection, noise: NoiseConfig, pi: np.ndarray | None = None,
            resample_threshold: float = 0.5, rng: np.random.Generator | None = None,
            mode_prior=None, feedback_weight: float = 0.5, steer: str = "hard",
            likelihood: Callable[[np.ndarray, Detection], np.ndarray] | None = None) -> PfResult:
    """One multiple-model particle filter step.

    ``likelihood(states, d)`` overrides the radar measurement log-likelihood
    (used for linear-Gaussian checks).  A syntactic ``mode_prior`` is mixed
    into the transition rows before modes are sampled.
    """
    if rng is None:
        raise ValueError("pf_step needs an explicit random generator")
    pi = default_transition_matrix() if pi is None else check_transition_matrix(pi)
    n = ps.N
    rows = pi[ps.modes]
    if mode_prior is not None:
        prior = _as_vector(mode_prior)
        rows = feedback_mix(rows, np.broadcast_to(prior / prior.sum(), rows.shape), feedback_weight)
    cum = np.cumsum(rows, axis=1)
    cum[:, -1] = 1.0
    modes = (rng.random(n)[:, None] > cum).sum(axis=1)
    F, G = transition_matrices(noise.T)
    x = ps.states.copy()
    if steer == "hard":
        speed = np.hypot(x[:, 2], x[:, 3])
        x[:, 2:] = speed[:, None] * _HEADING[modes]
    chol = _mode_noise_factors(noise)[modes]
    acc = np.einsum("nab,nb->na", chol, rng.standard_normal((n, 2)))
    x = x @ F.T + acc @ G.T
    logw = np.log(np.maximum(ps.weights, 1e-300))
    if not d.is_miss:
        ll = likelihood(x, d) if likelihood is not None else measurement_loglik(x, d, noise)
        logw = logw + ll
    diverged = not np.isfinite(np.max(logw))
    w = np.full(n, 1.0 / n) if diverged else _normalize_log(logw)
    new = ParticleSet(x, modes, w, d.t)
    ess = effective_sample_size(new)
    resampled = ess < resample_threshold * n
    combined = new.combined()
    probs = new.mode_probs
    if resampled:
        idx = systematic_resample(w, rng)
        new = ParticleSet(x[idx], modes[idx], np.full(n, 1.0 / n), d.t)
    return PfResult(new, combined, probs, ess, resampled, diverged)
