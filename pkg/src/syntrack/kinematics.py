"""Constant-velocity motion with heading modes and the GMTI measurement model.

Coordinates are a flat ground plane: ``x`` east, ``y`` north, metres.
Headings follow the azimuth convention of the sensor: angle measured
clockwise from north, so heading ``phi`` moves along ``(sin phi, cos phi)``.
State vectors are ``(x, y, vx, vy)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .patterns import HEADINGS, TERMINALS

SYM_TOL = 1e-9


@dataclass(frozen=True)
class KinematicState:
    mean: np.ndarray
    cov: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))
    t: int = 0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(4)
        cov = np.asarray(self.cov, dtype=float).reshape(4, 4)
        if np.max(np.abs(cov - cov.T), initial=0.0) > SYM_TOL * max(1.0, np.max(np.abs(cov))):
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def x(self) -> float:
        return float(self.mean[0])

    @property
    def y(self) -> float:
        return float(self.mean[1])

    @property
    def vx(self) -> float:
        return float(self.mean[2])

    @property
    def vy(self) -> float:
        return float(self.mean[3])

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    def to_dict(self) -> dict:
        return {"t": self.t, "x": self.x, "y": self.y, "vx": self.vx, "vy": self.vy,
                "cov": [float(v) for v in self.cov.ravel()]}


_MISSING = float("nan")


@dataclass(frozen=True)
class Platform:
    x: float
    y: float
    z: float
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "vx", "vy"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def at(self, dt: float) -> "Platform":
        return Platform(self.x + self.vx * dt, self.y + self.vy * dt, self.z, self.vx, self.vy)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "z": self.z, "vx": self.vx, "vy": self.vy}


@dataclass(frozen=True)
class Detection:
    r: float
    rdot: float
    theta: float
    platform: Platform
    t: int
    is_miss: bool = False

    def __post_init__(self):
        # plain floats keep repr() and JSON output free of numpy scalar types
        for name in ("r", "rdot", "theta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "t", int(self.t))
        object.__setattr__(self, "is_miss", bool(self.is_miss))
        if self.is_miss:
            # one shared NaN so that equal misses compare equal
            for name in ("r", "rdot", "theta"):
                object.__setattr__(self, name, _MISSING)
        else:
            if not self.r > 0:
                raise ValueError("detection range must be positive")
            if not -math.pi < self.theta <= math.pi:
                raise ValueError("azimuth must lie in (-pi, pi]")

    @classmethod
    def miss(cls, platform: Platform, t: int) -> "Detection":
        return cls(_MISSING, _MISSING, _MISSING, platform, t, True)

    def to_dict(self) -> dict:
        d = {"t": self.t, "r": self.r, "rdot": self.rdot, "theta": self.theta,
             "platform": self.platform.to_dict(), "is_miss": self.is_miss}
        if self.is_miss:
            d.update(r=None, rdot=None, theta=None)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        plat = Platform(**{k: float(v) for k, v in d["platform"].items()})
        if d.get("is_miss"):
            return cls.miss(plat, int(d["t"]))
        return cls(float(d["r"]), float(d["rdot"]), float(d["theta"]), plat, int(d["t"]), False)


@dataclass(frozen=True)
class NoiseConfig:
    """Process and measurement noise.

    ``sigma_along`` / ``sigma_ortho`` are acceleration standard deviations
    (m/s^2) along and across the mode heading.  Defaults reproduce the flight
    trial settings (range 5 m, azimuth 2.5 deg, range rate 0.1 m/s) with the
    smaller process noise across the heading.
    """
    sigma_along: float = 0.5
    sigma_ortho: float = 0.05
    sigma_r: float = 5.0
    sigma_rdot: float = 0.1
    sigma_theta: float = math.radians(2.5)
    T: float = 1.0

    def __post_init__(self):
        for name in ("sigma_along", "sigma_ortho", "sigma_r", "sigma_rdot", "sigma_theta", "T"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"NoiseConfig.{name} must be strictly positive, got {v!r}")

    @classmethod
    def literal_trial_reading(cls, **kw) -> "NoiseConfig":
        """Process noise with 0.05 along and 0.5 across the heading."""
        return cls(sigma_along=0.05, sigma_ortho=0.5, **kw)


def heading_vector(mode: str) -> np.ndarray:
    phi = HEADINGS[mode]
    return np.array([math.sin(phi), math.cos(phi)])


def transition_matrices(T: float) -> tuple[np.ndarray, np.ndarray]:
    if not T > 0:
        raise ValueError("sample period must be positive")
    F = np.array([[1, 0, T, 0],
                  [0, 1, 0, T],
                  [0, 0, 1, 0],
                  [0, 0, 0, 1]], dtype=float)
    G = np.array([[T * T / 2, 0],
                  [0, T * T / 2],
                  [T, 0],
                  [0, T]], dtype=float)
    return F, G


def mode_rotation(mode: str) -> np.ndarray:
    """Columns are the heading axis and its clockwise normal."""
    phi = HEADINGS[mode]
    s, c = math.sin(phi), math.cos(phi)
    return np.array([[s, c],
                     [c, -s]])


def mode_noise_cov(mode: str, cfg: NoiseConfig) -> np.ndarray:
    """Acceleration covariance: ``sigma_along^2`` on the heading axis, ``sigma_ortho^2`` across."""
    rho = mode_rotation(mode)
    q = rho @ np.diag([cfg.sigma_along ** 2, cfg.sigma_ortho ** 2]) @ rho.T
    return 0.5 * (q + q.T)


def _relative(mean, platform: Platform):
    dx, dy = mean[0] - platform.x, mean[1] - platform.y
    dvx, dvy = mean[2] - platform.vx, mean[3] - platform.vy
    dz = -platform.z  # targets sit on the ground plane
    return dx, dy, dz, dvx, dvy


def observe(state, platform: Platform) -> tuple[float, float, float]:
    """Noise-free ``(range, range rate, azimuth)`` of a ground target."""
    mean = state.mean if isinstance(state, KinematicState) else np.asarray(state, dtype=float)
    dx, dy, dz, dvx, dvy = _relative(mean, platform)
    r = math.sqrt(dx * dx + dy * dy + dz * dz)
    if r == 0.0:
        raise ValueError("target coincides with the platform")
    rdot = (dx * dvx + dy * dvy) / r
    theta = math.atan2(dx, dy)
    if theta == -math.pi:
        theta = math.pi
    return r, rdot, theta


def ground_range(d: Detection) -> float:
    """Horizontal range implied by slant range and platform altitude."""
    return math.sqrt(max(d.r * d.r - d.platform.z * d.platform.z, 0.0))


def convert_measurement(d: Detection, cfg: NoiseConfig) -> tuple[np.ndarray, np.ndarray]:
    """Converted measurement ``(x, y, rdot)`` in world coordinates and its covariance.

    Position uses the horizontal range ``rho = sqrt(r^2 - z^2)``; for a
    platform on the ground (z = 0) this is the slant range and the
    covariance reduces to the classic converted-measurement form.
    """
    if d.is_miss:
        raise ValueError("cannot convert a missed detection")
    rho = ground_range(d)
    s, c = math.sin(d.theta), math.cos(d.theta)
    x = d.platform.x + rho * s
    y = d.platform.y + rho * c
    # range error projected onto the ground plane
    sig_rho = cfg.sigma_r * (d.r / rho) if rho > 0 else cfg.sigma_r
    var_r = sig_rho ** 2
    var_t = (rho * cfg.sigma_theta) ** 2
    sxx = var_t * c * c + var_r * s * s
    syy = var_t * s * s + var_r * c * c
    sxy = (var_r - var_t) * s * c
    R = np.array([[sxx, sxy, 0.0],
                  [sxy, syy, 0.0],
                  [0.0, 0.0, cfg.sigma_rdot ** 2]])
    return np.array([x, y, d.rdot]), R


def converted_h(mean, platform: Platform) -> np.ndarray:
    """Noise-free converted measurement ``(x, y, rdot)`` of a state."""
    _, rdot, _ = observe(mean, platform)
    return np.array([mean[0], mean[1], rdot])


def measurement_jacobian(state, platform: Platform) -> np.ndarray:
    mean = state.mean if isinstance(state, KinematicState) else np.asarray(state, dtype=float)
    dx, dy, dz, dvx, dvy = _relative(mean, platform)
    r2 = dx * dx + dy * dy + dz * dz
    if r2 == 0.0:
        raise ValueError("target coincides with the platform")
    r = math.sqrt(r2)
    num = dx * dvx + dy * dvy
    J = np.zeros((3, 4))
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    J[2, 0] = dvx / r - num * dx / (r2 * r)
    J[2, 1] = dvy / r - num * dy / (r2 * r)
    J[2, 2] = dx / r
    J[2, 3] = dy / r
    return J


def measurement_loglik(mean, d: Detection, cfg: NoiseConfig) -> np.ndarray:
    """Log-likelihood of a raw detection for each row of ``mean`` (shape (n, 4))."""
    m = np.atleast_2d(np.asarray(mean, dtype=float))
    dx = m[:, 0] - d.platform.x
    dy = m[:, 1] - d.platform.y
    dz = -d.platform.z
    r = np.sqrt(dx * dx + dy * dy + dz * dz)
    rdot = (dx * (m[:, 2] - d.platform.vx) + dy * (m[:, 3] - d.platform.vy)) / r
    theta = np.arctan2(dx, dy)
    dth = np.angle(np.exp(1j * (d.theta - theta)))
    e = ((d.r - r) / cfg.sigma_r) ** 2 + ((d.rdot - rdot) / cfg.sigma_rdot) ** 2 + (dth / cfg.sigma_theta) ** 2
    norm = math.log(2 * math.pi) * 1.5 + math.log(cfg.sigma_r * cfg.sigma_rdot * cfg.sigma_theta)
    return -0.5 * e - norm


MODES = TERMINALS
