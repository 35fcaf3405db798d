"""Closed-form Wasserstein-Fisher-Rao geometry between weighted point masses.

Provides the transport cost, the Dirac-to-Dirac distance, the traveling-Dirac
mass/velocity laws and the conditional targets (velocity, growth rate, mass)
used to build regression batches. All quantities are plain float64 numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeodesicNonexistenceError(ValueError):
    """Endpoints at distance >= pi*delta: the transport cost is infinite."""


@dataclass(frozen=True)
class WfrConfig:
    """Scales governing the geometry.

    delta: growth-penalty length scale (> 0).
    sigma: Gaussian path bandwidth (>= 0).
    tau_eps: threshold below which the geodesic is treated as pure mass
        change with no displacement.
    mass_floor: lower clamp for mass ratios, keeps growth rates finite for
        pairs that receive (almost) no mass.
    """

    delta: float = 1.0
    sigma: float = 0.0
    tau_eps: float = 1e-9
    mass_floor: float = 1e-4

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if not 0 < self.tau_eps < 1:
            raise ValueError(f"tau_eps out of range: {self.tau_eps}")
        if not 0 < self.mass_floor < 1:
            raise ValueError(f"mass_floor out of range: {self.mass_floor}")


@dataclass(frozen=True)
class TravelingDiracParams:
    """Constants of the geodesic between two weighted point masses.

    The mass law is m(t) = A t^2 - 2 B t + m0 and the velocity satisfies
    u(t) m(t) = omega0.  tau = tan(dist / 2 delta); tau == 0 means pure
    mass change without displacement.
    """

    A: float
    B: float
    omega0: np.ndarray
    tau: float
    m0: float
    m1: float
    x0: np.ndarray
    x1: np.ndarray
    delta: float

    def mass(self, t):
        """Mass m(t) along the path; accepts scalars or arrays."""
        return self.A * t * t - 2.0 * self.B * t + self.m0

    def growth(self, t):
        """Growth rate g(t) = d/dt ln m(t) = (2At - 2B) / m(t)."""
        return (2.0 * self.A * t - 2.0 * self.B) / self.mass(t)


@dataclass(frozen=True)
class ConditionalTargets:
    """Regression targets at one path time: center, velocity, growth, mass."""

    mean: np.ndarray
    u: np.ndarray
    g: float
    m: float


def log_cos_cost(r: float, delta: float) -> float:
    """Transport cost -2 ln cos(min(r / 2 delta, pi/2)).

    Returns +inf for r >= pi * delta.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if r < 0:
        raise ValueError(f"distance must be nonnegative, got {r}")
    half = r / (2.0 * delta)
    if half >= np.pi / 2.0:
        return np.inf
    return -2.0 * float(np.log(np.cos(half)))


def wfr_dd_squared(m0: float, m1: float, dist: float, delta: float) -> float:
    """Squared WFR distance between point masses m0 at x0 and m1 at x1.

    2 delta^2 (m0 + m1 - 2 sqrt(m0 m1) cosbar(dist / 2 delta)), where cosbar
    clamps the angle at pi/2.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if m0 < 0 or m1 < 0:
        raise ValueError(f"masses must be nonnegative, got {m0}, {m1}")
    if dist < 0:
        raise ValueError(f"distance must be nonnegative, got {dist}")
    half = min(dist / (2.0 * delta), np.pi / 2.0)
    return 2.0 * delta**2 * (m0 + m1 - 2.0 * np.sqrt(m0 * m1) * np.cos(half))


def traveling_dirac(
    x0: np.ndarray,
    x1: np.ndarray,
    m0: float,
    m1: float,
    cfg: WfrConfig,
) -> TravelingDiracParams:
    """Geodesic constants for the pair (m0 at x0) -> (m1 at x1).

    m1 below m0 * mass_floor is clamped so the growth rate stays finite on
    the whole path. Raises GeodesicNonexistenceError at or beyond the
    pi * delta cutoff.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if m0 <= 0:
        raise ValueError(f"initial mass must be positive, got {m0}")
    if m1 < 0:
        raise ValueError(f"final mass must be nonnegative, got {m1}")
    m1 = max(m1, m0 * cfg.mass_floor)
    diff = x1 - x0
    dist = float(np.linalg.norm(diff))
    if dist >= np.pi * cfg.delta:
        raise GeodesicNonexistenceError(
            f"endpoint distance {dist:.6g} >= pi*delta = {np.pi * cfg.delta:.6g}; "
            "such pairs carry infinite cost and must be filtered upstream"
        )
    tau = float(np.tan(dist / (2.0 * cfg.delta)))
    s = np.sqrt(m0 * m1 / (1.0 + tau * tau))
    A = m0 + m1 - 2.0 * s
    B = m0 - s
    if tau <= cfg.tau_eps or dist == 0.0:
        omega0 = np.zeros_like(diff)
        tau = 0.0
    else:
        omega0 = (2.0 * cfg.delta * tau * s / dist) * diff
    return TravelingDiracParams(
        A=float(A), B=float(B), omega0=omega0, tau=tau,
        m0=float(m0), m1=float(m1), x0=x0, x1=x1, delta=cfg.delta,
    )


def lambda_at(p: TravelingDiracParams, t: float, cfg: WfrConfig) -> float:
    """Lambda_t = integral_0^t ds / m(s) in the two-arctan closed form.

    Returns 0 in the tau -> 0 branch where omega0 vanishes and the value is
    never used.
    """
    if p.tau <= cfg.tau_eps:
        return 0.0
    # m0*A - B^2 = m0*m1*tau^2/(1+tau^2) > 0 away from the degenerate branch
    disc = p.m0 * p.m1 * p.tau * p.tau / (1.0 + p.tau * p.tau)
    root = np.sqrt(disc)
    return float(
        (np.arctan((p.A * t - p.B) / root) - np.arctan(-p.B / root)) / root
    )


def conditional_targets(
    x0: np.ndarray,
    x1: np.ndarray,
    m0: float,
    m1: float,
    t: float,
    cfg: WfrConfig,
) -> ConditionalTargets:
    """Path center, velocity, growth rate and mass at time t in [0, 1].

    Masses are taken relative to the initial mass: the returned mass obeys
    m(0) = 1 and m(1) = m1 / m0.
    """
    ratio = m1 / m0
    p = traveling_dirac(np.asarray(x0, float), np.asarray(x1, float), 1.0, ratio, cfg)
    m_t = float(p.mass(t))
    mean = p.x0 + p.omega0 * lambda_at(p, t, cfg)
    u = p.omega0 / m_t
    g = float(p.growth(t))
    return ConditionalTargets(mean=mean, u=u, g=g, m=m_t)


def path_action_quadrature(
    p: TravelingDiracParams, cfg: WfrConfig, steps: int = 10_000
) -> float:
    """Trapezoid estimate of the path action int (|u|^2 + delta^2 g^2) m / 2 dt.

    Test oracle: converges to wfr_dd_squared of the endpoints as steps grows.
    """
    if steps < 100:
        raise ValueError(f"steps must be >= 100, got {steps}")
    t = np.linspace(0.0, 1.0, steps + 1)
    m = p.mass(t)
    w2 = float(p.omega0 @ p.omega0)
    # |u|^2 m = |omega0|^2 / m ; g^2 m = (2At - 2B)^2 / m
    integrand = 0.5 * (w2 + cfg.delta**2 * (2.0 * p.A * t - 2.0 * p.B) ** 2) / m
    return float(np.trapezoid(integrand, t))


def batched_targets(
    X0: np.ndarray,
    X1: np.ndarray,
    ratios: np.ndarray,
    t: np.ndarray,
    cfg: WfrConfig,
):
    """Vectorized conditional targets for n pairs at per-pair times t.

    X0, X1: (n, d) endpoints; ratios: (n,) final/initial mass ratios
    (clamped at mass_floor); t: (n,) times in [0, 1].

    Returns (mean, u, g, m) with shapes (n, d), (n, d), (n,), (n,).
    """
    X0 = np.asarray(X0, float)
    X1 = np.asarray(X1, float)
    ratios = np.maximum(np.asarray(ratios, float), cfg.mass_floor)
    t = np.asarray(t, float)
    diff = X1 - X0
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist >= np.pi * cfg.delta):
        raise GeodesicNonexistenceError(
            "a pair at distance >= pi*delta reached target construction"
        )
    tau = np.tan(dist / (2.0 * cfg.delta))
    s = np.sqrt(ratios / (1.0 + tau * tau))
    A = 1.0 + ratios - 2.0 * s
    B = 1.0 - s
    m = A * t * t - 2.0 * B * t + 1.0
    g = (2.0 * A * t - 2.0 * B) / m

    moving = tau > cfg.tau_eps
    lam = np.zeros_like(dist)
    omega_norm = np.zeros_like(dist)
    if np.any(moving):
        tm, sm, Am, Bm = tau[moving], s[moving], A[moving], B[moving]
        disc = ratios[moving] * tm * tm / (1.0 + tm * tm)
        root = np.sqrt(disc)
        lam[moving] = (
            np.arctan((Am * t[moving] - Bm) / root) - np.arctan(-Bm / root)
        ) / root
        omega_norm[moving] = 2.0 * cfg.delta * tm * sm
    unit = np.zeros_like(diff)
    nz = dist > 0
    unit[nz] = diff[nz] / dist[nz, None]
    omega0 = omega_norm[:, None] * unit
    mean = X0 + omega0 * lam[:, None]
    u = omega0 / m[:, None]
    return mean, u, g, m
