"""Forward integration of trained fields and trajectory action estimation.

Particles follow explicit Euler in position, x <- x + v dt, and exact
exponential updates in mass, m <- m exp(g dt), starting from m = 1. The
action estimator is the Riemann sum of the kinetic-plus-growth integrand
weighted by particle masses, scaled by the total interval length so it is
comparable to the squared static distance between the endpoint marginals.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import nn
from .train import ModelPair


@dataclass
class Trajectory:
    """Dense particle paths: times (T,), states (T, n, d), masses (T, n)."""

    times: np.ndarray
    states: np.ndarray
    masses: np.ndarray

    def __post_init__(self) -> None:
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if np.any(self.masses <= 0):
            raise ValueError("trajectory masses must be positive")


def integrate(
    models: ModelPair,
    X0: np.ndarray,
    t0: float,
    t_end: float,
    dt: float | None = None,
) -> Trajectory:
    """Euler integration from t0 to t_end; the last step lands exactly on t_end.

    dt defaults to (t_end - t0) / 400. Masses start at 1 and stay positive
    by construction. Non-finite network output aborts with the offending
    state reported.
    """
    if t_end <= t0:
        raise ValueError(f"t_end must exceed t0, got {t0} -> {t_end}")
    if dt is None:
        dt = (t_end - t0) / 400.0
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.atleast_2d(np.asarray(X0, float)).copy()
    m = np.ones(len(x))
    times = [t0]
    states = [x.copy()]
    masses = [m.copy()]
    t = t0
    while t < t_end - 1e-12:
        step = min(dt, t_end - t)
        v = nn.forward(models.velocity, x, t)
        g = nn.forward(models.growth, x, t)[:, 0]
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(g))):
            bad = np.flatnonzero(
                ~(np.isfinite(v).all(axis=1) & np.isfinite(g))
            )[0]
            raise FloatingPointError(
                f"non-finite field output at t={t:.6g}, x={x[bad]}"
            )
        x = x + v * step
        m = m * np.exp(g * step)
        t = t_end if t_end - (t + step) < 1e-12 else t + step
        times.append(t)
        states.append(x.copy())
        masses.append(m.copy())
    return Trajectory(
        times=np.array(times),
        states=np.stack(states),
        masses=np.stack(masses),
    )


def trajectory_action(traj: Trajectory, models: ModelPair, delta: float) -> float:
    """(t_K - t_0) * sum over steps of dt * mean_i[ m_i (|v|^2 + d^2 g^2) / 2 ].

    Masses are kept relative to m(t_0) = 1 rather than renormalized per
    step, so on a single traveling point mass the estimate converges to the
    squared Dirac-to-Dirac distance of the endpoints.
    """
    total = float(traj.times[-1] - traj.times[0])
    action = 0.0
    for j in range(len(traj.times) - 1):
        dt = float(traj.times[j + 1] - traj.times[j])
        x = traj.states[j]
        v = nn.forward(models.velocity, x, traj.times[j])
        g = nn.forward(models.growth, x, traj.times[j])[:, 0]
        dens = traj.masses[j] * (np.sum(v * v, axis=1) + delta**2 * g * g)
        action += dt * 0.5 * float(np.mean(dens))
    return total * action


def predicted_weights(traj: Trajectory, checkpoint_times) -> list[dict]:
    """Per-checkpoint normalized particle weights and total-mass ratios.

    The total predicted mass ratio at time t is the mean particle mass,
    since every particle starts at mass 1 with uniform source weights.
    """
    out = []
    t0, t_end = float(traj.times[0]), float(traj.times[-1])
    grid_step = float(np.min(np.diff(traj.times)))
    for t in checkpoint_times:
        t = float(t)
        if t < t0 - 1e-12 or t > t_end + 1e-12:
            raise ValueError(
                f"requested time {t} outside integrated range [{t0}, {t_end}]"
            )
        j = int(np.argmin(np.abs(traj.times - t)))
        if abs(float(traj.times[j]) - t) > grid_step:
            raise ValueError(
                f"requested time {t} is not on the integration grid"
            )
        m = traj.masses[j]
        out.append({
            "time": t,
            "weights": m / m.sum(),
            "mass_ratio": float(m.mean()),
        })
    return out


def export_trajectory(traj: Trajectory, path: str, checkpoint_times=None) -> None:
    """One tab-delimited file per checkpoint: id, time, coordinates, mass."""
    os.makedirs(path, exist_ok=True)
    times = traj.times if checkpoint_times is None else checkpoint_times
    for t in times:
        j = int(np.argmin(np.abs(traj.times - float(t))))
        x = traj.states[j]
        rows = np.hstack([
            np.arange(len(x))[:, None],
            np.full((len(x), 1), float(traj.times[j])),
            x,
            traj.masses[j][:, None],
        ])
        np.savetxt(os.path.join(path, f"checkpoint_{float(t):g}.tsv"),
                   rows, delimiter="\t", fmt="%.17g")
