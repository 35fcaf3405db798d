"""Evaluation metrics: weighted 1-Wasserstein, relative mass error, growth
correlation, plus the static multi-interval action reference.

The W1 backbone is an exact transportation linear program (HiGHS interior
point with crossover, so dual multipliers are available for optimality
audits). Clouds above the subsample cap are resampled proportionally to
their weights first. A log-domain entropic solver with annealed
regularization serves as fallback when the LP fails.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from .oet import OetConfig, static_wfr_squared

SUBSAMPLE_CAP = 1024


@dataclass
class WeightedCloud:
    """Point cloud with weights normalized to sum to 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.points = np.atleast_2d(np.asarray(self.points, float))
        self.weights = np.asarray(self.weights, float)
        if len(self.points) < 1:
            raise ValueError("cloud must be nonempty")
        if len(self.weights) != len(self.points):
            raise ValueError("weights length does not match points")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.weights))):
            raise ValueError("cloud contains non-finite entries")
        if np.any(self.weights < 0) or self.weights.sum() <= 0:
            raise ValueError("weights must be nonnegative with positive sum")
        self.weights = self.weights / self.weights.sum()

    @classmethod
    def uniform(cls, points: np.ndarray) -> "WeightedCloud":
        points = np.atleast_2d(np.asarray(points, float))
        return cls(points, np.full(len(points), 1.0 / len(points)))


def _resample(cloud: WeightedCloud, cap: int, rng: np.random.Generator):
    if len(cloud.points) <= cap:
        return cloud.points, cloud.weights
    idx = rng.choice(len(cloud.points), size=cap, replace=True, p=cloud.weights)
    return cloud.points[idx], np.full(cap, 1.0 / cap)


def exact_transport(p: np.ndarray, q: np.ndarray, C: np.ndarray):
    """Exact transportation LP: min <C, pi>, pi 1 = p, pi^T 1 = q.

    Returns (cost, plan, duals) with duals = (f, g) satisfying
    C_ij - f_i - g_j >= 0 at optimality up to solver tolerance.
    """
    n0, n1 = C.shape
    var = np.arange(n0 * n1)
    rows = np.concatenate([var // n1, n0 + var % n1])
    cols = np.concatenate([var, var])
    A = sparse.coo_matrix(
        (np.ones(2 * n0 * n1), (rows, cols)), shape=(n0 + n1, n0 * n1)
    ).tocsr()
    res = linprog(
        C.ravel(), A_eq=A, b_eq=np.concatenate([p, q]),
        bounds=(0, None), method="highs-ipm",
    )
    if not res.success:
        raise RuntimeError(f"transportation LP failed: {res.message}")
    duals = np.asarray(res.eqlin.marginals)
    return float(res.fun), res.x.reshape(n0, n1), (duals[:n0], duals[n0:])


def entropic_w1(p: np.ndarray, q: np.ndarray, C: np.ndarray,
                eps_factor: float = 1e-3, max_iters: int = 20_000) -> float:
    """Balanced log-domain scaling with epsilon annealed down to
    eps_factor x mean cost; returns the transport cost of the final plan."""
    mean_c = float(C.mean()) if C.size else 1.0
    if mean_c <= 0:
        return 0.0
    lp = np.log(np.where(p > 0, p, 1.0))
    lq = np.log(np.where(q > 0, q, 1.0))
    f = np.zeros(len(p))
    g = np.zeros(len(q))
    for eps in mean_c * np.geomspace(1.0, eps_factor, 4):
        for _ in range(max_iters // 4):
            M = (-C + g[None, :]) / eps + lq[None, :]
            f_new = -eps * _lse_rows(M)
            M = ((-C + f_new[:, None]) / eps + lp[:, None]).T
            g = -eps * _lse_rows(M)
            if np.max(np.abs(f_new - f)) < 1e-10 * eps:
                f = f_new
                break
            f = f_new
    log_pi = (f[:, None] + g[None, :] - C) / eps + lp[:, None] + lq[None, :]
    pi = np.exp(log_pi)
    pi[p <= 0] = 0.0
    pi[:, q <= 0] = 0.0
    return float(np.sum(pi * C))


def _lse_rows(M: np.ndarray) -> np.ndarray:
    mx = M.max(axis=1)
    return mx + np.log(np.sum(np.exp(M - mx[:, None]), axis=1))


def wasserstein1(P: WeightedCloud, Q: WeightedCloud,
                 subsample: int = SUBSAMPLE_CAP, seed: int = 0) -> float:
    """Weighted 1-Wasserstein distance with Euclidean ground cost.

    Clouds larger than the cap are resampled proportionally to weight
    (seeded), then the transportation problem is solved exactly. If the LP
    fails the entropic fallback is used and flagged with a warning.
    """
    rng = np.random.default_rng(seed)
    Xp, wp = _resample(P, subsample, rng)
    Xq, wq = _resample(Q, subsample, rng)
    C = cdist(Xp, Xq)
    try:
        cost, _, _ = exact_transport(wp, wq, C)
    except RuntimeError as exc:
        warnings.warn(
            f"exact transport failed ({exc}); using entropic approximation",
            RuntimeWarning,
        )
        cost = entropic_w1(wp, wq, C)
    return cost


def rme(predicted_ratio: float, n_k: int, n_0: int) -> float:
    """Relative mass error |predicted - n_k/n_0| / (n_k/n_0)."""
    if n_0 <= 0 or n_k <= 0:
        raise ValueError(f"counts must be positive, got {n_k}, {n_0}")
    true_ratio = n_k / n_0
    return abs(predicted_ratio - true_ratio) / true_ratio


def growth_correlation(pred: np.ndarray, truth: np.ndarray) -> float:
    """Pearson correlation between predicted and true growth rates."""
    pred = np.asarray(pred, float)
    truth = np.asarray(truth, float)
    if pred.shape != truth.shape or pred.ndim != 1 or len(pred) < 2:
        raise ValueError("need two equal-length vectors of length >= 2")
    dp = pred - pred.mean()
    dt_ = truth - truth.mean()
    vp = float(dp @ dp)
    vt = float(dt_ @ dt_)
    if vp == 0.0 or vt == 0.0:
        raise ValueError("correlation undefined: zero variance input")
    return float(dp @ dt_) / np.sqrt(vp * vt)


def static_action_reference(snapshots, delta: float,
                            oet_cfg: OetConfig | None = None) -> float:
    """Multi-interval static reference for the trajectory action.

    Sum over intervals of (t_K - t_0)/(t_{k+1} - t_k) times the squared
    static distance between the interval's marginals, with every point of
    both snapshots weighted 1/n_k so mass grows with the counts, matching
    the convention of the trained trajectories (unit mass per source
    particle at t_0).
    """
    total = snapshots.times[-1] - snapshots.times[0]
    ref = 0.0
    n0 = snapshots.counts[0]
    for k in range(len(snapshots.times) - 1):
        dt = snapshots.times[k + 1] - snapshots.times[k]
        nk = snapshots.counts[k]
        nk1 = snapshots.counts[k + 1]
        mu0 = np.full(nk, 1.0 / n0)
        mu1 = np.full(nk1, 1.0 / n0)
        ref += (total / dt) * static_wfr_squared(
            mu0, mu1, snapshots.points[k], snapshots.points[k + 1],
            delta, oet_cfg,
        )
    return ref


def write_evaluation_report(path: str, per_time: dict, g_corr: float | None = None) -> None:
    """JSON report keyed by time: {w1, rme, n_pred, n_true}, plus optional
    growth correlation."""
    payload = {"per_time": per_time}
    if g_corr is not None:
        payload["g_corr"] = g_corr
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
