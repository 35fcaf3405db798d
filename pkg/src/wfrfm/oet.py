"""Static optimal entropy-transport solver and semi-coupling extraction.

Solves min <C, gamma> + KL(gamma 1 | mu0) + KL(gamma^T 1 | mu1) by entropic
scaling iterations (optionally in the log domain), where C is the
-2 ln cos transport cost of the WFR geometry. The optimal plan is turned
into the semi-coupling (gamma0, gamma1) whose marginals match the source and
target exactly; the pair encodes how much mass each matched pair sends and
receives.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import WfrConfig, log_cos_cost


class ScalingOverflowError(FloatingPointError):
    """Non-log scaling overflowed; retry with log_domain=True."""


@dataclass
class OetConfig:
    """Solver knobs.

    epsilon=None picks 0.05 x the mean finite cost entry. log_domain=None
    uses the absorbed-offset scaling solver, which stays stable at small
    epsilon; log_domain=True switches to explicit log-domain updates.
    The iteration contracts at rate 1/(1+epsilon), so small epsilon needs
    many (cheap) iterations; max_iters is sized for that.
    record_dual_every > 0 stores the regularized dual objective every that
    many iterations (test instrumentation).
    """

    epsilon: float | None = None
    max_iters: int = 200000
    marginal_tol: float = 1e-10
    log_domain: bool | None = None
    record_dual_every: int = 0

    def __post_init__(self) -> None:
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.marginal_tol <= 0:
            raise ValueError(f"marginal_tol must be positive, got {self.marginal_tol}")


@dataclass
class CouplingPlan:
    """Entropic OET plan with the data needed to audit it."""

    gamma: np.ndarray
    cost: np.ndarray
    delta: float
    epsilon: float
    converged: bool
    residual: float
    iterations: int
    row_points: np.ndarray | None = None
    col_points: np.ndarray | None = None
    dual_history: list[float] = field(default_factory=list)


@dataclass
class SemiCoupling:
    """Sent/received mass pair (gamma0, gamma1) plus degeneracy flags."""

    gamma0: np.ndarray
    gamma1: np.ndarray
    pure_death_rows: np.ndarray
    pure_birth_cols: np.ndarray


def generalized_kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) = sum p ln(p/q) - p + q, with the 0 ln 0 = 0 convention."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    pos = p > 0
    out = float(np.sum(q) - np.sum(p))
    out += float(np.sum(p[pos] * np.log(p[pos] / q[pos])))
    return out


def build_cost(X0: np.ndarray, X1: np.ndarray, delta: float) -> np.ndarray:
    """Pairwise -2 ln cos(dist / 2 delta) costs; +inf beyond the pi*delta cutoff."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    D = cdist(np.asarray(X0, float), np.asarray(X1, float))
    half = D / (2.0 * delta)
    C = np.full_like(D, np.inf)
    ok = half < np.pi / 2.0
    C[ok] = -2.0 * np.log(np.cos(half[ok]))
    return C


def default_epsilon(C: np.ndarray) -> float:
    """0.05 x mean finite cost entry, floored away from zero.

    Scaling costs with the data keeps the pairing blur radius proportional
    to the cloud scale; nearly-overlapping snapshots get a sharp coupling
    rather than one blurred across the whole cloud.
    """
    finite = C[np.isfinite(C)]
    if finite.size == 0:
        return 1e-3
    return max(0.05 * float(finite.mean()), 1e-6)


def dual_objective(
    mu0: np.ndarray, mu1: np.ndarray, C: np.ndarray,
    f: np.ndarray, g: np.ndarray, epsilon: float,
) -> float:
    """Regularized dual, nondecreasing under the alternating updates."""
    with np.errstate(over="ignore"):
        mass = np.exp(
            (f[:, None] + g[None, :] - C) / epsilon
            + np.log(mu0)[:, None] + np.log(mu1)[None, :]
        )
    val = -float(mu0 @ (np.exp(-f) - 1.0)) - float(mu1 @ (np.exp(-g) - 1.0))
    return val - epsilon * float(np.sum(mass[np.isfinite(mass)]))


def solve_oet(
    mu0: np.ndarray,
    mu1: np.ndarray,
    C: np.ndarray,
    cfg: OetConfig | None = None,
    row_points: np.ndarray | None = None,
    col_points: np.ndarray | None = None,
    delta: float = 1.0,
) -> CouplingPlan:
    """Entropic scaling iterations for the OET problem.

    Minimizes <C, gamma> + KL(gamma 1 | mu0) + KL(gamma^T 1 | mu1)
    + epsilon KL(gamma | mu0 x mu1). The scaling exponent 1/(1+epsilon) is
    the proximal step for unit-weight KL marginal penalties. Non-convergence
    returns the plan with converged=False and a warning.
    """
    cfg = cfg or OetConfig()
    mu0 = np.asarray(mu0, float)
    mu1 = np.asarray(mu1, float)
    C = np.asarray(C, float)
    if np.any(mu0 <= 0) or np.any(mu1 <= 0):
        raise ValueError("marginal weights must be positive")
    eps = cfg.epsilon if cfg.epsilon is not None else default_epsilon(C)
    # the absorbed-offset plain solver is stable at small epsilon and its
    # iterations are dense matvecs, so it is the default everywhere
    log_domain = cfg.log_domain if cfg.log_domain is not None else False

    if not np.any(np.isfinite(C)):
        # every pairing has infinite cost: destroy mu0, create mu1
        return CouplingPlan(
            gamma=np.zeros_like(C), cost=C, delta=delta, epsilon=eps,
            converged=True, residual=0.0, iterations=0,
            row_points=row_points, col_points=col_points,
        )

    if log_domain:
        gamma, f, g, converged, residual, iters, hist = _solve_log(mu0, mu1, C, eps, cfg)
    else:
        gamma, f, g, converged, residual, iters, hist = _solve_plain(mu0, mu1, C, eps, cfg)

    if not converged:
        warnings.warn(
            f"OET scaling did not converge in {cfg.max_iters} iterations "
            f"(residual {residual:.3g})",
            RuntimeWarning,
        )
    gamma[~np.isfinite(C)] = 0.0
    return CouplingPlan(
        gamma=gamma, cost=C, delta=delta, epsilon=eps,
        converged=converged, residual=residual, iterations=iters,
        row_points=row_points, col_points=col_points, dual_history=hist,
    )


def _solve_log(mu0, mu1, C, eps, cfg):
    n0, n1 = C.shape
    expo = eps / (1.0 + eps)
    lmu0 = np.log(mu0)
    lmu1 = np.log(mu1)
    with np.errstate(divide="ignore"):
        negC = np.where(np.isfinite(C), -C, -np.inf)
    f = np.zeros(n0)
    g = np.zeros(n1)
    hist: list[float] = []
    residual = np.inf
    for it in range(1, cfg.max_iters + 1):
        # S_i = sum_j mu1_j exp((g_j - C_ij)/eps); f = -eps/(1+eps) ln S
        S = _logsumexp_rows(negC / eps + (lmu1 + g / eps)[None, :])
        f_new = np.where(np.isfinite(S), -expo * S, 0.0)
        T = _logsumexp_rows((negC / eps + (lmu0 + f_new / eps)[:, None]).T)
        g_new = np.where(np.isfinite(T), -expo * T, 0.0)
        residual = max(
            float(np.max(np.abs(f_new - f))), float(np.max(np.abs(g_new - g)))
        ) / eps
        f, g = f_new, g_new
        if cfg.record_dual_every and it % cfg.record_dual_every == 0:
            hist.append(dual_objective(mu0, mu1, C, f, g, eps))
        if residual < cfg.marginal_tol:
            with np.errstate(divide="ignore"):
                log_gamma = (f[:, None] + g[None, :]) / eps + negC / eps \
                    + lmu0[:, None] + lmu1[None, :]
            return np.exp(log_gamma), f, g, True, residual, it, hist
    with np.errstate(divide="ignore"):
        log_gamma = (f[:, None] + g[None, :]) / eps + negC / eps \
            + lmu0[:, None] + lmu1[None, :]
    return np.exp(log_gamma), f, g, False, residual, cfg.max_iters, hist


def _logsumexp_rows(M: np.ndarray) -> np.ndarray:
    mx = np.max(M, axis=1)
    out = np.full(M.shape[0], -np.inf)
    ok = np.isfinite(mx)
    if np.any(ok):
        out[ok] = mx[ok] + np.log(
            np.sum(np.exp(M[ok] - mx[ok][:, None]), axis=1)
        )
    return out


def _log_row_update(off_self, off_other, cost_rows, ln_other, mu_self,
                    mu_other, eps):
    """Exact scaling update for rows whose kernel sum underflowed to zero."""
    expo = 1.0 / (1.0 + eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        M = np.where(
            np.isfinite(cost_rows),
            (off_self[:, None] + off_other[None, :] - cost_rows) / eps,
            -np.inf,
        )
        M = M + (np.log(mu_other) + ln_other)[None, :] + np.log(mu_self)[:, None]
    ln_sum = _logsumexp_rows(M)
    ln_scale = -off_self * expo + expo * (np.log(mu_self) - ln_sum)
    return np.exp(np.minimum(ln_scale, 667.0))


def _solve_plain(mu0, mu1, C, eps, cfg):
    """Scaling iterations with periodic absorption.

    When a scaling factor drifts near the floating-point range, its log is
    absorbed into the dual offsets (f_off, g_off) and the kernel is rebuilt
    around them. Iterations stay cheap dense matvecs while small epsilon
    remains representable; with absorbed offsets the row update gains the
    factor exp(-f_off / (1 + eps)).
    """
    n0, n1 = C.shape
    finiteC = np.isfinite(C)
    f_off = np.zeros(n0)
    g_off = np.zeros(n1)
    a = np.ones(n0)
    b = np.ones(n1)
    expo = 1.0 / (1.0 + eps)
    hist: list[float] = []
    residual = np.inf
    absorb_limit = np.exp(200.0)

    def kernel():
        with np.errstate(invalid="ignore"):
            expt = np.where(finiteC, f_off[:, None] + g_off[None, :] - C, -np.inf)
        # cap keeps kernel * scaling products finite; it only binds for
        # plan entries absurdly far above the product measure
        return np.where(
            finiteC, np.exp(np.minimum(expt, 100.0 * eps) / eps), 0.0
        ) * (mu0[:, None] * mu1[None, :])

    live_rows = finiteC.any(axis=1)
    live_cols = finiteC.any(axis=0)
    xi = kernel()
    fa = np.exp(-f_off * expo)
    gb = np.exp(-g_off * expo)
    for it in range(1, cfg.max_iters + 1):
        with np.errstate(over="ignore"):
            sb = xi @ b
            a_new = np.where(
                sb > 0, fa * (mu0 / np.where(sb > 0, sb, 1.0)) ** expo, 1.0
            )
            dead = (sb == 0.0) & live_rows
            if np.any(dead):
                # kernel row underflowed at the current offsets: redo the
                # update in log space so the row can still attract mass
                a_new[dead] = _log_row_update(
                    f_off[dead], g_off, C[dead], np.log(b),
                    mu0[dead], mu1, eps,
                )
            a_new = np.minimum(a_new, 1e290)
            sa = xi.T @ a_new
            b_new = np.where(
                sa > 0, gb * (mu1 / np.where(sa > 0, sa, 1.0)) ** expo, 1.0
            )
            dead = (sa == 0.0) & live_cols
            if np.any(dead):
                b_new[dead] = _log_row_update(
                    g_off[dead], f_off, C.T[dead], np.log(a_new),
                    mu1[dead], mu0, eps,
                )
            b_new = np.minimum(b_new, 1e290)
        if not (np.all(np.isfinite(a_new)) and np.all(np.isfinite(b_new))):
            raise ScalingOverflowError(
                "scaling iterations overflowed; retry with log_domain=True"
            )
        with np.errstate(divide="ignore", invalid="ignore"):
            residual = max(
                float(np.max(np.abs(a_new / a - 1.0))),
                float(np.max(np.abs(b_new / b - 1.0))),
            )
        a, b = a_new, b_new
        if cfg.record_dual_every and it % cfg.record_dual_every == 0:
            hist.append(dual_objective(
                mu0, mu1, C, f_off + eps * np.log(a), g_off + eps * np.log(b), eps
            ))
        if residual < cfg.marginal_tol:
            break
        amax = max(float(a.max()), float(1.0 / max(a.min(), 1e-300)))
        bmax = max(float(b.max()), float(1.0 / max(b.min(), 1e-300)))
        if max(amax, bmax) > absorb_limit:
            with np.errstate(divide="ignore"):
                f_off = f_off + eps * np.log(a)
                g_off = g_off + eps * np.log(b)
            f_off = np.where(np.isfinite(f_off), f_off, 0.0)
            g_off = np.where(np.isfinite(g_off), g_off, 0.0)
            a = np.ones(n0)
            b = np.ones(n1)
            xi = kernel()
            fa = np.exp(-f_off * expo)
            gb = np.exp(-g_off * expo)
    gamma = a[:, None] * xi * b[None, :]
    with np.errstate(divide="ignore"):
        f = f_off + eps * np.log(a)
        g = g_off + eps * np.log(b)
    return gamma, f, g, residual < cfg.marginal_tol, residual, it, hist


def oet_objective(plan: CouplingPlan, mu0: np.ndarray, mu1: np.ndarray) -> float:
    """Unregularized objective <C, gamma> + KL penalties on both marginals."""
    gamma = plan.gamma
    finite = np.isfinite(plan.cost)
    transport = float(np.sum(plan.cost[finite] * gamma[finite]))
    return transport + generalized_kl(gamma.sum(axis=1), mu0) \
        + generalized_kl(gamma.sum(axis=0), mu1)


def static_wfr_squared(
    mu0: np.ndarray,
    mu1: np.ndarray,
    X0: np.ndarray,
    X1: np.ndarray,
    delta: float,
    cfg: OetConfig | None = None,
) -> float:
    """2 delta^2 x OET objective at the solved plan (static reference value)."""
    C = build_cost(X0, X1, delta)
    plan = solve_oet(mu0, mu1, C, cfg, row_points=X0, col_points=X1, delta=delta)
    return 2.0 * delta**2 * oet_objective(plan, mu0, mu1)


def semi_coupling(
    plan: CouplingPlan,
    mu0: np.ndarray,
    mu1: np.ndarray,
    mass_floor: float = WfrConfig.mass_floor,
) -> SemiCoupling:
    """Sent/received masses per pair via row/column normalization of the plan.

    Rows that send (almost) nothing are flagged pure-death and pinned on
    their cheapest column with received mass mass_floor x mu0_i. Columns that
    receive (almost) nothing are flagged pure-birth and folded onto the
    cheapest source row (its gamma0 row is reweighted to keep the marginal).
    """
    gamma = plan.gamma
    mu0 = np.asarray(mu0, float)
    mu1 = np.asarray(mu1, float)
    rowsum = gamma.sum(axis=1)
    colsum = gamma.sum(axis=0)
    dead = rowsum < mass_floor * mu0
    born = colsum < mass_floor * mu1

    safe_row = np.where(dead, 1.0, rowsum)
    safe_col = np.where(born, 1.0, colsum)
    gamma0 = gamma / safe_row[:, None] * mu0[:, None]
    gamma1 = gamma / safe_col[None, :] * mu1[None, :]
    gamma0[dead] = 0.0
    gamma1[:, born] = 0.0

    for i in np.flatnonzero(dead):
        j = int(np.argmin(plan.cost[i]))
        gamma0[i, j] = mu0[i]
        gamma1[i, j] = mass_floor * mu0[i]
    for j in np.flatnonzero(born):
        i = int(np.argmin(plan.cost[:, j]))
        gamma1[i, j] = mu1[j]
        gamma0[i, j] = max(gamma0[i, j], mass_floor * mu0[i])
        scale = mu0[i] / gamma0[i].sum()
        gamma0[i] *= scale
    return SemiCoupling(
        gamma0=gamma0, gamma1=gamma1,
        pure_death_rows=dead, pure_birth_cols=born,
    )


def minibatch_oet(
    D0: np.ndarray,
    D1: np.ndarray,
    batch_size: int,
    delta: float,
    cfg: OetConfig | None = None,
    seed: int = 0,
) -> list[tuple[tuple[np.ndarray, np.ndarray], CouplingPlan]]:
    """Independent block OET plans on seeded random partitions of both sets.

    Every source and target point carries weight 1/n0, so the total source
    mass across blocks is 1 and the total target mass is n1/n0 (the count
    ratio the learned growth must reproduce).
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    D0 = np.asarray(D0, float)
    D1 = np.asarray(D1, float)
    n0, n1 = len(D0), len(D1)
    rng = np.random.default_rng(seed)
    n_batches = max(1, -(-n0 // batch_size))
    if n_batches == 1:
        parts0 = [np.arange(n0)]
        parts1 = [np.arange(n1)]
    else:
        parts0 = np.array_split(rng.permutation(n0), n_batches)
        parts1 = np.array_split(rng.permutation(n1), n_batches)
    out = []
    for idx0, idx1 in zip(parts0, parts1):
        X0, X1 = D0[idx0], D1[idx1]
        mu0 = np.full(len(idx0), 1.0 / n0)
        mu1 = np.full(len(idx1), 1.0 / n0)
        C = build_cost(X0, X1, delta)
        plan = solve_oet(mu0, mu1, C, cfg, row_points=X0, col_points=X1, delta=delta)
        out.append(((idx0, idx1), plan))
    return out


def dump_plan(plan: CouplingPlan, path: str) -> None:
    """Write the plan matrix as decimal text plus a JSON metadata sidecar."""
    np.savetxt(path, plan.gamma)
    meta = {
        "shape": list(plan.gamma.shape),
        "delta": plan.delta,
        "epsilon": plan.epsilon,
        "converged": plan.converged,
        "residual": plan.residual,
        "iterations": plan.iterations,
        "total_mass": float(plan.gamma.sum()),
    }
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
