"""Simulation-free training of the velocity and growth networks.

Per consecutive snapshot pair: solve the (mini-batch) entropy-transport
problem, extract the semi-coupling, and turn it into a discrete pair
distribution with per-pair mass ratios. Each step samples pairs and path
times, builds closed-form conditional targets, and regresses both networks
on the mass-weighted flow-matching loss

    mean_i  w_i (||v(x_i, t_i) - u_i||^2 + kappa (g(x_i, t_i) - g_i)^2).
"""

from __future__ import annotations

import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import nn
from .datagen import SnapshotSet
from .geometry import WfrConfig, batched_targets
from .oet import OetConfig, build_cost, minibatch_oet, semi_coupling, solve_oet

PAIR_SAMPLING_MODES = ("proportional", "uniform")


@dataclass
class TrainConfig:
    """Training knobs; None fields are resolved from the data.

    kappa=None uses delta^2 so the growth term carries the same weight as
    in the underlying action. sigma=None uses 0.02 x the median pairwise
    distance of each interval's pooled clouds. ot_batch=None solves each
    interval's transport problem in one full batch.

    pair_sampling "proportional" draws pairs from the sent-mass
    distribution and weighs samples by the path mass m_t; "uniform" draws
    pairs uniformly over the support and folds the pair probability into
    the weight. Both estimate the same expected loss.
    """

    delta: float = 1.0
    sigma: float | None = None
    kappa: float | None = None
    epochs: int = 2000
    batch_size: int = 256
    ot_batch: int | None = None
    oet: OetConfig | None = None
    hidden: tuple[int, ...] = (256, 256, 256, 256, 256)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    pair_sampling: str = "proportional"
    t_per_batch: bool = False
    mass_floor: float = 1e-4
    log_path: str | None = None

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if self.kappa is not None and self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.pair_sampling not in PAIR_SAMPLING_MODES:
            raise ValueError(
                f"pair_sampling must be one of {PAIR_SAMPLING_MODES}, "
                f"got {self.pair_sampling!r}"
            )

    def wfr(self) -> WfrConfig:
        return WfrConfig(
            delta=self.delta,
            sigma=0.0 if self.sigma is None else self.sigma,
            mass_floor=self.mass_floor,
        )

    def kappa_value(self) -> float:
        return self.delta**2 if self.kappa is None else self.kappa


@dataclass
class IntervalCoupling:
    """One interval's sampling table: pairs, probabilities, mass ratios."""

    index: int
    t0: float
    t1: float
    x0: np.ndarray
    x1: np.ndarray
    probs: np.ndarray
    mass_ratio: np.ndarray
    sigma: float
    cum: np.ndarray = field(init=False)

    @property
    def dt(self) -> float:
        return self.t1 - self.t0

    def __post_init__(self) -> None:
        total = self.probs.sum()
        if not np.isclose(total, 1.0, atol=1e-8):
            raise ValueError(f"pair probabilities sum to {total}, expected 1")
        self.cum = np.cumsum(self.probs)
        self.cum[-1] = 1.0


@dataclass
class TrainingBatch:
    """Positions, absolute times, rescaled targets and mass weights."""

    x: np.ndarray
    t_global: np.ndarray
    u_target: np.ndarray
    g_target: np.ndarray
    w: np.ndarray


@dataclass
class ModelPair:
    """Trained velocity and growth networks plus the scales they assume."""

    velocity: nn.Mlp
    growth: nn.Mlp
    delta: float
    times: list[float]


def _interval_sigma(X0: np.ndarray, X1: np.ndarray, seed: int, cap: int = 2000) -> float:
    pool = np.vstack([X0, X1])
    if len(pool) > cap:
        idx = np.random.default_rng(seed).choice(len(pool), cap, replace=False)
        pool = pool[idx]
    med = float(np.median(pdist(pool)))
    return 0.02 * med


def prepare_couplings(snapshots: SnapshotSet, cfg: TrainConfig) -> list[IntervalCoupling]:
    """Solve transport per interval and build the pair-sampling tables.

    Every point of both snapshots carries weight 1/n_k (the source count),
    so mass ratios track the count ratio n_{k+1}/n_k. Support pairs whose
    transport cost is infinite (endpoints at or beyond pi*delta) are
    dropped with a warning; an interval with no affordable pair at all is
    an error suggesting a larger delta.
    """
    if len(snapshots.times) < 2:
        raise ValueError("need at least two snapshots")
    if any(n < 1 for n in snapshots.counts):
        raise ValueError("each snapshot needs at least one sample")
    couplings = []
    for k in range(len(snapshots.times) - 1):
        X0, X1 = snapshots.points[k], snapshots.points[k + 1]
        n0 = len(X0)
        if cfg.ot_batch is not None:
            blocks = minibatch_oet(X0, X1, cfg.ot_batch, cfg.delta,
                                   cfg.oet, seed=cfg.seed + 1000 * k)
        else:
            mu0 = np.full(n0, 1.0 / n0)
            mu1 = np.full(len(X1), 1.0 / n0)
            C = build_cost(X0, X1, cfg.delta)
            plan = solve_oet(mu0, mu1, C, cfg.oet, row_points=X0,
                             col_points=X1, delta=cfg.delta)
            blocks = [((np.arange(n0), np.arange(len(X1))), plan)]

        px0, px1, g0s, ratios = [], [], [], []
        for (idx0, idx1), plan in blocks:
            if not np.any(np.isfinite(plan.cost)):
                continue
            mu0 = np.full(len(idx0), 1.0 / n0)
            mu1 = np.full(len(idx1), 1.0 / n0)
            sc = semi_coupling(plan, mu0, mu1, cfg.mass_floor)
            support = (sc.gamma0 > 0) & np.isfinite(plan.cost)
            if np.any((sc.gamma0 > 0) & ~np.isfinite(plan.cost)):
                warnings.warn(
                    f"interval {k}: dropping support pairs beyond the "
                    f"pi*delta cutoff; consider a larger delta",
                    RuntimeWarning,
                )
            rows, cols = np.nonzero(support)
            px0.append(X0[idx0][rows])
            px1.append(X1[idx1][cols])
            g0s.append(sc.gamma0[rows, cols])
            ratios.append(sc.gamma1[rows, cols] / sc.gamma0[rows, cols])
        if not px0:
            min_dist = float(np.min(cdist(X0, X1)))
            raise ValueError(
                f"interval {k} ({snapshots.times[k]} -> {snapshots.times[k + 1]}): "
                f"all pairings cost infinity; increase delta above "
                f"{min_dist / np.pi:.4g}"
            )
        gamma0 = np.concatenate(g0s)
        sigma = cfg.sigma if cfg.sigma is not None else _interval_sigma(
            X0, X1, seed=cfg.seed + 7000 + k
        )
        couplings.append(IntervalCoupling(
            index=k,
            t0=float(snapshots.times[k]),
            t1=float(snapshots.times[k + 1]),
            x0=np.vstack(px0),
            x1=np.vstack(px1),
            probs=gamma0 / gamma0.sum(),
            mass_ratio=np.maximum(np.concatenate(ratios), cfg.mass_floor),
            sigma=sigma,
        ))
    return couplings


def make_batch(
    couplings: list[IntervalCoupling],
    rng: np.random.Generator,
    cfg: TrainConfig,
) -> TrainingBatch:
    """Sample batch_size (pair, time) draws per interval and concatenate.

    Targets are rescaled by 1/(t_{k+1}-t_k) so the networks see absolute
    time; sampled positions are the geodesic center plus sigma-Gaussian
    noise.
    """
    wfr = cfg.wfr()
    xs, ts, us, gs, ws = [], [], [], [], []
    for c in couplings:
        b = cfg.batch_size
        if cfg.pair_sampling == "proportional":
            idx = np.searchsorted(c.cum, rng.random(b), side="right")
            extra_w = 1.0
        else:
            idx = rng.integers(0, len(c.probs), b)
            extra_w = c.probs[idx] * len(c.probs)
        if cfg.t_per_batch:
            t = np.full(b, rng.random())
        else:
            t = rng.random(b)
        mean, u, g, m = batched_targets(c.x0[idx], c.x1[idx],
                                        c.mass_ratio[idx], t, wfr)
        x = mean
        if c.sigma > 0:
            x = mean + c.sigma * rng.standard_normal(mean.shape)
        xs.append(x)
        ts.append(c.t0 + c.dt * t)
        us.append(u / c.dt)
        gs.append(g / c.dt)
        ws.append(m * extra_w)
    return TrainingBatch(
        x=np.vstack(xs),
        t_global=np.concatenate(ts),
        u_target=np.vstack(us),
        g_target=np.concatenate(gs),
        w=np.concatenate(ws),
    )


def cufm_loss(
    vel_net: nn.Mlp,
    growth_net: nn.Mlp,
    batch: TrainingBatch,
    kappa: float,
):
    """Mass-weighted regression loss and its gradients at the network outputs.

    Returns (loss, velocity part, growth part, dLoss/dv, dLoss/dg) where the
    output gradients already include the 1/N batch mean and the weights.
    """
    v = nn.forward(vel_net, batch.x, batch.t_global)
    g = nn.forward(growth_net, batch.x, batch.t_global)[:, 0]
    dv = v - batch.u_target
    dg = g - batch.g_target
    n = len(batch.x)
    vel_part = float(np.mean(batch.w * np.sum(dv * dv, axis=1)))
    growth_part = kappa * float(np.mean(batch.w * dg * dg))
    grad_v = 2.0 * batch.w[:, None] * dv / n
    grad_g = (2.0 * kappa * batch.w * dg / n)[:, None]
    return vel_part + growth_part, vel_part, growth_part, grad_v, grad_g


def train(snapshots: SnapshotSet, cfg: TrainConfig):
    """Full loop: couple, then epochs of sample / regress / Adam-update.

    Returns (ModelPair, log) where log is a list of per-epoch records; the
    same records go to cfg.log_path as JSON lines when set. Deterministic
    per seed. A non-finite loss aborts with the offending batch statistics.
    """
    couplings = prepare_couplings(snapshots, cfg)
    d = snapshots.dim
    vel_net = nn.init([d + 1, *cfg.hidden, d], seed=cfg.seed + 1)
    growth_net = nn.init([d + 1, *cfg.hidden, 1], seed=cfg.seed + 2)
    vel_state = nn.adam_init(vel_net, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    growth_state = nn.adam_init(growth_net, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rng = np.random.default_rng([cfg.seed, 0xBA7C])
    kappa = cfg.kappa_value()

    log: list[dict] = []
    log_fh = open(cfg.log_path, "w") if cfg.log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            start = time.perf_counter()
            batch = make_batch(couplings, rng, cfg)
            loss, vel_part, growth_part, grad_v, grad_g = cufm_loss(
                vel_net, growth_net, batch, kappa
            )
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}; batch stats: "
                    f"|x| max {np.abs(batch.x).max():.3g}, "
                    f"|u| max {np.abs(batch.u_target).max():.3g}, "
                    f"|g| max {np.abs(batch.g_target).max():.3g}, "
                    f"w max {batch.w.max():.3g}"
                )
            nn.adam_step(vel_net,
                         nn.backward(vel_net, batch.x, batch.t_global, grad_v),
                         vel_state)
            nn.adam_step(growth_net,
                         nn.backward(growth_net, batch.x, batch.t_global, grad_g),
                         growth_state)
            record = {
                "epoch": epoch,
                "loss": loss,
                "velocity_loss": vel_part,
                "growth_loss": growth_part,
                "wall_time": time.perf_counter() - start,
            }
            log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    models = ModelPair(velocity=vel_net, growth=growth_net,
                       delta=cfg.delta, times=[float(t) for t in snapshots.times])
    return models, log


def save_models(models: ModelPair, path: str) -> None:
    """Directory with one checkpoint per network plus a JSON scale file."""
    os.makedirs(path, exist_ok=True)
    nn.save(models.velocity, os.path.join(path, "velocity.npz"))
    nn.save(models.growth, os.path.join(path, "growth.npz"))
    with open(os.path.join(path, "models.json"), "w") as fh:
        json.dump({"delta": models.delta, "times": models.times}, fh, indent=2)


def load_models(path: str) -> ModelPair:
    try:
        with open(os.path.join(path, "models.json")) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"unreadable model directory {path}: {exc}") from exc
    return ModelPair(
        velocity=nn.load(os.path.join(path, "velocity.npz")),
        growth=nn.load(os.path.join(path, "growth.npz")),
        delta=float(meta["delta"]),
        times=[float(t) for t in meta["times"]],
    )
