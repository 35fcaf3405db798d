"""Synthetic snapshot generators with known ground truth.

Two benchmarks: a three-gene regulatory network simulated per cell by
Euler-Maruyama with probabilistic division (growth driven by the second
gene), and an unbalanced Gaussian-mixture pair modeling proliferation of
one component. Both emit a SnapshotSet: time-labeled point clouds with
uniform weights, optional per-point true growth rates and component labels.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np


@dataclass
class SnapshotSet:
    """Time-labeled point clouds with per-point weights and optional truth."""

    times: list[float]
    points: list[np.ndarray]
    weights: list[np.ndarray]
    growth: list[np.ndarray | None]
    labels: list[np.ndarray | None]
    meta: dict = field(default_factory=dict)

    @property
    def counts(self) -> list[int]:
        return [len(p) for p in self.points]

    @property
    def dim(self) -> int:
        return self.points[0].shape[1]

    def __post_init__(self) -> None:
        if len(self.times) != len(self.points):
            raise ValueError("times and points length mismatch")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise ValueError(f"times must be increasing, got {self.times}")
        for p, w in zip(self.points, self.weights):
            if len(p) != len(w):
                raise ValueError("weights do not match point counts")


@dataclass
class GeneSimParams:
    """Rates of the three-gene toggle network and the division process.

    The first two genes mutually inhibit and self-activate (a bistable
    toggle); the third stays near zero and weakly inhibits both. Division
    probability per step is g * dt_sim with g = alpha_g * X2^2 / (1 + X2^2).
    """

    alpha: tuple[float, float, float] = (1.0, 1.0, 1.0)
    beta: float = 0.2
    gamma: tuple[float, float, float] = (1.0, 1.0, 1.0)
    decay: tuple[float, float, float] = (0.25, 0.25, 0.5)
    eta: tuple[float, float, float] = (0.05, 0.05, 0.02)
    alpha_g: float = 0.06
    dt_sim: float = 0.01
    division_jitter: float = 0.05
    record_times: tuple[float, ...] = (0.0, 8.0, 16.0, 24.0, 32.0)
    n_steady: int = 250
    n_transition: int = 250
    steady_center: tuple[float, float, float] = (3.7, 0.055, 0.0)
    transition_center: tuple[float, float, float] = (0.15, 1.0, 0.0)
    init_spread: float = 0.1
    population_cap: int = 100_000
    project_2d: bool = True

    def __post_init__(self) -> None:
        if self.dt_sim <= 0:
            raise ValueError(f"dt_sim must be positive, got {self.dt_sim}")
        if any(r < 0 for r in (*self.alpha, self.beta, *self.gamma,
                               *self.decay, *self.eta, self.alpha_g)):
            raise ValueError("rate constants must be nonnegative")
        if any(b <= a for a, b in zip(self.record_times, self.record_times[1:])):
            raise ValueError(f"record_times must be increasing, got {self.record_times}")


def _gene_drift(X: np.ndarray, p: GeneSimParams) -> np.ndarray:
    a1, a2, a3 = p.alpha
    g1, g2, g3 = p.gamma
    d1, d2, d3 = p.decay
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    s1, s2, s3 = a1 * x1 * x1, a2 * x2 * x2, a3 * x3 * x3
    q2, q3 = g2 * x2 * x2, g3 * x3 * x3
    q1 = g1 * x1 * x1
    f1 = (s1 + p.beta) / (1.0 + s1 + q2 + q3 + p.beta) - d1 * x1
    f2 = (s2 + p.beta) / (1.0 + q1 + s2 + q3 + p.beta) - d2 * x2
    f3 = s3 / (1.0 + s3) - d3 * x3
    return np.stack([f1, f2, f3], axis=1)


def true_growth_rate(X2, alpha_g: float):
    """Ground-truth growth g = alpha_g * X2^2 / (1 + X2^2)."""
    x2sq = np.square(X2)
    return alpha_g * x2sq / (1.0 + x2sq)


def simulate_gene(params: GeneSimParams | None = None, seed: int = 0) -> SnapshotSet:
    """Euler-Maruyama per-cell simulation with probabilistic division.

    Daughters inherit the parent state plus Gaussian jitter. Snapshots are
    recorded at record_times; each carries the true growth rate per cell.
    By default the recorded clouds are projected to the (X1, X2) plane.
    """
    p = params or GeneSimParams()
    rng = np.random.default_rng(seed)
    X = np.vstack([
        np.array(p.steady_center) + p.init_spread * rng.standard_normal((p.n_steady, 3)),
        np.array(p.transition_center) + p.init_spread * rng.standard_normal((p.n_transition, 3)),
    ])
    X = np.maximum(X, 0.0)

    times, points, weights, growth, labels = [], [], [], [], []
    sqrt_dt = np.sqrt(p.dt_sim)
    eta = np.array(p.eta)
    n_steps = int(round((p.record_times[-1] - p.record_times[0]) / p.dt_sim))
    record_steps = {
        int(round((t - p.record_times[0]) / p.dt_sim)): t for t in p.record_times
    }

    def record(t: float) -> None:
        g = true_growth_rate(X[:, 1], p.alpha_g)
        pts = X[:, :2].copy() if p.project_2d else X.copy()
        times.append(float(t))
        points.append(pts)
        weights.append(np.full(len(pts), 1.0 / len(pts)))
        growth.append(g)
        labels.append(None)

    if 0 in record_steps:
        record(record_steps[0])
    for step in range(1, n_steps + 1):
        drift = _gene_drift(X, p)
        noise = eta * sqrt_dt * rng.standard_normal(X.shape)
        X = np.maximum(X + drift * p.dt_sim + noise, 0.0)
        g = true_growth_rate(X[:, 1], p.alpha_g)
        divide = rng.random(len(X)) < np.clip(g * p.dt_sim, 0.0, 1.0)
        if np.any(divide):
            daughters = X[divide] + p.division_jitter * rng.standard_normal(
                (int(divide.sum()), 3)
            )
            X = np.vstack([X, np.maximum(daughters, 0.0)])
        if len(X) > p.population_cap:
            raise RuntimeError(
                f"population exceeded cap {p.population_cap}; reduce alpha_g"
            )
        if step in record_steps:
            record(record_steps[step])

    meta = {"generator": "gene", "seed": seed, "params": _params_dict(p)}
    return SnapshotSet(times=times, points=points, weights=weights,
                       growth=growth, labels=labels, meta=meta)


@dataclass
class MixtureSpec:
    """Two-snapshot Gaussian mixture with exact per-component counts.

    Models proliferation of the upper component: 500 initial samples
    (100 upper / 400 lower) grow to 1400 (1000 upper / 200 + 200 in two
    lower modes). The structure lives in the first two coordinates; the
    rest is isotropic noise around zero.
    """

    dim: int = 1000
    counts0: tuple[int, ...] = (100, 400)
    counts1: tuple[int, ...] = (1000, 200, 200)
    means0: tuple[tuple[float, float], ...] = ((0.0, 2.0), (0.0, -2.0))
    means1: tuple[tuple[float, float], ...] = ((1.0, 2.0), (1.0, -1.5), (1.0, -2.5))
    std: float = 0.4
    times: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.std < 0:
            raise ValueError(f"std must be nonnegative, got {self.std}")


def gaussian_mixture_snapshots(spec: MixtureSpec | None = None, seed: int = 0) -> SnapshotSet:
    """Sample the two snapshots with exactly the specified component counts."""
    spec = spec or MixtureSpec()
    rng = np.random.default_rng(seed)

    def sample(counts, means):
        pts, labs = [], []
        for comp, (n, mean2) in enumerate(zip(counts, means)):
            center = np.zeros(spec.dim)
            center[:2] = mean2
            pts.append(center + spec.std * rng.standard_normal((n, spec.dim)))
            labs.append(np.full(n, comp))
        return np.vstack(pts), np.concatenate(labs)

    X0, lab0 = sample(spec.counts0, spec.means0)
    X1, lab1 = sample(spec.counts1, spec.means1)
    meta = {"generator": "mixture", "seed": seed, "params": _params_dict(spec)}
    return SnapshotSet(
        times=list(spec.times),
        points=[X0, X1],
        weights=[np.full(len(X0), 1.0 / len(X0)), np.full(len(X1), 1.0 / len(X1))],
        growth=[None, None],
        labels=[lab0, lab1],
        meta=meta,
    )


def _params_dict(p) -> dict:
    return json.loads(json.dumps(asdict(p)))


MANIFEST_NAME = "manifest.json"


def save_snapshots(snaps: SnapshotSet, path: str) -> None:
    """Dataset directory: manifest.json plus one tab-delimited matrix per time.

    Row layout per snapshot file follows the manifest's "columns" entry:
    optional growth, optional label, then the coordinates.
    """
    os.makedirs(path, exist_ok=True)
    columns = []
    if snaps.growth[0] is not None:
        columns.append("growth")
    if snaps.labels[0] is not None:
        columns.append("label")
    columns += [f"x{i}" for i in range(snaps.dim)]
    manifest = {
        "dimension": snaps.dim,
        "times": snaps.times,
        "counts": snaps.counts,
        "columns": columns,
        "meta": snaps.meta,
    }
    with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2)
    for k, pts in enumerate(snaps.points):
        cols = []
        if snaps.growth[k] is not None:
            cols.append(snaps.growth[k][:, None])
        if snaps.labels[k] is not None:
            cols.append(snaps.labels[k][:, None].astype(float))
        cols.append(pts)
        np.savetxt(os.path.join(path, f"snapshot_{k}.tsv"),
                   np.hstack(cols), delimiter="\t", fmt="%.17g")


def load_snapshots(path: str) -> SnapshotSet:
    """Inverse of save_snapshots; validates the manifest and row shapes."""
    manifest_path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"unreadable manifest {manifest_path}: {exc}") from exc
    for key in ("dimension", "times", "counts", "columns"):
        if key not in manifest:
            raise ValueError(f"manifest {manifest_path} missing field '{key}'")
    dim = int(manifest["dimension"])
    columns = manifest["columns"]
    has_growth = "growth" in columns
    has_label = "label" in columns
    expected_cols = dim + int(has_growth) + int(has_label)

    times, points, weights, growth, labels = [], [], [], [], []
    for k, (t, n) in enumerate(zip(manifest["times"], manifest["counts"])):
        fname = os.path.join(path, f"snapshot_{k}.tsv")
        try:
            raw = np.loadtxt(fname, delimiter="\t", ndmin=2)
        except (OSError, ValueError) as exc:
            raise ValueError(f"unreadable snapshot file {fname}: {exc}") from exc
        if raw.shape != (n, expected_cols):
            raise ValueError(
                f"{fname}: expected shape {(n, expected_cols)}, got {raw.shape}"
            )
        col = 0
        if has_growth:
            growth.append(raw[:, col].copy())
            col += 1
        else:
            growth.append(None)
        if has_label:
            labels.append(raw[:, col].astype(int))
            col += 1
        else:
            labels.append(None)
        points.append(raw[:, col:].copy())
        weights.append(np.full(n, 1.0 / n))
        times.append(float(t))
    return SnapshotSet(times=times, points=points, weights=weights,
                       growth=growth, labels=labels, meta=manifest.get("meta", {}))
