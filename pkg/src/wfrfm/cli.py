"""Command-line front end: generate, couple, train, infer, evaluate, action.

Options come from three layers (lowest to highest precedence): built-in
defaults, a JSON --config file, and explicit flags. The effective
configuration is echoed to the output directory so every run is
reproducible from its artifacts alone.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import datagen, infer, metrics, oet, train

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

THREADS_ENV = "WFRFM_THREADS"


def _set_threads(n: int | None) -> None:
    """Best-effort cap on BLAS worker threads; honored by libraries that
    read these variables at pool start."""
    if n is None:
        n = int(os.environ.get(THREADS_ENV, 0)) or None
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _add_options(parser: argparse.ArgumentParser, options: dict) -> None:
    for name, (typ, default, help_text) in options.items():
        flag = "--" + name.replace("_", "-")
        if typ is bool:
            parser.add_argument(flag, action="store_true",
                                default=argparse.SUPPRESS,
                                help=f"{help_text} (default: {default})")
        else:
            parser.add_argument(flag, type=typ, default=argparse.SUPPRESS,
                                help=f"{help_text} (default: {default})")


def _effective(args: argparse.Namespace, options: dict) -> dict:
    """defaults <- config file <- explicit flags, rejecting unknown keys."""
    provided = {k: v for k, v in vars(args).items()
                if k in options or k == "config"}
    eff = {name: spec[1] for name, spec in options.items()}
    config_path = provided.pop("config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise SystemExit(f"error: unreadable config {config_path}: {exc}")
        unknown = set(loaded) - set(options)
        if unknown:
            raise SystemExit(
                f"error: unknown config keys {sorted(unknown)}; "
                f"valid keys: {sorted(options)}"
            )
        eff.update(loaded)
    eff.update(provided)
    return eff


def _echo_config(eff: dict, out_dir: str, command: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    payload = {"command": command, **eff}
    with open(os.path.join(out_dir, "effective_config.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    print(f"effective config: {json.dumps(payload, sort_keys=True)}")


def _comma_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _comma_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


GENERATE_OPTIONS = {
    "out": (str, None, "output dataset directory (required)"),
    "seed": (int, 0, "generator seed"),
    "n_steady": (int, 250, "gene: cells seeded at the steady state"),
    "n_transition": (int, 250, "gene: cells seeded in the transitioning state"),
    "alpha_g": (float, 0.06, "gene: growth rate scale"),
    "record_times": (_comma_floats, (0.0, 8.0, 16.0, 24.0, 32.0),
                     "gene: comma-separated snapshot times"),
    "dim": (int, 10, "mixture: ambient dimension"),
    "std": (float, 0.4, "mixture: component standard deviation"),
}


def cmd_generate(args: argparse.Namespace) -> int:
    eff = _effective(args, GENERATE_OPTIONS)
    if not eff["out"]:
        print("error: --out is required", file=sys.stderr)
        return EXIT_USAGE
    if args.generator == "gene":
        params = datagen.GeneSimParams(
            n_steady=eff["n_steady"], n_transition=eff["n_transition"],
            alpha_g=eff["alpha_g"],
            record_times=tuple(eff["record_times"]),
        )
        snaps = datagen.simulate_gene(params, seed=eff["seed"])
    else:
        spec = datagen.MixtureSpec(dim=eff["dim"], std=eff["std"])
        snaps = datagen.gaussian_mixture_snapshots(spec, seed=eff["seed"])
    datagen.save_snapshots(snaps, eff["out"])
    _echo_config(eff, eff["out"], f"generate {args.generator}")
    print(f"wrote {len(snaps.times)} snapshots to {eff['out']}: "
          f"times {snaps.times}, counts {snaps.counts}, dim {snaps.dim}")
    return 0


COUPLE_OPTIONS = {
    "data": (str, None, "dataset directory (required)"),
    "out": (str, None, "output directory (required)"),
    "delta": (float, 1.0, "growth-penalty scale"),
    "epsilon": (float, None, "entropic regularization (default: auto)"),
    "ot_batch": (int, None, "mini-batch size for transport (default: full)"),
    "seed": (int, 0, "partition seed for mini-batch transport"),
}


def cmd_couple(args: argparse.Namespace) -> int:
    eff = _effective(args, COUPLE_OPTIONS)
    if not eff["data"] or not eff["out"]:
        print("error: --data and --out are required", file=sys.stderr)
        return EXIT_USAGE
    snaps = datagen.load_snapshots(eff["data"])
    ocfg = oet.OetConfig(epsilon=eff["epsilon"])
    os.makedirs(eff["out"], exist_ok=True)
    for k in range(len(snaps.times) - 1):
        X0, X1 = snaps.points[k], snaps.points[k + 1]
        n0 = len(X0)
        if eff["ot_batch"]:
            blocks = oet.minibatch_oet(X0, X1, eff["ot_batch"], eff["delta"],
                                       ocfg, seed=eff["seed"] + 1000 * k)
            for b, (_, plan) in enumerate(blocks):
                oet.dump_plan(plan, os.path.join(eff["out"], f"plan_{k}_{b}.txt"))
        else:
            C = oet.build_cost(X0, X1, eff["delta"])
            plan = oet.solve_oet(
                np.full(n0, 1.0 / n0), np.full(len(X1), 1.0 / n0), C,
                ocfg, row_points=X0, col_points=X1, delta=eff["delta"],
            )
            oet.dump_plan(plan, os.path.join(eff["out"], f"plan_{k}.txt"))
        print(f"interval {k}: {snaps.times[k]} -> {snaps.times[k + 1]} coupled")
    _echo_config(eff, eff["out"], "couple")
    return 0


TRAIN_OPTIONS = {
    "data": (str, None, "dataset directory (required)"),
    "out": (str, None, "output directory (required)"),
    "delta": (float, 1.0, "growth-penalty scale"),
    "sigma": (float, None, "path noise bandwidth (default: auto)"),
    "kappa": (float, None, "growth-loss weight (default: delta^2)"),
    "epochs": (int, 2000, "training epochs"),
    "batch_size": (int, 256, "samples per interval per step"),
    "ot_batch": (int, None, "mini-batch size for transport (default: full)"),
    "epsilon": (float, None, "entropic regularization (default: auto)"),
    "hidden": (_comma_ints, (256, 256, 256, 256, 256),
               "comma-separated hidden layer widths"),
    "lr": (float, 1e-3, "Adam learning rate"),
    "seed": (int, 0, "training seed"),
    "pair_sampling": (str, "proportional",
                      "pair sampling mode: proportional | uniform"),
    "t_per_batch": (bool, False, "draw one path time per batch, not per sample"),
}


def _train_config(eff: dict) -> train.TrainConfig:
    return train.TrainConfig(
        delta=eff["delta"], sigma=eff["sigma"], kappa=eff["kappa"],
        epochs=eff["epochs"], batch_size=eff["batch_size"],
        ot_batch=eff["ot_batch"],
        oet=oet.OetConfig(epsilon=eff["epsilon"]),
        hidden=tuple(eff["hidden"]), lr=eff["lr"], seed=eff["seed"],
        pair_sampling=eff["pair_sampling"], t_per_batch=eff["t_per_batch"],
        log_path=os.path.join(eff["out"], "train_log.jsonl"),
    )


def cmd_train(args: argparse.Namespace) -> int:
    eff = _effective(args, TRAIN_OPTIONS)
    if not eff["data"] or not eff["out"]:
        print("error: --data and --out are required", file=sys.stderr)
        return EXIT_USAGE
    snaps = datagen.load_snapshots(eff["data"])
    os.makedirs(eff["out"], exist_ok=True)
    _echo_config(eff, eff["out"], "train")
    cfg = _train_config(eff)
    models, log = train.train(snaps, cfg)
    train.save_models(models, os.path.join(eff["out"], "models"))
    print(f"trained {cfg.epochs} epochs; final loss {log[-1]['loss']:.6g}; "
          f"checkpoints in {os.path.join(eff['out'], 'models')}")
    return 0


INFER_OPTIONS = {
    "data": (str, None, "dataset directory (required)"),
    "models": (str, None, "model checkpoint directory (required)"),
    "out": (str, None, "output directory (required)"),
    "dt": (float, None, "integration step (default: span/400)"),
    "grid": (int, 50, "growth-field grid resolution per axis (2-D data only)"),
}


def _load_pair(eff: dict):
    snaps = datagen.load_snapshots(eff["data"])
    models = train.load_models(eff["models"])
    if models.velocity.layer_dims[0] != snaps.dim + 1:
        raise ValueError(
            f"model expects dimension {models.velocity.layer_dims[0] - 1}, "
            f"dataset has {snaps.dim}"
        )
    return snaps, models


def cmd_infer(args: argparse.Namespace) -> int:
    eff = _effective(args, INFER_OPTIONS)
    if not (eff["data"] and eff["models"] and eff["out"]):
        print("error: --data, --models and --out are required", file=sys.stderr)
        return EXIT_USAGE
    snaps, models = _load_pair(eff)
    traj = infer.integrate(models, snaps.points[0], snaps.times[0],
                           snaps.times[-1], dt=eff["dt"])
    infer.export_trajectory(traj, eff["out"], checkpoint_times=snaps.times)
    if snaps.dim == 2:
        _export_growth_grid(models, snaps, eff["out"], eff["grid"])
    _echo_config(eff, eff["out"], "infer")
    print(f"integrated {len(snaps.points[0])} particles over "
          f"[{snaps.times[0]}, {snaps.times[-1]}]; exports in {eff['out']}")
    return 0


def _export_growth_grid(models, snaps, out_dir: str, res: int) -> None:
    """Tabular growth field g(x, t_k) on a bounding-box grid, for plotting."""
    from . import nn

    allpts = np.vstack(snaps.points)
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    pad = 0.05 * (hi - lo)
    xs = np.linspace(lo[0] - pad[0], hi[0] + pad[0], res)
    ys = np.linspace(lo[1] - pad[1], hi[1] + pad[1], res)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    for t in snaps.times:
        g = nn.forward(models.growth, grid, t)[:, 0]
        rows = np.column_stack([grid, g])
        np.savetxt(os.path.join(out_dir, f"growth_grid_{t:g}.tsv"),
                   rows, delimiter="\t", fmt="%.17g")


EVALUATE_OPTIONS = {
    **INFER_OPTIONS,
    "subsample": (int, metrics.SUBSAMPLE_CAP, "W1 subsample cap"),
    "seed": (int, 0, "subsample seed"),
}


def cmd_evaluate(args: argparse.Namespace) -> int:
    eff = _effective(args, EVALUATE_OPTIONS)
    if not (eff["data"] and eff["models"] and eff["out"]):
        print("error: --data, --models and --out are required", file=sys.stderr)
        return EXIT_USAGE
    snaps, models = _load_pair(eff)
    traj = infer.integrate(models, snaps.points[0], snaps.times[0],
                           snaps.times[-1], dt=eff["dt"])
    weights = infer.predicted_weights(traj, snaps.times)
    per_time = {}
    n0 = snaps.counts[0]
    for k, rec in enumerate(weights):
        j = int(np.argmin(np.abs(traj.times - rec["time"])))
        pred = metrics.WeightedCloud(traj.states[j], rec["weights"])
        true = metrics.WeightedCloud(snaps.points[k], snaps.weights[k])
        w1 = metrics.wasserstein1(pred, true, subsample=eff["subsample"],
                                  seed=eff["seed"])
        err = metrics.rme(rec["mass_ratio"], snaps.counts[k], n0)
        per_time[f"{rec['time']:g}"] = {
            "w1": w1, "rme": err,
            "n_pred": rec["mass_ratio"] * n0, "n_true": snaps.counts[k],
        }
        print(f"t={rec['time']:g}: w1={w1:.6g} rme={err:.6g}")
    g_corr = None
    if all(g is not None for g in snaps.growth):
        from . import nn

        preds, truths = [], []
        for t, pts, g_true in zip(snaps.times, snaps.points, snaps.growth):
            preds.append(nn.forward(models.growth, pts, t)[:, 0])
            truths.append(g_true)
        g_corr = metrics.growth_correlation(np.concatenate(preds),
                                            np.concatenate(truths))
        print(f"g_corr={g_corr:.6g}")
    os.makedirs(eff["out"], exist_ok=True)
    metrics.write_evaluation_report(
        os.path.join(eff["out"], "evaluation.json"), per_time, g_corr
    )
    _echo_config(eff, eff["out"], "evaluate")
    return 0


ACTION_OPTIONS = {
    "data": (str, None, "dataset directory (required)"),
    "models": (str, None, "model checkpoint directory (required)"),
    "out": (str, None, "output directory (required)"),
    "dt": (float, None, "integration step (default: span/400)"),
    "epsilon": (float, None, "regularization for the static reference"),
}


def cmd_action(args: argparse.Namespace) -> int:
    eff = _effective(args, ACTION_OPTIONS)
    if not (eff["data"] and eff["models"] and eff["out"]):
        print("error: --data, --models and --out are required", file=sys.stderr)
        return EXIT_USAGE
    snaps, models = _load_pair(eff)
    traj = infer.integrate(models, snaps.points[0], snaps.times[0],
                           snaps.times[-1], dt=eff["dt"])
    action = infer.trajectory_action(traj, models, models.delta)
    ref = metrics.static_action_reference(
        snaps, models.delta, oet.OetConfig(epsilon=eff["epsilon"])
    )
    os.makedirs(eff["out"], exist_ok=True)
    with open(os.path.join(eff["out"], "action.json"), "w") as fh:
        json.dump({"action": action, "static_reference": ref}, fh, indent=2)
    _echo_config(eff, eff["out"], "action")
    print(f"action={action:.6g} static_reference={ref:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wfrfm",
        description="Learn continuous dynamics with growth from population "
                    "snapshots.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help=f"cap BLAS threads (or set {THREADS_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("generator", choices=["gene", "mixture"])
    p.add_argument("--config", default=None, help="JSON config file")
    _add_options(p, GENERATE_OPTIONS)
    p.set_defaults(func=cmd_generate)

    for name, options, func, help_text in (
        ("couple", COUPLE_OPTIONS, cmd_couple,
         "solve and dump per-interval transport plans"),
        ("train", TRAIN_OPTIONS, cmd_train, "train velocity and growth nets"),
        ("infer", INFER_OPTIONS, cmd_infer, "integrate trained fields"),
        ("evaluate", EVALUATE_OPTIONS, cmd_evaluate,
         "distribution and mass metrics per snapshot time"),
        ("action", ACTION_OPTIONS, cmd_action,
         "trajectory action vs static reference"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config file")
        _add_options(p, options)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, RuntimeError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
