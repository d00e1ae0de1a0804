"""Command-line interface: synth, train, eval, impute, analyze.

Every command echoes its fully-resolved configuration into the output
directory and is bit-reproducible given (config, seed). Exit codes: 0 ok,
2 usage/config, 3 data/parse, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, resolve, write_snapshot
from .data import (
    Dataset,
    NormStats,
    SynthConfig,
    attach_truth,
    baseline_impute,
    generate_synthetic,
    load_csv,
    normalize,
    save_dataset,
    simulate_mar,
    split,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DegenerateFeatureError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    NumericError,
    ParseError,
    UndefinedMetricError,
)
from .figures import render_distribution, render_per_feature, render_reliability
from .metrics import auprc, auroc, mae, mre
from .model import ModelConfig
from .training import TrainConfig, load_checkpoint, save_checkpoint, train
from .uncertainty import (
    imputation_distribution_export,
    mc_forward,
    per_feature_variability,
    variance_percentile_curve,
)

# fixed labels for RNG streams derived from the master seed
STAGE_SPLIT = 101
STAGE_MAR_TRAIN = 102
STAGE_MAR_TEST = 103
STAGE_MC = 201
STAGE_MC_IMPUTE = 202


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# shared plumbing


def _prepare_out_dir(path, force: bool, refuse_nonempty: bool = False) -> Path:
    out = Path(path)
    if out.exists() and refuse_nonempty and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory '{out}' is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data_dir(data_dir) -> Dataset:
    data_dir = Path(data_dir)
    values, labels = data_dir / "values.csv", data_dir / "labels.csv"
    if not values.exists() or not labels.exists():
        raise ParseError(f"{data_dir}: expected values.csv and labels.csv")
    num_steps = None
    snapshot = data_dir / "config.txt"
    if snapshot.exists():
        from .config import parse_config_file

        num_steps = parse_config_file(snapshot).get("t")
    ds = load_csv(values, labels, num_steps=num_steps)
    truth = data_dir / "truth.csv"
    if truth.exists():
        ds = attach_truth(ds, truth)
    return ds


def _model_config(cfg: RunConfig, num_features: int) -> ModelConfig:
    return ModelConfig(
        num_features=num_features,
        hidden_size=cfg.hidden_size,
        imputation_hidden_size=cfg.imputation_hidden_size or None,
        cell=cfg.cell,
        deterministic_mode=cfg.deterministic,
    )


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        adam_beta1=cfg.adam_beta1,
        adam_beta2=cfg.adam_beta2,
        adam_eps=cfg.adam_eps,
        lambda_imp=cfg.lambda_imp,
        lambda_pred=cfg.lambda_pred,
        mc_train_samples=cfg.mc_train_samples,
        seed=cfg.seed,
        prior_pi=cfg.prior_pi,
        prior_sigma1=cfg.prior_sigma1,
        prior_sigma2=cfg.prior_sigma2,
        prediction_nll_count=cfg.prediction_nll_count,
        grad_clip=cfg.grad_clip,
    )


def _require_stats(ckpt):
    if ckpt.norm_stats is None:
        raise CheckpointError("checkpoint carries no normalization stats")
    return ckpt.norm_stats


def _rebuild_test_split(ckpt, ds: Dataset) -> Dataset:
    """Reproduce the held-out split and its MAR mask from checkpoint metadata."""
    meta = ckpt.meta
    try:
        seed = int(meta["seed"])
        test_fraction = float(meta["test_fraction"])
        mar_rate = float(meta["mar_rate"])
    except KeyError as e:
        raise CheckpointError(f"checkpoint metadata lacks {e}") from None
    _, test = split(ds, test_fraction, seed=[seed, STAGE_SPLIT])
    test_norm = normalize(test, _require_stats(ckpt))
    return simulate_mar(test_norm, mar_rate, seed=[seed, STAGE_MAR_TEST])


def _mc_seed_base(args, ckpt) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(ckpt.meta["seed"])


def _eval_metrics(mc, test_ds: Dataset, draws: int) -> dict:
    ci, ct, cj = mc.cells[:, 0], mc.cells[:, 1], mc.cells[:, 2]
    keep = np.nonzero(test_ds.eval_mask[ci, ct, cj] == 1)[0]
    if keep.size == 0:
        raise DegenerateInputError("no eval cells in the test split; increase mar_rate")
    truths = test_ds.eval_values[ci[keep], ct[keep], cj[keep]]
    estimates = mc.imputation_mean[keep]

    baselines = {}
    for strategy in ("zero", "mean", "forward_fill"):
        grid = baseline_impute(test_ds, strategy)
        est = grid[ci[keep], ct[keep], cj[keep]]
        baselines[strategy] = {"mae": mae(truths, est), "mre": mre(truths, est)}

    return {
        "mae": mae(truths, estimates),
        "mre": mre(truths, estimates),
        "auroc": auroc(test_ds.Y, mc.prediction_mean),
        "auprc": auprc(test_ds.Y, mc.prediction_mean),
        "n_eval_cells": int(keep.size),
        "n_test_samples": int(test_ds.num_samples),
        "mc_samples": int(draws),
        "baselines": baselines,
    }


def _write_grid_csv(path, ds: Dataset, grid: np.ndarray, mask=None) -> None:
    header = "sample_id,hour," + ",".join(ds.feature_names)
    lines = [header]
    for i, sid in enumerate(ds.sample_ids):
        for t in range(ds.num_steps):
            cells = [
                _fmt(grid[i, t, j]) if mask is None or mask[i, t, j] else ""
                for j in range(ds.num_features)
            ]
            lines.append(f"{sid},{t}," + ",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = resolve(args.config, _collect(args))
    out = _prepare_out_dir(args.out, args.force, refuse_nonempty=True)
    ds = generate_synthetic(
        SynthConfig(
            n=cfg.n, t=cfg.t, m=cfg.m, missing_rate=cfg.missing_rate,
            label_noise=cfg.label_noise, seed=cfg.seed, latent_dim=cfg.latent_dim,
        )
    )
    paths = save_dataset(ds, out)
    write_snapshot(cfg, out / "config.txt")
    print(
        f"wrote {ds.num_samples} samples x {ds.num_steps} steps x "
        f"{ds.num_features} features to {out}"
    )
    for p in paths.values():
        print(f"  {p}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve(args.config, _collect(args))
    out = _prepare_out_dir(args.out, args.force)
    ds = _load_data_dir(args.data)
    seed = cfg.seed

    train_raw, _ = split(ds, cfg.test_fraction, seed=[seed, STAGE_SPLIT])
    stats = NormStats.from_dataset(train_raw)
    train_ds = simulate_mar(
        normalize(train_raw, stats), cfg.mar_rate, seed=[seed, STAGE_MAR_TRAIN]
    )

    model_cfg = _model_config(cfg, ds.num_features)
    train_cfg = _train_config(cfg)
    extra_meta = {
        "test_fraction": cfg.test_fraction,
        "mar_rate": cfg.mar_rate,
        "num_steps": ds.num_steps,
    }
    ckpt, log = train(train_ds, model_cfg, train_cfg, stats, extra_meta)

    ckpt_path = out / "checkpoint.bin"
    save_checkpoint(ckpt, ckpt_path)
    log_lines = ["epoch,total,imputation,prediction,kl"] + [
        f"{row['epoch']},{_fmt(row['total'])},{_fmt(row['imputation'])},"
        f"{_fmt(row['prediction'])},{_fmt(row['kl'])}"
        for row in log
    ]
    (out / "epochs.csv").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    write_snapshot(cfg, out / "config.txt")
    final = log[-1]["total"] if log else float("nan")
    print(f"trained {cfg.epochs} epochs on {train_ds.num_samples} samples; "
          f"final loss {final:.6f}")
    print(f"  {ckpt_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve(args.config, _collect(args))
    out = _prepare_out_dir(args.out, args.force)
    ckpt = load_checkpoint(args.checkpoint)
    ds = _load_data_dir(args.data)
    test_ds = _rebuild_test_split(ckpt, ds)

    mc = mc_forward(ckpt, test_ds, cfg.mc_samples, seed=[_mc_seed_base(args, ckpt), STAGE_MC])
    report = _eval_metrics(mc, test_ds, cfg.mc_samples)

    blob = json.dumps(report, sort_keys=True, indent=2)
    (out / "metrics.json").write_text(blob + "\n", encoding="utf-8")
    write_snapshot(cfg, out / "config.txt")
    print(blob)
    return 0


def cmd_impute(args) -> int:
    cfg = resolve(args.config, _collect(args))
    out = _prepare_out_dir(args.out, args.force)
    ckpt = load_checkpoint(args.checkpoint)
    ds = _load_data_dir(args.data)
    stats = _require_stats(ckpt)
    norm_ds = normalize(ds, stats)

    mc = mc_forward(
        ckpt, norm_ds, cfg.mc_samples, seed=[_mc_seed_base(args, ckpt), STAGE_MC_IMPUTE]
    )
    ci, ct, cj = mc.cells[:, 0], mc.cells[:, 1], mc.cells[:, 2]

    # observed cells pass through bitwise; missing cells get denormalized MC means
    filled = ds.X.copy()
    filled[ci, ct, cj] = mc.imputation_mean * stats.std[cj] + stats.mean[cj]
    _write_grid_csv(out / "imputed.csv", ds, filled)
    print(f"wrote {out / 'imputed.csv'} ({len(mc.cells)} cells filled)")

    if cfg.mc_samples > 1:
        sigma = np.zeros_like(ds.X)
        sigma[ci, ct, cj] = mc.imputation_variance
        _write_grid_csv(out / "sigma2.csv", ds, sigma, mask=(ds.V == 0))
        print(f"wrote {out / 'sigma2.csv'}")
    else:
        print("note: --mc-samples 1 gives no variance; sigma2.csv not written")
    write_snapshot(cfg, out / "config.txt")
    return 0


def cmd_analyze(args) -> int:
    cfg = resolve(args.config, _collect(args))
    out = _prepare_out_dir(args.out, args.force)
    ckpt = load_checkpoint(args.checkpoint)
    ds = _load_data_dir(args.data)
    test_ds = _rebuild_test_split(ckpt, ds)
    if test_ds.eval_mask is None or test_ds.eval_mask.sum() == 0:
        raise DegenerateInputError(
            "analysis needs ground truth at hidden cells: train/eval with mar_rate > 0"
        )

    mc = mc_forward(ckpt, test_ds, cfg.mc_samples, seed=[_mc_seed_base(args, ckpt), STAGE_MC])

    curve = variance_percentile_curve(mc, test_ds)
    rel_lines = ["percentile,retained_cells,mae"] + [
        f"{p},{n},{_fmt(v)}" for p, n, v in zip(curve.percentiles, curve.retained, curve.mae)
    ]
    (out / "fig_reliability.csv").write_text("\n".join(rel_lines) + "\n", encoding="utf-8")

    rows = per_feature_variability(mc, test_ds)
    feat_lines = ["feature,n_cells,mean_variance,mae"] + [
        f"{r.name},{r.n_cells},{_fmt(r.mean_variance)},{_fmt(r.mae)}" for r in rows
    ]
    (out / "fig_per_feature.csv").write_text("\n".join(feat_lines) + "\n", encoding="utf-8")

    cell = _pick_cell(args, mc, test_ds)
    export = imputation_distribution_export(mc, cell, test_ds)
    dist_lines = ["kind,value,bin_left,bin_right,count"]
    dist_lines.append(f"cell,\"{cell[0]} {cell[1]} {cell[2]}\",,,")
    for s in export.samples:
        dist_lines.append(f"draw,{_fmt(s)},,,")
    for left, right, count in zip(export.bin_edges[:-1], export.bin_edges[1:], export.counts):
        dist_lines.append(f"bin,,{_fmt(left)},{_fmt(right)},{int(count)}")
    if export.truth is not None:
        dist_lines.append(f"truth,{_fmt(export.truth)},,,")
    (out / "fig_distribution.csv").write_text("\n".join(dist_lines) + "\n", encoding="utf-8")

    if cfg.figures:
        render_distribution(export, out / "fig_distribution.png")
        render_reliability(curve, out / "fig_reliability.png")
        render_per_feature(rows, out / "fig_per_feature.png")

    write_snapshot(cfg, out / "config.txt")
    suffix = " + figures" if cfg.figures else ""
    print(f"wrote reliability, per-feature, and distribution data to {out}{suffix}")
    return 0


def _pick_cell(args, mc, ds) -> tuple:
    spec = getattr(args, "dist_cell", None)
    if spec:
        try:
            i, t, j = (int(p) for p in spec.split(","))
        except ValueError:
            raise ConfigError(f"--cell expects 'sample,step,feature', got '{spec}'") from None
        return (i, t, j)
    # default: the eval cell with the widest posterior spread
    ci, ct, cj = mc.cells[:, 0], mc.cells[:, 1], mc.cells[:, 2]
    keep = np.nonzero(ds.eval_mask[ci, ct, cj] == 1)[0]
    pick = keep[int(np.argmax(mc.imputation_variance[keep]))]
    return tuple(int(c) for c in mc.cells[pick])


# ---------------------------------------------------------------------------
# argument parsing


_FLAG_SETS = {
    "synth": ["n", "t", "m", "missing_rate", "label_noise", "latent_dim"],
    "train": [
        "hidden_size", "imputation_hidden_size", "cell", "deterministic",
        "epochs", "batch_size", "learning_rate", "adam_beta1", "adam_beta2",
        "adam_eps", "lambda_imp", "lambda_pred", "mc_train_samples",
        "prior_pi", "prior_sigma1", "prior_sigma2", "prediction_nll_count",
        "grad_clip", "test_fraction", "mar_rate",
    ],
    "eval": ["mc_samples"],
    "impute": ["mc_samples"],
    "analyze": ["mc_samples", "figures"],
}

_BOOL_KEYS = {"deterministic", "figures"}
_STR_KEYS = {"cell"}
_INT_KEYS = {
    "n", "t", "m", "latent_dim", "hidden_size", "imputation_hidden_size",
    "epochs", "batch_size", "mc_train_samples", "prediction_nll_count",
    "mc_samples",
}


def _add_config_flags(parser, keys) -> None:
    for key in keys:
        flag = "--" + key.replace("_", "-")
        if key in _BOOL_KEYS:
            parser.add_argument(flag, dest=key, default=None,
                                action=argparse.BooleanOptionalAction)
        elif key in _INT_KEYS:
            parser.add_argument(flag, dest=key, type=int, default=None)
        elif key in _STR_KEYS:
            parser.add_argument(flag, dest=key, type=str, default=None)
        else:
            parser.add_argument(flag, dest=key, type=float, default=None)


def _collect(args) -> dict:
    from dataclasses import fields

    keys = {f.name for f in fields(RunConfig)}
    return {k: v for k, v in vars(args).items() if k in keys}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayesimpute",
        description="Bayesian recurrent imputation and prediction for time series",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--out", type=str, required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="write into non-empty directories")

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    common(p)
    _add_config_flags(p, _FLAG_SETS["synth"])
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    common(p)
    p.add_argument("--data", type=str, required=True, help="dataset directory")
    _add_config_flags(p, _FLAG_SETS["train"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint: metrics JSON + baselines")
    common(p)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--checkpoint", type=str, required=True)
    _add_config_flags(p, _FLAG_SETS["eval"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("impute", help="write a fully-imputed value grid")
    common(p)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--checkpoint", type=str, required=True)
    _add_config_flags(p, _FLAG_SETS["impute"])
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("analyze", help="uncertainty analyses: plot data + figures")
    common(p)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--cell", dest="dist_cell", type=str, default=None,
                   help="'sample,step,feature' for the distribution export")
    _add_config_flags(p, _FLAG_SETS["analyze"])
    p.set_defaults(func=cmd_analyze)
    return parser


_ERROR_CATEGORIES = [
    ((ConfigError, ContractError, DimensionError, DomainError), "config", 2),
    (
        (
            ParseError,
            CheckpointError,
            DegenerateInputError,
            DegenerateFeatureError,
            UndefinedMetricError,
            FileNotFoundError,
        ),
        "data",
        3,
    ),
    ((NumericError,), "numeric", 4),
]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except tuple(exc for excs, _, _ in _ERROR_CATEGORIES for exc in excs) as e:
        for excs, category, code in _ERROR_CATEGORIES:
            if isinstance(e, excs):
                print(f"error:{category}: {e}", file=sys.stderr)
                return code
        raise  # unreachable


if __name__ == "__main__":
    sys.exit(main())
