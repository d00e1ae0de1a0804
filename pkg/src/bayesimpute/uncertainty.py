"""Monte-Carlo posterior sampling and variance-based reliability analysis.

``mc_forward`` draws K independent weight samples from the posterior (one
deterministic rollout each, no tape) and collects the imputed values at
every unobserved cell plus the predicted probability per sample. The
analyses relate the per-cell variance of those draws to imputation error:
cells whose imputations disagree across draws tend to be the cells the
model gets wrong, so variance works as a reliability signal when no ground
truth exists.

Per-draw RNG streams are derived from (seed, draw index), so results do not
depend on any execution schedule.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import ContractError, DegenerateInputError
from .metrics import mae as mae_metric
from .model import sampled_tensors, unroll
from .training import Checkpoint
from .variational import sigmoid_np

DEFAULT_PERCENTILES = (50, 60, 70, 80, 90, 100)


@dataclass
class MCResult:
    draws: int
    cells: np.ndarray              # (C, 3) int indices of V=0 cells
    imputation_samples: np.ndarray  # (K, C)
    prediction_samples: np.ndarray  # (K, N) probabilities in (0, 1)

    @property
    def imputation_mean(self) -> np.ndarray:
        return self.imputation_samples.mean(axis=0)

    @property
    def imputation_variance(self) -> np.ndarray:
        if self.draws < 2:
            raise ContractError("variance requires K >= 2 draws")
        return self.imputation_samples.var(axis=0, ddof=1)

    @property
    def prediction_mean(self) -> np.ndarray:
        return self.prediction_samples.mean(axis=0)

    @property
    def prediction_variance(self) -> np.ndarray:
        if self.draws < 2:
            raise ContractError("variance requires K >= 2 draws")
        return self.prediction_samples.var(axis=0, ddof=1)

    def cell_index(self, cell) -> int:
        hit = np.nonzero(
            (self.cells[:, 0] == cell[0])
            & (self.cells[:, 1] == cell[1])
            & (self.cells[:, 2] == cell[2])
        )[0]
        if hit.size == 0:
            raise DegenerateInputError(f"cell {tuple(cell)} is not an unobserved cell")
        return int(hit[0])


@dataclass
class ReliabilityCurve:
    percentiles: tuple        # retained-percent thresholds, ascending
    mae: list                 # MAE of the lowest-variance subset per threshold
    retained: list            # retained cell counts per threshold


@dataclass
class FeatureVariability:
    feature: int
    name: str
    n_cells: int
    mean_variance: float
    mae: float


@dataclass
class DistributionExport:
    cell: tuple
    samples: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    truth: Optional[float]


def mc_forward(ckpt: Checkpoint, ds: Dataset, draws: int, seed) -> MCResult:
    """K posterior draws, one rollout each, over an immutable checkpoint.

    Deterministic-mode checkpoints roll the point weights, so all draws
    coincide and the variance is exactly 0.
    """
    if draws < 1:
        raise ContractError("draws must be >= 1")
    weights = ckpt.to_weights()
    cfg = ckpt.model_config
    cells = np.argwhere(ds.V == 0)

    imp = np.empty((draws, len(cells)))
    pred = np.empty((draws, ds.num_samples))
    ci, ct, cj = cells[:, 0], cells[:, 1], cells[:, 2]
    for k in range(draws):
        rng = np.random.default_rng([seed, k])
        w_map, _ = sampled_tensors(weights, rng)
        run = unroll(ds.X, ds.V, ds.Delta, w_map, cfg)
        x_hat = np.stack([s.data for s in run.x_hat_steps], axis=1)
        imp[k] = x_hat[ci, ct, cj]
        pred[k] = sigmoid_np(run.logit.data[:, 0])
    return MCResult(draws=draws, cells=cells, imputation_samples=imp, prediction_samples=pred)


def _eval_cells(mc: MCResult, ds: Dataset):
    """Indices into mc.cells that carry ground truth via eval_mask."""
    if ds.eval_mask is None:
        raise DegenerateInputError("dataset has no eval_mask; run simulate_mar first")
    ci, ct, cj = mc.cells[:, 0], mc.cells[:, 1], mc.cells[:, 2]
    keep = np.nonzero(ds.eval_mask[ci, ct, cj] == 1)[0]
    if keep.size == 0:
        raise DegenerateInputError("eval_mask is empty")
    truths = ds.eval_values[ci[keep], ct[keep], cj[keep]]
    return keep, truths


def variance_percentile_curve(mc: MCResult, ds: Dataset,
                              percentiles: Sequence[int] = DEFAULT_PERCENTILES) -> ReliabilityCurve:
    """Sort eval cells by variance ascending; MAE of the retained fraction.

    The 100% row reproduces the plain MAE over all eval cells exactly.
    """
    keep, truths = _eval_cells(mc, ds)
    variance = mc.imputation_variance[keep]
    estimates = mc.imputation_mean[keep]
    order = np.argsort(variance, kind="mergesort")
    abs_err = np.abs(truths[order] - estimates[order])

    maes, retained = [], []
    c = len(order)
    for p in percentiles:
        n_keep = min(c, max(1, int(np.ceil(p / 100.0 * c))))
        maes.append(float(abs_err[:n_keep].mean()))
        retained.append(n_keep)
    return ReliabilityCurve(tuple(percentiles), maes, retained)


def per_feature_variability(mc: MCResult, ds: Dataset) -> list:
    """Per-feature mean variance and MAE over eval cells, sorted by variance.

    Features with no eval cells are omitted (with a warning naming them).
    """
    keep, truths = _eval_cells(mc, ds)
    variance = mc.imputation_variance[keep]
    estimates = mc.imputation_mean[keep]
    features = mc.cells[keep, 2]

    rows = []
    skipped = []
    for j in range(ds.num_features):
        sel = features == j
        if not sel.any():
            skipped.append(ds.feature_names[j])
            continue
        rows.append(
            FeatureVariability(
                feature=j,
                name=ds.feature_names[j],
                n_cells=int(sel.sum()),
                mean_variance=float(variance[sel].mean()),
                mae=mae_metric(truths[sel], estimates[sel]),
            )
        )
    if skipped:
        warnings.warn(f"features with no eval cells omitted: {', '.join(skipped)}")
    rows.sort(key=lambda r: r.mean_variance)
    return rows


def imputation_distribution_export(mc: MCResult, cell, ds: Optional[Dataset] = None) -> DistributionExport:
    """Raw K draws for one cell plus a Freedman-Diaconis histogram.

    The ground-truth marker comes from eval_values (hidden cells) or the
    synthetic truth grid when available.
    """
    idx = mc.cell_index(cell)
    samples = mc.imputation_samples[:, idx]
    k = len(samples)

    q75, q25 = np.percentile(samples, [75, 25])
    width = 2.0 * (q75 - q25) * k ** (-1.0 / 3.0)
    lo, hi = float(samples.min()), float(samples.max())
    if width <= 0.0 or lo == hi:
        edges = np.array([lo - 0.5, hi + 0.5])
    else:
        n_bins = max(1, int(np.ceil((hi - lo) / width)))
        edges = np.linspace(lo, hi, n_bins + 1)
    counts, edges = np.histogram(samples, bins=edges)

    truth = None
    if ds is not None:
        i, t, j = (int(c) for c in cell)
        if ds.eval_mask is not None and ds.eval_mask[i, t, j] == 1:
            truth = float(ds.eval_values[i, t, j])
        elif ds.truth is not None:
            truth = float(ds.truth[i, t, j])
    return DistributionExport(
        cell=tuple(int(c) for c in cell),
        samples=samples,
        bin_edges=edges,
        counts=counts,
        truth=truth,
    )
