"""Dataset ingestion, normalization, gap bookkeeping, MAR simulation,
splitting, baseline imputers, and the synthetic ground-truth generator.

Grids are (N, T, M) float64. The mask V is 1 where a cell is observed;
missing cells hold 0 in X. ``eval_mask`` marks originally-observed cells
that were deliberately hidden so imputation can be scored against the
retained originals in ``eval_values``.

Datasets are treated as immutable: every transformation returns a new
instance.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    ContractError,
    DegenerateFeatureError,
    DimensionError,
    ParseError,
)

CLINICAL_NUM_STEPS = 48  # hourly grid used by the ICU benchmark layout


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray                       # (N, T, M), zero-filled at missing cells
    V: np.ndarray                       # (N, T, M) in {0, 1}; 1 = observed
    Delta: np.ndarray                   # (N, T, M) time since last observation
    Y: np.ndarray                       # (N,) binary labels
    sample_ids: tuple                   # N strings
    feature_names: tuple                # M strings
    normalized: bool = False
    eval_mask: Optional[np.ndarray] = None    # (N, T, M) hidden-for-eval cells
    eval_values: Optional[np.ndarray] = None  # originals at eval_mask cells
    truth: Optional[np.ndarray] = None        # full no-missing grid (synthetic)

    def __post_init__(self):
        n, t, m = self.X.shape
        for name, arr in (("V", self.V), ("Delta", self.Delta)):
            if arr.shape != (n, t, m):
                raise DimensionError(f"{name} shape {arr.shape} != X shape {(n, t, m)}")
        if self.Y.shape != (n,):
            raise DimensionError(f"Y shape {self.Y.shape} != ({n},)")
        if len(self.sample_ids) != n or len(self.feature_names) != m:
            raise DimensionError("sample_ids/feature_names lengths do not match grids")
        if not np.all((self.V == 0) | (self.V == 1)):
            raise ContractError("V must be binary")
        if not np.all(np.isfinite(self.Delta)) or np.any(self.Delta < 0):
            raise ContractError("Delta must be finite and nonnegative")

    @property
    def num_samples(self) -> int:
        return self.X.shape[0]

    @property
    def num_steps(self) -> int:
        return self.X.shape[1]

    @property
    def num_features(self) -> int:
        return self.X.shape[2]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        take = lambda a: None if a is None else a[indices]
        return replace(
            self,
            X=self.X[indices],
            V=self.V[indices],
            Delta=self.Delta[indices],
            Y=self.Y[indices],
            sample_ids=tuple(self.sample_ids[i] for i in indices),
            eval_mask=take(self.eval_mask),
            eval_values=take(self.eval_values),
            truth=take(self.truth),
        )


@dataclass(frozen=True)
class NormStats:
    """Per-feature mean/std over observed training cells only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "NormStats":
        m = ds.num_features
        mean = np.zeros(m)
        std = np.zeros(m)
        for j in range(m):
            vals = ds.X[:, :, j][ds.V[:, :, j] == 1]
            if vals.size == 0:
                raise DegenerateFeatureError(
                    f"feature '{ds.feature_names[j]}' has no observed cells"
                )
            mean[j] = vals.mean()
            std[j] = vals.std()
            if std[j] == 0.0:
                raise DegenerateFeatureError(
                    f"feature '{ds.feature_names[j]}' is constant over observed cells"
                )
        return cls(mean=mean, std=std)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(mean=np.asarray(d["mean"], float), std=np.asarray(d["std"], float))


@dataclass(frozen=True)
class SynthConfig:
    n: int = 200
    t: int = 24
    m: int = 5
    missing_rate: float = 0.4
    label_noise: float = 0.5
    seed: int = 0
    latent_dim: int = 3

    def __post_init__(self):
        if not 0.0 <= self.missing_rate < 1.0:
            raise ContractError(f"missing_rate {self.missing_rate} outside [0, 1)")
        if min(self.n, self.t, self.m, self.latent_dim) < 1:
            raise ContractError("n, t, m, latent_dim must be >= 1")
        if self.label_noise < 0:
            raise ContractError("label_noise must be >= 0")


# ---------------------------------------------------------------------------
# CSV ingestion / persistence
#
# values CSV: header "sample_id,hour,f1,...,fM"; empty field = missing.
# labels CSV: header "sample_id,label"; label in {0, 1}.
# Canonical form written by save_dataset: one row per (sample, hour), samples
# in dataset order, floats in shortest round-trip repr, LF line endings.


def _format_value(x: float) -> str:
    return repr(float(x))


def load_csv(values_path, labels_path, num_steps: Optional[int] = None) -> Dataset:
    """Parse a values/labels CSV pair onto the (N, T, M) grid.

    Later rows win on duplicate (sample, hour, feature). T is ``num_steps``
    when given (hours beyond it are a parse error), else max hour + 1.
    """
    values_path, labels_path = Path(values_path), Path(labels_path)
    with open(values_path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ParseError(f"{values_path}: empty file")
    header = rows[0]
    if header[:2] != ["sample_id", "hour"] or len(header) < 3:
        raise ParseError(f"{values_path}:1: header must be sample_id,hour,f1,...")
    feature_names = tuple(header[2:])
    m = len(feature_names)

    parsed = []  # (sample_id, hour, list of float-or-None)
    max_hour = -1
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2 + m:
            raise ParseError(f"{values_path}:{ln}: expected {2 + m} fields, got {len(row)}")
        sid = row[0]
        try:
            hour = int(row[1])
        except ValueError:
            raise ParseError(f"{values_path}:{ln}: non-integer hour '{row[1]}'") from None
        if hour < 0 or (num_steps is not None and hour >= num_steps):
            raise ParseError(f"{values_path}:{ln}: hour {hour} out of range")
        cells = []
        for k, field in enumerate(row[2:]):
            if field == "":
                cells.append(None)
            else:
                try:
                    cells.append(float(field))
                except ValueError:
                    raise ParseError(
                        f"{values_path}:{ln}: non-numeric cell '{field}' "
                        f"(feature {feature_names[k]})"
                    ) from None
        parsed.append((sid, hour, cells))
        max_hour = max(max_hour, hour)

    if not parsed:
        raise ParseError(f"{values_path}: no data rows")
    t_steps = num_steps if num_steps is not None else max_hour + 1

    sample_ids = []
    order = {}
    for sid, _, _ in parsed:
        if sid not in order:
            order[sid] = len(sample_ids)
            sample_ids.append(sid)
    n = len(sample_ids)

    x = np.zeros((n, t_steps, m))
    v = np.zeros((n, t_steps, m))
    for sid, hour, cells in parsed:
        i = order[sid]
        for j, val in enumerate(cells):
            if val is None:
                continue
            x[i, hour, j] = val
            v[i, hour, j] = 1.0

    with open(labels_path, newline="", encoding="utf-8") as f:
        label_rows = list(csv.reader(f))
    if not label_rows or label_rows[0] != ["sample_id", "label"]:
        raise ParseError(f"{labels_path}:1: header must be sample_id,label")
    y = np.full(n, -1, dtype=np.int64)
    for ln, row in enumerate(label_rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"{labels_path}:{ln}: expected 2 fields")
        sid, label = row
        if sid not in order:
            raise ParseError(f"{labels_path}:{ln}: unknown sample_id '{sid}'")
        if label not in ("0", "1"):
            raise ParseError(f"{labels_path}:{ln}: label must be 0 or 1, got '{label}'")
        y[order[sid]] = int(label)
    unlabeled = [sample_ids[i] for i in np.nonzero(y < 0)[0]]
    if unlabeled:
        raise ParseError(f"{labels_path}: missing label for sample_id '{unlabeled[0]}'")

    return Dataset(
        X=x, V=v, Delta=compute_deltas(v), Y=y,
        sample_ids=tuple(sample_ids), feature_names=feature_names,
    )


def save_dataset(ds: Dataset, out_dir, include_truth: bool = True) -> dict:
    """Write values/labels (and truth when present) CSVs in canonical form."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "values": out / "values.csv",
        "labels": out / "labels.csv",
    }
    header = "sample_id,hour," + ",".join(ds.feature_names)

    def write_grid(path, grid, mask):
        lines = [header]
        for i, sid in enumerate(ds.sample_ids):
            for t in range(ds.num_steps):
                cells = [
                    _format_value(grid[i, t, j]) if mask is None or mask[i, t, j] == 1 else ""
                    for j in range(ds.num_features)
                ]
                lines.append(f"{sid},{t}," + ",".join(cells))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    write_grid(paths["values"], ds.X, ds.V)
    label_lines = ["sample_id,label"] + [
        f"{sid},{int(ds.Y[i])}" for i, sid in enumerate(ds.sample_ids)
    ]
    paths["labels"].write_text("\n".join(label_lines) + "\n", encoding="utf-8")
    if include_truth and ds.truth is not None:
        paths["truth"] = out / "truth.csv"
        write_grid(paths["truth"], ds.truth, None)
    return paths


def attach_truth(ds: Dataset, truth_path) -> Dataset:
    """Attach a full no-missing grid saved by save_dataset to a dataset."""
    truth_path = Path(truth_path)
    with open(truth_path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0][2:]) != ds.feature_names:
        raise ParseError(f"{truth_path}:1: header does not match dataset features")
    order = {sid: i for i, sid in enumerate(ds.sample_ids)}
    truth = np.zeros_like(ds.X)
    seen = np.zeros(ds.X.shape[:2], dtype=bool)
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        sid, hour = row[0], int(row[1])
        if sid not in order:
            raise ParseError(f"{truth_path}:{ln}: unknown sample_id '{sid}'")
        if not 0 <= hour < ds.num_steps:
            raise ParseError(f"{truth_path}:{ln}: hour {hour} out of range")
        try:
            truth[order[sid], hour, :] = [float(c) for c in row[2:]]
        except ValueError:
            raise ParseError(f"{truth_path}:{ln}: non-numeric cell") from None
        seen[order[sid], hour] = True
    if not seen.all():
        raise ParseError(f"{truth_path}: grid is incomplete")
    return replace(ds, truth=truth)


# ---------------------------------------------------------------------------
# transformations


def compute_deltas(v: np.ndarray, step_length: float = 1.0) -> np.ndarray:
    """Per feature: delta[0] = 0; delta[t] = step + delta[t-1] if unobserved
    at t-1, else step."""
    v = np.asarray(v, dtype=np.float64)
    d = np.zeros_like(v)
    for t in range(1, v.shape[1]):
        d[:, t, :] = step_length + d[:, t - 1, :] * (v[:, t - 1, :] == 0)
    return d


def normalize(ds: Dataset, stats: NormStats) -> Dataset:
    """Z-score observed cells; missing cells stay 0 (the post-normalization
    feature mean). eval_values/truth are transformed alongside."""
    if ds.normalized:
        raise ContractError("dataset is already normalized")
    if np.any(stats.std <= 0):
        j = int(np.argwhere(stats.std <= 0)[0])
        raise DegenerateFeatureError(f"feature '{ds.feature_names[j]}' has std 0")
    x = (ds.X - stats.mean) / stats.std * ds.V
    scale = lambda a: None if a is None else (a - stats.mean) / stats.std
    eval_values = scale(ds.eval_values)
    if eval_values is not None:
        eval_values = eval_values * ds.eval_mask
    return replace(
        ds, X=x, normalized=True, eval_values=eval_values, truth=scale(ds.truth)
    )


def denormalize_grid(grid: np.ndarray, stats: NormStats) -> np.ndarray:
    return grid * stats.std + stats.mean


def simulate_mar(ds: Dataset, rate: float, seed) -> Dataset:
    """Hide floor(rate * observed) cells per sample, uniformly at random.

    Hidden cells are recorded in eval_mask with their originals kept in
    eval_values; V flips to 0, X zero-fills, and Delta is recomputed against
    the thinned mask the model will actually see.
    """
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"MAR rate {rate} outside [0, 1)")
    rng = np.random.default_rng(seed)
    x = ds.X.copy()
    v = ds.V.copy()
    eval_mask = np.zeros_like(v)
    eval_values = np.zeros_like(x)
    if rate > 0:
        for i in range(ds.num_samples):
            obs = np.argwhere(ds.V[i] == 1)
            n_hide = int(rate * len(obs))
            if n_hide >= len(obs) and len(obs) > 0:
                warnings.warn(f"sample {ds.sample_ids[i]}: capping MAR to keep one observed cell")
                n_hide = len(obs) - 1
            if n_hide == 0:
                continue
            pick = obs[rng.choice(len(obs), size=n_hide, replace=False)]
            ti, tj = pick[:, 0], pick[:, 1]
            eval_mask[i, ti, tj] = 1.0
            eval_values[i, ti, tj] = ds.X[i, ti, tj]
            v[i, ti, tj] = 0.0
            x[i, ti, tj] = 0.0
    return replace(
        ds, X=x, V=v, Delta=compute_deltas(v), eval_mask=eval_mask, eval_values=eval_values
    )


def split(ds: Dataset, test_fraction: float = 0.2, seed=0) -> tuple[Dataset, Dataset]:
    """Label-stratified sample-level partition with |test| = round(f * N)."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractError(f"test_fraction {test_fraction} outside (0, 1)")
    n = ds.num_samples
    n_test = int(np.floor(test_fraction * n + 0.5))
    rng = np.random.default_rng(seed)

    class_indices = {c: np.nonzero(ds.Y == c)[0] for c in (0, 1)}
    quotas = {}
    fractional = []
    assigned = 0
    for c, idx in class_indices.items():
        exact = test_fraction * len(idx)
        quotas[c] = int(np.floor(exact))
        assigned += quotas[c]
        fractional.append((exact - quotas[c], c))
    for _, c in sorted(fractional, reverse=True):
        if assigned >= n_test:
            break
        if quotas[c] < len(class_indices[c]):
            quotas[c] += 1
            assigned += 1

    test_idx = []
    for c, idx in class_indices.items():
        if len(idx) == 0:
            continue
        perm = rng.permutation(idx)
        test_idx.extend(perm[: quotas[c]])
    test_idx = np.sort(np.asarray(test_idx, dtype=np.int64))
    train_idx = np.setdiff1d(np.arange(n), test_idx)

    for name, idx in (("train", train_idx), ("test", test_idx)):
        present = set(ds.Y[idx].tolist())
        if present != {0, 1}:
            warnings.warn(f"{name} split does not contain both classes (N={n})")
    return ds.subset(train_idx), ds.subset(test_idx)


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Latent AR(1) process driving correlated features, with MCAR masking.

    z_t = 0.9 z_{t-1} + sqrt(1 - 0.81) eta keeps unit stationary variance;
    features are z_t @ loading + 0.3 xi; the label is a Bernoulli draw on a
    logistic score of the temporal latent mean. The full pre-masking grid is
    kept in ``truth`` so imputation error is exactly measurable.
    """
    rng = np.random.default_rng(cfg.seed)
    n, t, m, l = cfg.n, cfg.t, cfg.m, cfg.latent_dim

    loading = rng.standard_normal((l, m))
    label_w = rng.standard_normal(l)
    label_w /= np.linalg.norm(label_w)

    z = np.zeros((n, t, l))
    z[:, 0, :] = rng.standard_normal((n, l))
    innov_scale = np.sqrt(1.0 - 0.81)
    for step in range(1, t):
        z[:, step, :] = 0.9 * z[:, step - 1, :] + innov_scale * rng.standard_normal((n, l))

    truth = z @ loading + 0.3 * rng.standard_normal((n, t, m))

    score = 3.0 * (z.mean(axis=1) @ label_w) + cfg.label_noise * rng.standard_normal(n)
    y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-score))).astype(np.int64)

    v = (rng.uniform(size=(n, t, m)) >= cfg.missing_rate).astype(np.float64)
    x = truth * v

    ids = tuple(f"s{i:04d}" for i in range(n))
    names = tuple(f"f{j + 1}" for j in range(m))
    return Dataset(
        X=x, V=v, Delta=compute_deltas(v), Y=y,
        sample_ids=ids, feature_names=names, truth=truth,
    )


# ---------------------------------------------------------------------------
# baseline imputers

_STRATEGIES = ("zero", "mean", "forward_fill")


def baseline_impute(ds: Dataset, strategy: str, stats: Optional[NormStats] = None) -> np.ndarray:
    """Fill every V=0 cell (natural missing and eval-hidden alike).

    ``mean`` uses the NormStats feature means expressed in the grid's scale,
    which is identically 0 for a normalized dataset; ``forward_fill`` falls
    back to that mean before the first observation.
    """
    if strategy not in _STRATEGIES:
        raise ContractError(f"unknown strategy '{strategy}'; choose from {_STRATEGIES}")
    if strategy == "zero":
        fill = np.zeros(ds.num_features)
    else:
        if ds.normalized:
            fill = np.zeros(ds.num_features)
        else:
            if stats is None:
                raise ContractError(f"strategy '{strategy}' needs NormStats on raw data")
            fill = stats.mean

    out = ds.X.copy()
    missing = ds.V == 0
    if strategy in ("zero", "mean"):
        for j in range(ds.num_features):
            out[:, :, j][missing[:, :, j]] = fill[j]
        return out

    for i in range(ds.num_samples):
        for j in range(ds.num_features):
            last = fill[j]
            for t in range(ds.num_steps):
                if ds.V[i, t, j] == 1:
                    last = ds.X[i, t, j]
                else:
                    out[i, t, j] = last
    return out
