"""Composite-loss minibatch training with Adam, and checkpoint persistence.

Per step: one weight draw per group (point weights in deterministic mode),
a batched rollout, then

    total = kl_weight * KL_mc + lambda_imp * L_imp + lambda_pred * c * L_pred

with kl_weight = 1 / num_batches so the KL cost is spent exactly once per
epoch, L_imp the batch mean of per-sample masked mean absolute error, and
L_pred the batch mean binary cross-entropy on the logits. c is the
prediction NLL count: the loss equations add the prediction likelihood both
inside the ELBO and as an explicit term, so c=2 reproduces them verbatim
while the default c=1 counts it once.

Checkpoint file layout (version 1, little-endian):
    bytes 0..7   magic "BIMPCKPT"
    bytes 8..11  uint32 format version
    bytes 12..19 uint64 manifest length L
    bytes 20..   UTF-8 JSON manifest (sorted keys), then the data section:
                 float64 arrays concatenated in manifest order.
The manifest records model config, norm stats, metadata, a crc32 of the
data section, and per-array name/shape/offset.
"""

from __future__ import annotations

import json
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import Dataset, NormStats
from .errors import CheckpointError, ContractError, NumericError
from .model import BatchRun, ModelConfig, ModelWeights, sampled_tensors, unroll
from .variational import ScaleMixturePrior, VariationalTensor, kl_mc_terms

_MAGIC = b"BIMPCKPT"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_imp: float = 1.0
    lambda_pred: float = 1.0
    mc_train_samples: int = 1
    seed: int = 0
    prior_pi: float = 0.5
    prior_sigma1: float = 1.0
    prior_sigma2: float = float(np.exp(-6.0))
    prediction_nll_count: int = 1
    grad_clip: float = 5.0  # 0 disables
    kl_weight_mode: str = "uniform"  # each batch carries KL / num_batches

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.mc_train_samples < 1:
            raise ContractError("epochs >= 0, batch_size >= 1, mc_train_samples >= 1")
        if self.learning_rate <= 0 or self.adam_eps <= 0:
            raise ContractError("learning_rate and adam_eps must be positive")
        if self.prediction_nll_count not in (1, 2):
            raise ContractError("prediction_nll_count must be 1 or 2")
        if self.grad_clip < 0:
            raise ContractError("grad_clip must be >= 0 (0 disables)")
        if self.kl_weight_mode != "uniform":
            raise ContractError(f"unsupported kl_weight_mode '{self.kl_weight_mode}'")

    def prior(self) -> ScaleMixturePrior:
        return ScaleMixturePrior(self.prior_pi, self.prior_sigma1, self.prior_sigma2)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# loss terms


def loss_imputation(x, x_hat: Tensor, v) -> Tensor:
    """Mean |x - x_hat| over observed cells; V=0 cells contribute exactly 0.

    The residual is masked before the absolute value, so the gradient
    w.r.t. x_hat is identically zero wherever v = 0.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    v = v if isinstance(v, Tensor) else Tensor(v)
    count = float(np.sum(v.data))
    if count == 0:
        warnings.warn("imputation loss over a fully-missing grid; returning 0")
        return Tensor(0.0)
    masked = ad.absolute(ad.mul(ad.sub(x, x_hat), v))
    return ad.mul(ad.sum(masked), 1.0 / count)


def loss_prediction(logit: Tensor, y) -> Tensor:
    """Binary cross-entropy in softplus form: softplus(logit) - y * logit."""
    y_arr = np.asarray(y, dtype=np.float64)
    if not np.all((y_arr == 0) | (y_arr == 1)):
        raise ContractError("labels must be 0 or 1")
    if y_arr.size != logit.size:
        raise ContractError(f"{y_arr.size} labels for {logit.size} logits")
    per = ad.sub(ad.softplus(logit), ad.mul(logit, Tensor(y_arr.reshape(logit.shape))))
    return ad.mean(per)


def loss_total(imputation: Tensor, prediction: Tensor, kl_term: Tensor,
               cfg: TrainConfig, num_batches: int) -> Tensor:
    """kl_weight * KL + lambda_imp * L_imp + lambda_pred * c * L_pred."""
    if num_batches < 1:
        raise ContractError("num_batches must be >= 1")
    kl_weight = 1.0 / num_batches
    total = ad.mul(kl_term, kl_weight)
    total = ad.add(total, ad.mul(imputation, cfg.lambda_imp))
    total = ad.add(total, ad.mul(prediction, cfg.lambda_pred * cfg.prediction_nll_count))
    return total


def _batch_imputation_loss(run: BatchRun, x: np.ndarray, v: np.ndarray) -> Tensor:
    """Batch mean of per-sample masked mean absolute error, on the tape."""
    bsz = x.shape[0]
    counts = v.reshape(bsz, -1).sum(axis=1)
    if np.any(counts == 0):
        warnings.warn(f"{int((counts == 0).sum())} sample(s) with no observed cells in batch")
    inv = np.zeros(bsz)
    nz = counts > 0
    inv[nz] = 1.0 / counts[nz]
    total = None
    for t, x_hat_t in enumerate(run.x_hat_steps):
        # constant per-cell weights fold the mask and both means together
        w_t = v[:, t, :] * inv[:, None] / bsz
        term = ad.sum(ad.mul(ad.absolute(ad.mul(ad.sub(Tensor(x[:, t, :]), x_hat_t), Tensor(v[:, t, :]))), Tensor(w_t)))
        total = term if total is None else ad.add(total, term)
    return total if total is not None else Tensor(0.0)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def init(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              betas: tuple = (0.9, 0.999), eps: float = 1e-8) -> None:
    """Standard Adam update with bias correction; params updated in place."""
    b1, b2 = betas
    state.t += 1
    t = state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} != param shape {p.shape} for '{k}'")
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = state.m[k] / (1 - b1**t)
        v_hat = state.v[k] / (1 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients jointly to a global norm cap; returns the raw norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model_config: ModelConfig
    arrays: dict              # name -> {"mu": array, "rho": array}
    norm_stats: Optional[NormStats]
    meta: dict = field(default_factory=dict)
    format_version: int = _FORMAT_VERSION

    def to_weights(self) -> ModelWeights:
        tensors = {
            name: VariationalTensor(parts["mu"], parts["rho"])
            for name, parts in self.arrays.items()
        }
        return ModelWeights(self.model_config, tensors)

    @classmethod
    def from_weights(cls, weights: ModelWeights, norm_stats=None, meta=None) -> "Checkpoint":
        arrays = {
            name: {"mu": vt.mu.copy(), "rho": vt.rho.copy()}
            for name, vt in weights.items()
        }
        return cls(weights.cfg, arrays, norm_stats, dict(meta or {}))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    entries = []
    chunks = []
    offset = 0
    for name, parts in ckpt.arrays.items():
        for part in ("mu", "rho"):
            arr = np.ascontiguousarray(parts[part], dtype="<f8")
            raw = arr.tobytes()
            entries.append(
                {"name": f"{name}.{part}", "shape": list(arr.shape), "offset": offset}
            )
            chunks.append(raw)
            offset += len(raw)
    data = b"".join(chunks)
    manifest = {
        "format_version": ckpt.format_version,
        "model_config": ckpt.model_config.to_dict(),
        "norm_stats": None if ckpt.norm_stats is None else ckpt.norm_stats.to_dict(),
        "meta": ckpt.meta,
        "arrays": entries,
        "data_bytes": len(data),
        "data_crc32": zlib.crc32(data),
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(np.uint32(ckpt.format_version).tobytes())
        f.write(np.uint64(len(blob)).tobytes())
        f.write(blob)
        f.write(data)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 20 or raw[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    if version != _FORMAT_VERSION:
        raise CheckpointError(f"{path}: unknown format version {version}")
    mlen = int(np.frombuffer(raw[12:20], dtype="<u8")[0])
    if len(raw) < 20 + mlen:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[20 : 20 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt manifest ({e})") from None
    data = raw[20 + mlen :]
    if len(data) != manifest["data_bytes"]:
        raise CheckpointError(
            f"{path}: truncated data section ({len(data)} of {manifest['data_bytes']} bytes)"
        )
    if zlib.crc32(data) != manifest["data_crc32"]:
        raise CheckpointError(f"{path}: data checksum mismatch")

    flat = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        arr = np.frombuffer(
            data, dtype="<f8", count=nbytes // 8, offset=entry["offset"]
        ).reshape(shape).copy()
        flat[entry["name"]] = arr
    arrays = {}
    for key, arr in flat.items():
        name, part = key.rsplit(".", 1)
        arrays.setdefault(name, {})[part] = arr

    cfg = ModelConfig.from_dict(manifest["model_config"])
    stats = (
        None if manifest["norm_stats"] is None else NormStats.from_dict(manifest["norm_stats"])
    )
    ckpt = Checkpoint(cfg, arrays, stats, manifest["meta"], version)
    try:
        ckpt.to_weights()  # validates names and shapes against the config
    except Exception as e:
        raise CheckpointError(f"{path}: arrays inconsistent with model config ({e})") from None
    return ckpt


# ---------------------------------------------------------------------------
# training loop


def _param_map(weights: ModelWeights) -> dict:
    params = {}
    for name, vt in weights.items():
        params[f"{name}.mu"] = vt.mu
        if not weights.cfg.deterministic_mode:
            params[f"{name}.rho"] = vt.rho
    return params


def _leaf_ids(sampled, weights: ModelWeights) -> dict:
    ids = {}
    for (name, _), sw in zip(weights.items(), sampled):
        ids[f"{name}.mu"] = sw.mu.node_id
        if sw.rho is not None:
            ids[f"{name}.rho"] = sw.rho.node_id
    return ids


def train(train_ds: Dataset, model_cfg: ModelConfig, cfg: TrainConfig,
          norm_stats: Optional[NormStats] = None,
          extra_meta: Optional[dict] = None):
    """Run the optimization; returns (Checkpoint, per-epoch log rows).

    RNG streams are derived from cfg.seed with fixed labels so runs are
    bit-reproducible: init [seed,0], weight draws [seed,1], shuffling
    [seed,2].
    """
    rng_init = np.random.default_rng([cfg.seed, 0])
    rng_eps = np.random.default_rng([cfg.seed, 1])
    rng_shuffle = np.random.default_rng([cfg.seed, 2])

    weights = ModelWeights.init(model_cfg, rng_init)
    params = _param_map(weights)
    state = AdamState.init(params)
    prior = cfg.prior()

    n = train_ds.num_samples
    num_batches = max(1, int(np.ceil(n / cfg.batch_size)))
    log = []
    final_loss = float("nan")

    for epoch in range(cfg.epochs):
        perm = rng_shuffle.permutation(n)
        sums = {"total": 0.0, "imputation": 0.0, "prediction": 0.0, "kl": 0.0}
        for b in range(num_batches):
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            xb, vb, db = train_ds.X[idx], train_ds.V[idx], train_ds.Delta[idx]
            yb = train_ds.Y[idx]

            tape = Tape()
            totals, draw_ids = [], []
            imp_v = pred_v = kl_v = 0.0
            for _ in range(cfg.mc_train_samples):
                w_map, sampled = sampled_tensors(weights, rng_eps, tape)
                draw_ids.append(_leaf_ids(sampled, weights))
                run = unroll(xb, vb, db, w_map, model_cfg)
                imp = _batch_imputation_loss(run, xb, vb)
                pred = loss_prediction(run.logit, yb)
                if model_cfg.deterministic_mode:
                    kl = Tensor(0.0)
                else:
                    kl = kl_mc_terms(sampled, prior)
                totals.append(loss_total(imp, pred, kl, cfg, num_batches))
                imp_v += imp.item()
                pred_v += pred.item()
                kl_v += kl.item()

            total = totals[0]
            for extra in totals[1:]:
                total = ad.add(total, extra)
            if cfg.mc_train_samples > 1:
                total = ad.mul(total, 1.0 / cfg.mc_train_samples)

            loss_value = total.item()
            if not np.isfinite(loss_value):
                culprit = tape.first_nonfinite()
                where = f"op '{culprit[1]}' (tape index {culprit[0]})" if culprit else "loss"
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {b}; first seen in {where}"
                )

            grads_by_id = ad.backward(total)
            # each draw registers its own leaves for the same parameter
            grads = {
                k: _sum_over_draws(grads_by_id, [ids[k] for ids in draw_ids])
                for k in draw_ids[0]
            }
            clip_gradients(grads, cfg.grad_clip)
            adam_step(
                params, grads, state, cfg.learning_rate,
                (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps,
            )

            s = cfg.mc_train_samples
            sums["total"] += loss_value
            sums["imputation"] += imp_v / s
            sums["prediction"] += pred_v / s
            sums["kl"] += kl_v / s
        row = {"epoch": epoch + 1}
        row.update({k: v / num_batches for k, v in sums.items()})
        log.append(row)
        final_loss = row["total"]

    meta = {
        "epochs": cfg.epochs,
        "final_loss": final_loss,
        "seed": cfg.seed,
        "train_config": cfg.to_dict(),
    }
    meta.update(extra_meta or {})
    return Checkpoint.from_weights(weights, norm_stats, meta), log


def _sum_over_draws(grads_by_id, ids):
    total = grads_by_id[ids[0]]
    for i in ids[1:]:
        total = total + grads_by_id[i]
    return total
