"""The recurrent imputation/prediction dynamical system.

Per step t: the previous hidden state is shrunk by a temporal decay factor
gamma = exp(-max(0, Wg . delta + bg)), an imputation MLP proposes values for
every feature from [h_decayed ; x*v ; v], the mask merges proposals into the
observed row, and a tanh recurrence updates the hidden state. The output
logit is a single affine map of [final hidden state ; per-feature temporal
means of the merged input].

``unroll`` runs a whole batch through one tape (one tape row per op, not per
sample); ``forward`` is the single-sample view over the same code path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ContractError, DegenerateInputError, DimensionError
from .variational import VariationalTensor, init_variational

_CELLS = ("tanh",)


@dataclass(frozen=True)
class ModelConfig:
    num_features: int
    hidden_size: int = 16
    imputation_hidden_size: Optional[int] = None
    cell: str = "tanh"
    deterministic_mode: bool = False

    def __post_init__(self):
        if self.num_features < 1 or self.hidden_size < 1:
            raise ContractError("num_features and hidden_size must be >= 1")
        if self.imputation_hidden_size is None:
            object.__setattr__(self, "imputation_hidden_size", self.hidden_size)
        if self.imputation_hidden_size < 1:
            raise ContractError("imputation_hidden_size must be >= 1")
        if self.cell not in _CELLS:
            raise ContractError(f"unsupported cell '{self.cell}'; choose from {_CELLS}")

    def to_dict(self) -> dict:
        return {
            "num_features": self.num_features,
            "hidden_size": self.hidden_size,
            "imputation_hidden_size": self.imputation_hidden_size,
            "cell": self.cell,
            "deterministic_mode": self.deterministic_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def weight_specs(cfg: ModelConfig) -> list[tuple[str, tuple, int]]:
    """Ordered (name, shape, fan_in) for every weight group part.

    Row-vector convention: states are (1, H) rows, inputs (1, M) rows, so
    matrices map by right-multiplication. Bias fan_in is the layer's total
    input width.
    """
    m, h, g = cfg.num_features, cfg.hidden_size, cfg.imputation_hidden_size
    return [
        ("w_r.hh", (h, h), h),
        ("w_r.xh", (m, h), m),
        ("w_r.b", (1, h), h + m),
        ("u_x.w1", (h + 2 * m, g), h + 2 * m),
        ("u_x.b1", (1, g), h + 2 * m),
        ("u_x.w2", (g, m), g),
        ("u_x.b2", (1, m), g),
        ("w_gamma.w", (m, h), m),
        ("w_gamma.b", (1, h), m),
        ("w_out.w", (h + m, 1), h + m),
        ("w_out.b", (1, 1), h + m),
    ]


class ModelWeights:
    """All trainable weight groups as variational tensors, in a fixed order."""

    def __init__(self, cfg: ModelConfig, tensors: dict[str, VariationalTensor]):
        expected = weight_specs(cfg)
        if [n for n, _, _ in expected] != list(tensors):
            raise ContractError("weight group names do not match the model config")
        for name, shape, _ in expected:
            if tensors[name].shape != shape:
                raise DimensionError(
                    f"weight '{name}' has shape {tensors[name].shape}, expected {shape}"
                )
        self.cfg = cfg
        self.tensors = tensors

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "ModelWeights":
        tensors = {
            name: init_variational(shape, fan_in, rng)
            for name, shape, fan_in in weight_specs(cfg)
        }
        return cls(cfg, tensors)

    def items(self):
        return self.tensors.items()


@dataclass
class ForwardResult:
    """Single-sample outputs; all fields live on the weights' tape (if any)."""

    x_hat: Tensor     # (T, M) imputations for every cell
    x_tilde: Tensor   # (T, M) observed-where-observed merge
    h_traj: Tensor    # (T, H) hidden trajectory
    logit: Tensor     # (1, 1) pre-sigmoid prediction


@dataclass
class BatchRun:
    """Batched rollout: per-step tensors plus the pooled outputs."""

    x_hat_steps: list    # T tensors of shape (B, M)
    x_tilde_steps: list  # T tensors of shape (B, M)
    h_steps: list        # T tensors of shape (B, H)
    x_tilde_mean: Tensor  # (B, M) temporal mean of the merged input
    logit: Tensor        # (B, 1)


def decay_hidden(h_prev: Tensor, delta_t, w: Tensor, b: Tensor) -> Tensor:
    """gamma = exp(-max(0, delta . w + b)) elementwise in (0, 1]; returns gamma * h."""
    delta_t = delta_t if isinstance(delta_t, Tensor) else Tensor(delta_t)
    if np.any(delta_t.data < 0):
        raise ContractError("time gaps must be nonnegative")
    gamma = ad.exp(ad.neg(ad.relu(ad.add(ad.matmul(delta_t, w), b))))
    return ad.mul(gamma, h_prev)


def impute_step(h_prev_decayed: Tensor, x_t, v_t, w1: Tensor, b1: Tensor,
                w2: Tensor, b2: Tensor) -> Tensor:
    """One-hidden-layer tanh MLP over [h ; x*v ; v], proposing all M features."""
    x_t = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
    v_t = v_t if isinstance(v_t, Tensor) else Tensor(v_t)
    inp = ad.concat([h_prev_decayed, ad.mul(x_t, v_t), v_t], axis=1)
    hidden = ad.tanh(ad.add(ad.matmul(inp, w1), b1))
    return ad.add(ad.matmul(hidden, w2), b2)


def masked_combine(x, x_hat: Tensor, v) -> Tensor:
    """Observed cells keep x; missing cells take x_hat (gradient only there)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    v = v if isinstance(v, Tensor) else Tensor(v)
    vd = v.data
    if not np.all((vd == 0.0) | (vd == 1.0)):
        raise ContractError("mask values must be 0 or 1")
    return ad.add(ad.mul(x, v), ad.mul(x_hat, Tensor(1.0 - vd)))


def rnn_step(h_prev_decayed: Tensor, x_tilde_t: Tensor, hh: Tensor, xh: Tensor,
             b: Tensor) -> Tensor:
    """h' = tanh(h . hh + x . xh + b); entries stay in (-1, 1)."""
    return ad.tanh(
        ad.add(ad.add(ad.matmul(h_prev_decayed, hh), ad.matmul(x_tilde_t, xh)), b)
    )


def predict_output(x_tilde: Tensor, h_traj: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map of [last hidden row ; per-feature temporal means of x_tilde]."""
    t = x_tilde.shape[0]
    if t == 0:
        raise DegenerateInputError("cannot predict from an empty trajectory")
    col_means = ad.reshape(ad.mean(x_tilde, axis=0), (1, x_tilde.shape[1]))
    feats = ad.concat([ad.take_row(h_traj, t - 1), col_means], axis=1)
    return ad.add(ad.matmul(feats, w), b)


def _check_grids(x, v, d):
    if not (x.shape == v.shape == d.shape) or x.ndim != 3:
        raise DimensionError(
            f"X, V, Delta must share one (B, T, M) shape, got {x.shape}, {v.shape}, {d.shape}"
        )
    if not np.all((v == 0.0) | (v == 1.0)):
        raise ContractError("mask values must be 0 or 1")
    if np.any(d < 0):
        raise ContractError("time gaps must be nonnegative")


def unroll(x: np.ndarray, v: np.ndarray, d: np.ndarray,
           w: Mapping[str, Tensor], cfg: ModelConfig) -> BatchRun:
    """Roll the whole (B, T, M) batch through the dynamics on one tape.

    ``w`` maps weight_specs names to tensors (sampled, point, or constant);
    h0 = 0. X must be zero-filled at missing cells.
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    _check_grids(x, v, d)
    bsz, t_steps, m = x.shape
    if m != cfg.num_features:
        raise DimensionError(f"data has {m} features, model expects {cfg.num_features}")

    def rows(bias):
        return ad.repeat_rows(bias, bsz) if bsz > 1 else bias

    bg = rows(w["w_gamma.b"])
    b1 = rows(w["u_x.b1"])
    b2 = rows(w["u_x.b2"])
    br = rows(w["w_r.b"])
    bo = rows(w["w_out.b"])

    h = Tensor(np.zeros((bsz, cfg.hidden_size)))
    x_hat_steps, x_tilde_steps, h_steps = [], [], []
    x_tilde_sum = None
    for t in range(t_steps):
        x_t, v_t, d_t = Tensor(x[:, t, :]), Tensor(v[:, t, :]), Tensor(d[:, t, :])
        h_dec = decay_hidden(h, d_t, w["w_gamma.w"], bg)
        x_hat_t = impute_step(h_dec, x_t, v_t, w["u_x.w1"], b1, w["u_x.w2"], b2)
        x_tilde_t = masked_combine(x_t, x_hat_t, v_t)
        h = rnn_step(h_dec, x_tilde_t, w["w_r.hh"], w["w_r.xh"], br)
        x_hat_steps.append(x_hat_t)
        x_tilde_steps.append(x_tilde_t)
        h_steps.append(h)
        x_tilde_sum = x_tilde_t if x_tilde_sum is None else ad.add(x_tilde_sum, x_tilde_t)

    x_tilde_mean = ad.mul(x_tilde_sum, 1.0 / t_steps)
    feats = ad.concat([h, x_tilde_mean], axis=1)
    logit = ad.add(ad.matmul(feats, w["w_out.w"]), bo)
    return BatchRun(x_hat_steps, x_tilde_steps, h_steps, x_tilde_mean, logit)


def forward(sample: tuple, w: Mapping[str, Tensor], cfg: ModelConfig) -> ForwardResult:
    """Run one (X, V, Delta) sample; grids are (T, M)."""
    x, v, d = (np.asarray(a, dtype=np.float64) for a in sample)
    if x.ndim != 2:
        raise DimensionError(f"sample grids must be (T, M), got {x.shape}")
    run = unroll(x[None], v[None], d[None], w, cfg)
    return ForwardResult(
        x_hat=ad.concat(run.x_hat_steps, axis=0),
        x_tilde=ad.concat(run.x_tilde_steps, axis=0),
        h_traj=ad.concat(run.h_steps, axis=0),
        logit=run.logit,
    )


def sampled_tensors(weights: ModelWeights, rng: Optional[np.random.Generator],
                    tape: Optional[Tape] = None) -> tuple[dict, list]:
    """Draw one set of concrete weights (point weights in deterministic mode).

    Returns ({name: w tensor}, [SampledWeights in fixed order]).
    """
    from .variational import point_weights, sample_weights

    w_map, sampled = {}, []
    for name, vt in weights.items():
        if weights.cfg.deterministic_mode:
            sw = point_weights(vt, tape)
        else:
            sw = sample_weights(vt, rng, tape)
        w_map[name] = sw.w
        sampled.append(sw)
    return w_map, sampled
