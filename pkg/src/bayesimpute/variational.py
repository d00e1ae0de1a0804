"""Gaussian weight posteriors with a scale-mixture prior.

Each weight group keeps a factorized Gaussian posterior N(mu, sigma^2) with
sigma = softplus(rho), sampled by reparameterization so gradients reach mu
and rho through the tape. The Monte-Carlo KL complexity cost is the sum of
log q(w) - log p(w) over all groups for the weights drawn this step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ContractError

LOG_2PI = float(np.log(2.0 * np.pi))


def softplus_np(x):
    return np.logaddexp(0.0, x)


def sigmoid_np(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class ScaleMixturePrior:
    """Two-component zero-mean Gaussian mixture prior over weights."""

    pi: float = 0.5
    sigma1: float = 1.0
    sigma2: float = float(np.exp(-6.0))

    def __post_init__(self):
        if not 0.0 <= self.pi <= 1.0:
            raise ContractError(f"mixing weight pi={self.pi} outside [0, 1]")
        if not self.sigma1 >= self.sigma2 > 0.0:
            raise ContractError(
                f"prior stds must satisfy sigma1 >= sigma2 > 0, got {self.sigma1}, {self.sigma2}"
            )


class VariationalTensor:
    """Posterior parameters (mu, rho) for one weight group; sigma = softplus(rho)."""

    __slots__ = ("mu", "rho")

    def __init__(self, mu, rho):
        self.mu = np.asarray(mu, dtype=np.float64)
        self.rho = np.asarray(rho, dtype=np.float64)
        if self.mu.shape != self.rho.shape:
            raise ContractError(
                f"mu and rho shapes differ: {self.mu.shape} vs {self.rho.shape}"
            )

    @property
    def shape(self):
        return self.mu.shape

    @property
    def sigma(self) -> np.ndarray:
        return softplus_np(self.rho)


@dataclass
class SampledWeights:
    """A concrete draw w = mu + softplus(rho) * eps, with its handles.

    ``mu``/``rho`` are the tape leaves (or constants) the draw was built
    from; ``rho`` and ``eps`` are None in point (deterministic) mode.
    """

    w: Tensor
    mu: Tensor
    rho: Optional[Tensor]
    eps: Optional[np.ndarray]


def init_variational(shape, fan_in: int, rng: np.random.Generator) -> VariationalTensor:
    """mu ~ Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); rho = -3 (sigma ~ 0.0486)."""
    if fan_in < 1:
        raise ContractError(f"fan_in must be >= 1, got {fan_in}")
    bound = 1.0 / np.sqrt(fan_in)
    mu = rng.uniform(-bound, bound, size=shape)
    rho = np.full(shape, -3.0)
    return VariationalTensor(mu, rho)


def sample_weights(vt: VariationalTensor, rng: Optional[np.random.Generator],
                   tape: Optional[Tape] = None,
                   eps: Optional[np.ndarray] = None) -> SampledWeights:
    """Draw w = mu + softplus(rho) * eps with eps ~ N(0, I).

    With a tape, mu and rho become leaves so the draw is differentiable in
    both. ``eps`` may be forced for tests; otherwise ``rng`` supplies it.
    """
    if eps is None:
        eps = rng.standard_normal(vt.shape)
    else:
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != vt.shape:
            raise ContractError(f"eps shape {eps.shape} != weight shape {vt.shape}")
    if tape is not None:
        mu_t, rho_t = tape.leaf(vt.mu), tape.leaf(vt.rho)
    else:
        mu_t, rho_t = Tensor(vt.mu), Tensor(vt.rho)
    w = ad.add(mu_t, ad.mul(ad.softplus(rho_t), Tensor(eps)))
    return SampledWeights(w=w, mu=mu_t, rho=rho_t, eps=eps)


def point_weights(vt: VariationalTensor, tape: Optional[Tape] = None) -> SampledWeights:
    """The mu point estimate with no sampling (deterministic mode)."""
    mu_t = tape.leaf(vt.mu) if tape is not None else Tensor(vt.mu)
    return SampledWeights(w=mu_t, mu=mu_t, rho=None, eps=None)


def log_q(sw: SampledWeights) -> Tensor:
    """Sum over entries of log N(w; mu, softplus(rho)^2) for one group."""
    if sw.rho is None:
        raise ContractError("log_q undefined for point-mode weights")
    n = sw.w.size
    log_sigma = ad.log(ad.softplus(sw.rho))
    d = ad.sub(sw.w, sw.mu)
    inv_var = ad.exp(ad.mul(log_sigma, -2.0))
    quad = ad.mul(ad.sum(ad.mul(ad.mul(d, d), inv_var)), 0.5)
    return ad.sub(ad.sub(Tensor(-0.5 * LOG_2PI * n), ad.sum(log_sigma)), quad)


def log_prior(sw: SampledWeights, prior: ScaleMixturePrior) -> Tensor:
    """Sum over entries of the log scale-mixture density at w.

    The two-component case uses log-sum-exp in the form a + softplus(b - a)
    with a the wide component, so narrow-component underflow at large |w|
    stays harmless.
    """
    w = sw.w
    w2 = ad.mul(w, w)

    def component(sigma):
        c = -0.5 * LOG_2PI - np.log(sigma)
        k = 0.5 / (sigma * sigma)
        return ad.add(ad.mul(w2, -k), c)

    if prior.pi == 1.0:
        return ad.sum(component(prior.sigma1))
    if prior.pi == 0.0:
        return ad.sum(component(prior.sigma2))
    a = ad.add(component(prior.sigma1), float(np.log(prior.pi)))
    b = ad.add(component(prior.sigma2), float(np.log(1.0 - prior.pi)))
    return ad.sum(ad.add(a, ad.softplus(ad.sub(b, a))))


def kl_mc_terms(samples: Sequence[SampledWeights], prior: ScaleMixturePrior) -> Tensor:
    """Single-draw Monte-Carlo estimate of KL[q || p]: sum of log_q - log_prior."""
    total: Optional[Tensor] = None
    for sw in samples:
        term = ad.sub(log_q(sw), log_prior(sw, prior))
        total = term if total is None else ad.add(total, term)
    if total is None:
        return Tensor(0.0)
    return total
