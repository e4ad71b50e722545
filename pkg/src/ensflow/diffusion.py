"""Training-free score engine: forward-SDE schedule, closed-form Monte Carlo
score estimation over an ensemble, and the reverse-time Euler-Maruyama sampler.

The forward noising process uses alpha(tau) = 1 - tau and beta^2(tau) = tau on
the pseudo-time interval [0, 1], giving drift b(tau) = -1/(1 - tau) and squared
diffusion sigma^2(tau) = (1 + tau)/(1 - tau). Both diverge at tau = 1 and the
score needs beta^2 > 0, so coefficient evaluations clamp tau to
[eps, 1 - eps].

The Monte Carlo score of an ensemble {z_j} at (z, tau) is the softmax-weighted
sum of -(z - alpha z_j)/beta^2 with log-weights -|z - alpha z_j|^2 / (2 beta^2);
it collapses to -(z - alpha * m_w(z))/beta^2 with m_w the weighted ensemble
mean, which is how it is evaluated (two matrix products instead of an
N x J x d tensor).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import rng


class Coefficients(NamedTuple):
    alpha: float
    beta2: float
    b: float
    sigma2: float


@dataclass(frozen=True)
class DiffusionSchedule:
    """Pseudo-time grid tau_l = l / L with coefficient tables.

    The stored alpha/beta2 tables keep the exact endpoint identities
    (alpha(0) = 1, beta2(0) = 0); b and sigma2 are tabulated with the clamp
    applied so every node is finite. Pointwise evaluation through at() always
    clamps, which is what the score and the sampler use.
    """

    L: int
    eps: float
    tau: np.ndarray
    alpha: np.ndarray
    beta2: np.ndarray
    b: np.ndarray
    sigma2: np.ndarray

    @property
    def dtau(self) -> float:
        return 1.0 / self.L

    def clamp(self, tau):
        return np.clip(tau, self.eps, 1.0 - self.eps)

    def at(self, tau) -> Coefficients:
        t = float(self.clamp(tau))
        return Coefficients(
            alpha=1.0 - t,
            beta2=t,
            b=-1.0 / (1.0 - t),
            sigma2=(1.0 + t) / (1.0 - t),
        )


def schedule(L: int, eps: float = 1e-3) -> DiffusionSchedule:
    """Build the coefficient tables for L pseudo-time steps."""
    if L < 2:
        raise ValueError("schedule needs L >= 2")
    if not 0.0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 0.5)")
    tau = np.arange(L + 1) / L
    tc = np.clip(tau, eps, 1.0 - eps)
    return DiffusionSchedule(
        L=L,
        eps=eps,
        tau=tau,
        alpha=1.0 - tau,
        beta2=tau.copy(),
        b=-1.0 / (1.0 - tc),
        sigma2=(1.0 + tc) / (1.0 - tc),
    )


@dataclass(frozen=True)
class ScoreContext:
    """An ensemble with a fixed mini-batch selection for score evaluation.

    The batch is drawn once (without replacement) and reused for every
    (z, tau) query, so a filter step sees one consistent estimator.
    """

    ensemble: np.ndarray
    batch_index: np.ndarray

    @property
    def batch(self) -> np.ndarray:
        return self.ensemble[self.batch_index]


def make_score_context(
    ensemble: np.ndarray,
    batch_size: Optional[int] = None,
    seed=None,
) -> ScoreContext:
    ensemble = np.atleast_2d(np.asarray(ensemble, float))
    m = ensemble.shape[0]
    if m == 0:
        raise ValueError("score context needs a nonempty ensemble")
    if batch_size is None or batch_size >= m:
        idx = np.arange(m)
    else:
        if batch_size < 1:
            raise ValueError("batch size must be at least 1")
        idx = np.sort(rng.generator(seed, "score-batch").choice(m, batch_size, replace=False))
    return ScoreContext(ensemble, idx)


def _weighted_batch_mean(z: np.ndarray, batch: np.ndarray, alpha: float, beta2: float):
    """Softmax-weighted ensemble mean m_w(z) for each query row of z."""
    zz = np.einsum("nd,nd->n", z, z)
    ee = np.einsum("jd,jd->j", batch, batch)
    cross = z @ batch.T
    logw = (2.0 * alpha) * cross
    logw -= zz[:, None]
    logw -= (alpha * alpha) * ee[None, :]
    logw /= 2.0 * beta2
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    return w @ batch, w


def mc_score(z, tau: float, ctx: ScoreContext, sched: DiffusionSchedule):
    """Closed-form Monte Carlo score estimate at (z, tau).

    Accepts a single flat state or a (N, d) batch of queries; returns the
    matching shape. Weights are computed in log space and normalized to sum
    to one per query.
    """
    z = np.asarray(z, float)
    single = z.ndim == 1
    zq = np.atleast_2d(z)
    c = sched.at(tau)
    mean_w, _ = _weighted_batch_mean(zq, ctx.batch, c.alpha, c.beta2)
    score = -(zq - c.alpha * mean_w) / c.beta2
    return score[0] if single else score


def score_weights(z, tau: float, ctx: ScoreContext, sched: DiffusionSchedule) -> np.ndarray:
    """Normalized softmax weights of the batch members for one query."""
    zq = np.atleast_2d(np.asarray(z, float))
    c = sched.at(tau)
    _, w = _weighted_batch_mean(zq, ctx.batch, c.alpha, c.beta2)
    return w[0] if np.asarray(z).ndim == 1 else w


def analytic_gaussian_score(z, tau: float, mean, variance: float, sched: DiffusionSchedule):
    """Exact diffused score of a Gaussian target N(mean, variance I):
    -(z - alpha mean) / (alpha^2 variance + beta^2). Test oracle for mc_score
    and a convenient driver for the sampler."""
    z = np.asarray(z, float)
    c = sched.at(tau)
    denom = c.alpha * c.alpha * float(variance) + c.beta2
    return -(z - c.alpha * np.asarray(mean, float)) / denom


def reverse_sample(
    score_fn: Callable[[np.ndarray, float], np.ndarray],
    sched: DiffusionSchedule,
    n_samples: int,
    dim: int,
    seed,
) -> np.ndarray:
    """Sample by integrating the reverse-time SDE from tau = 1 to tau = 0.

    Euler-Maruyama with coefficients evaluated at the right endpoint of each
    pseudo-step:

        Z_l = Z_{l+1} - [b Z_{l+1} - sigma^2 S(Z_{l+1}, tau_{l+1})] dtau
              + sigma sqrt(dtau) xi,

    starting from Z_1 ~ N(0, I). The final step to tau = 0 is taken without
    the noise term (the usual denoising convention), so the returned samples
    do not carry one raw, uncontracted noise increment. Noise for pseudo-step
    l is one (n, dim) block keyed by (seed, "reverse", l), and row m always
    belongs to sample m, so results are bitwise identical however samples are
    partitioned.
    """
    z = rng.block_generator(seed, "reverse-init").standard_normal((n_samples, dim))
    dtau = sched.dtau
    for l in range(sched.L - 1, -1, -1):
        tau_r = sched.tau[l + 1]
        c = sched.at(tau_r)
        s = score_fn(z, tau_r)
        z = z - (c.b * z - c.sigma2 * s) * dtau
        if l > 0:
            noise = rng.block_generator(seed, "reverse", l).standard_normal((n_samples, dim))
            z = z + np.sqrt(c.sigma2 * dtau) * noise
        if not np.all(np.isfinite(z)):
            bad = np.where(~np.isfinite(z).all(axis=1))[0]
            raise FloatingPointError(
                f"reverse SDE produced non-finite state at pseudo-step {l} "
                f"(member {int(bad[0])})"
            )
    return z
