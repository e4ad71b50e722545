"""Observation model: random detector masks, synthetic data generation, and
the log-likelihood gradient used by the posterior score update.

Observations are Mask(g(X) + eps) with g either arctan (componentwise, applied
to whatever raw state values are observed) or the identity, and
eps ~ N(0, r I). The mask is a fixed random subset of each selected
variable block, frozen for a whole experiment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .fem import state_slices
from .grid import Grid

VARIABLES = ("saturation", "velocity", "pressure")


@dataclass(frozen=True)
class ObservationSpec:
    """Frozen detector layout and noise model for one experiment."""

    grid: Grid
    mask: np.ndarray
    variables: tuple[str, ...]
    fraction: float
    nonlinearity: str
    noise_variance: float
    seed: object

    def __post_init__(self):
        if self.nonlinearity not in ("arctan", "identity"):
            raise ValueError(f"unknown observation nonlinearity {self.nonlinearity!r}")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be nonnegative")

    @property
    def n_obs(self) -> int:
        return int(self.mask.size)

    def apply_nonlinearity(self, values: np.ndarray) -> np.ndarray:
        if self.nonlinearity == "arctan":
            return np.arctan(values)
        return np.asarray(values, float)

    def nonlinearity_deriv(self, values: np.ndarray) -> np.ndarray:
        if self.nonlinearity == "arctan":
            return 1.0 / (1.0 + values * values)
        return np.ones_like(np.asarray(values, float))


def make_mask(
    grid: Grid,
    variables=("saturation",),
    fraction: float = 0.5,
    seed=0,
    nonlinearity: str = "arctan",
    noise_variance: float = 0.07,
) -> ObservationSpec:
    """Uniform random detector subset of each selected variable block.

    Each block contributes round(fraction * block size) indices drawn without
    replacement; fraction 0 gives an empty mask and fraction 1 the full
    block. Deterministic in the seed.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    variables = tuple(variables)
    unknown = set(variables) - set(VARIABLES)
    if unknown:
        raise ValueError(f"unknown observation variables: {sorted(unknown)}")
    if not variables and fraction > 0.0:
        raise ValueError("cannot observe a positive fraction of no variables")

    slices = state_slices(grid)
    picks = []
    stream = rng.generator(seed, "obs-mask")
    for name in VARIABLES:  # fixed order keeps the draw independent of caller order
        if name not in variables:
            continue
        block = slices[name]
        size = block.stop - block.start
        count = int(round(fraction * size))
        chosen = stream.choice(size, count, replace=False)
        picks.append(np.asarray(chosen) + block.start)
    mask = np.sort(np.concatenate(picks)) if picks else np.empty(0, dtype=np.int64)
    return ObservationSpec(
        grid=grid,
        mask=mask.astype(np.int64),
        variables=variables,
        fraction=float(fraction),
        nonlinearity=nonlinearity,
        noise_variance=float(noise_variance),
        seed=seed,
    )


def observe(state_flat: np.ndarray, spec: ObservationSpec, noise_seed=None) -> np.ndarray:
    """Observation vector g(x[mask]) + eps; noise_seed None means noiseless
    (used by the test oracles)."""
    values = spec.apply_nonlinearity(np.asarray(state_flat, float)[spec.mask])
    if noise_seed is not None and spec.n_obs:
        noise = rng.generator(noise_seed, "obs-noise").normal(
            0.0, np.sqrt(spec.noise_variance), size=spec.n_obs
        )
        values = values + noise
    return values


def log_likelihood(z: np.ndarray, y: np.ndarray, spec: ObservationSpec) -> float:
    """log P(y | z) up to an additive constant: -0.5 |g(z_mask) - y|^2 / r."""
    resid = spec.apply_nonlinearity(np.asarray(z, float)[spec.mask]) - y
    return float(-0.5 * (resid @ resid) / spec.noise_variance)


def log_likelihood_grad(z: np.ndarray, y: np.ndarray, spec: ObservationSpec) -> np.ndarray:
    """Gradient of log P(y | z) in state space.

    Zero outside the mask; at observed coordinate k = mask[i] the chain rule
    gives (y_i - g(z_k)) / r * g'(z_k). Accepts a single flat state or an
    (N, d) batch.
    """
    z = np.asarray(z, float)
    single = z.ndim == 1
    zq = np.atleast_2d(z)
    grad = np.zeros_like(zq)
    if spec.n_obs:
        zm = zq[:, spec.mask]
        resid = y[None, :] - spec.apply_nonlinearity(zm)
        grad[:, spec.mask] = resid / spec.noise_variance * spec.nonlinearity_deriv(zm)
    return grad[0] if single else grad
