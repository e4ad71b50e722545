"""Permeability and initial-condition generators with fixed-seed reproducibility.

Three permeability families are provided:

* a Gaussian-bump base field built from randomly placed high-permeability
  centers, clamped to [0.01, 4];
* a noisy variant adding frozen Gaussian offsets on disjoint random cell
  regions covering prescribed area fractions;
* a fracture-network field decaying with the point-to-segment distance to a
  set of line segments, plus the same kind of regional noise.

All randomness is drawn once from explicit seeds and then frozen; generators
are pure and safe to call concurrently with distinct seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .grid import Grid

CLAMP_MIN = 0.01
CLAMP_MAX = 4.0

# (area fraction, mean, variance) triples for the two noisy experiment setups
EXAMPLE1_REGIONS = ((0.56, 1.5, 0.75), (0.16, 1.0, 0.5), (0.08, 2.0, 1.0))
FRACTURE_REGIONS = ((0.07, 1.5, 0.75), (0.02, 1.0, 0.5), (0.01, 2.0, 1.0))


def draw_centers(n_centers: int, seed, inset: float = 0.05) -> np.ndarray:
    """n random bump centers, uniform on the inset square [inset, 1-inset]^2."""
    stream = rng.generator(seed, "perm-centers")
    return inset + (1.0 - 2.0 * inset) * stream.random((n_centers, 2))


def base_permeability(
    grid: Grid,
    centers: np.ndarray,
    clamp: tuple[float, float] = (CLAMP_MIN, CLAMP_MAX),
) -> np.ndarray:
    """Sum of Gaussian bumps exp(-400 |x - x_i|^2) at cell centers, clamped.

    An empty center list yields the lower clamp everywhere.
    """
    centers = np.asarray(centers, float).reshape(-1, 2)
    xc = grid.cell_centers()
    if centers.size == 0:
        return np.full(grid.n_cells, clamp[0])
    d2 = ((xc[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    vals = np.exp(-400.0 * d2).sum(axis=1)
    return np.clip(vals, clamp[0], clamp[1])


@dataclass(frozen=True)
class NoiseRegionSet:
    """Disjoint random cell regions with frozen per-cell Gaussian offsets.

    labels[c] is the region index of cell c (-1 outside every region),
    offsets[c] the frozen draw (0 outside). Once built, the randomness in the
    permeability is fixed.
    """

    grid: Grid
    fractions: tuple[float, ...]
    means: tuple[float, ...]
    variances: tuple[float, ...]
    seed: object
    labels: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    def total_offset(self) -> np.ndarray:
        return self.offsets


def build_noise_regions(
    grid: Grid,
    regions=EXAMPLE1_REGIONS,
    seed=0,
    noise_is_std: bool = False,
) -> NoiseRegionSet:
    """Allocate disjoint cell regions by a seeded permutation and draw offsets.

    The first floor(f_1 * n) permuted cells go to region 0, the next
    floor(f_2 * n) to region 1, and so on; region i draws i.i.d.
    N(mean_i, variance_i) offsets (variance read as std^2 unless
    noise_is_std is set).
    """
    fractions = tuple(float(r[0]) for r in regions)
    means = tuple(float(r[1]) for r in regions)
    variances = tuple(float(r[2]) for r in regions)
    if any(f <= 0 or f > 1 for f in fractions) or sum(fractions) > 1.0 + 1e-12:
        raise ValueError("region fractions must lie in (0, 1] and sum to at most 1")

    n = grid.n_cells
    stream = rng.generator(seed, "perm-regions")
    perm = stream.permutation(n)
    labels = np.full(n, -1, dtype=np.int64)
    offsets = np.zeros(n)
    start = 0
    for idx, (f, m, v) in enumerate(zip(fractions, means, variances)):
        count = int(np.floor(f * n))
        cells = perm[start : start + count]
        labels[cells] = idx
        std = v if noise_is_std else np.sqrt(v)
        offsets[cells] = stream.normal(m, std, size=count)
        start += count
    return NoiseRegionSet(grid, fractions, means, variances, seed, labels, offsets)


def noisy_permeability(
    base: np.ndarray,
    regions: NoiseRegionSet,
    clamp_max: float = CLAMP_MAX,
    clamp_min: float = CLAMP_MIN,
) -> np.ndarray:
    """base + frozen regional offsets, upper-clamped; the lower clamp keeps the
    Darcy solve positive even though the offsets may be negative."""
    if regions.grid.n_cells != base.shape[0]:
        raise ValueError("regions were built for a different grid")
    return np.clip(base + regions.total_offset(), clamp_min, clamp_max)


def point_segment_distance(points: np.ndarray, a, b) -> np.ndarray:
    """Euclidean distance from each point to segment [a, b]; a degenerate
    zero-length segment is treated as a point."""
    points = np.asarray(points, float)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def fracture_distance(grid: Grid, segments) -> np.ndarray:
    """Per-cell shortest distance to any of the fracture segments."""
    segments = list(segments)
    if not segments:
        raise ValueError("fracture field needs at least one segment")
    xc = grid.cell_centers()
    d = np.full(grid.n_cells, np.inf)
    for a, b in segments:
        d = np.minimum(d, point_segment_distance(xc, a, b))
    return d


def fracture_permeability(
    grid: Grid,
    segments,
    regions: NoiseRegionSet | None = None,
    clamp: tuple[float, float] = (CLAMP_MIN, CLAMP_MAX),
) -> np.ndarray:
    """exp(-400 d_s^2) with d_s the distance to the fracture network, plus
    optional regional noise, clamped like the other fields."""
    vals = np.exp(-400.0 * fracture_distance(grid, segments) ** 2)
    if regions is not None:
        vals = vals + regions.total_offset()
    return np.clip(vals, clamp[0], clamp[1])


def default_fracture_segments():
    """Reference fracture network: a main diagonal channel with three branches.

    The published network exists only as a figure, so the coordinates are a
    fixed in-package choice; pass explicit segments to override.
    """
    return (
        ((0.08, 0.12), (0.92, 0.88)),
        ((0.30, 0.34), (0.62, 0.18)),
        ((0.48, 0.52), (0.85, 0.40)),
        ((0.42, 0.46), (0.28, 0.80)),
    )


def partial_fracture_segments():
    """Forward-model network with only partial knowledge: the main channel."""
    return (((0.08, 0.12), (0.92, 0.88)),)


def perturbed_initial_saturation(grid: Grid, mode: str, variance: float, seed) -> np.ndarray:
    """Initial saturation field: zero reference, |N(0, v)| half-normal draws,
    or plain N(0, v) Gaussian perturbations."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    if mode == "zero":
        return np.zeros(grid.n_cells)
    stream = rng.generator(seed, "perm-ic")
    draw = stream.normal(0.0, np.sqrt(variance), size=grid.n_cells)
    if mode == "half_normal":
        return np.abs(draw)
    if mode == "gaussian":
        return draw
    raise ValueError(f"unknown initial-saturation mode {mode!r}")
