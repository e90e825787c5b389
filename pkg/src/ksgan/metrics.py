"""Two-sample statistics used for evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .targets import EIGHT_GAUSSIAN_CENTERS, SampleSet, make_rng

BANDWIDTH_MAX_POINTS = 16384
_TILE_ROWS = 256
_TILE_COLS = 4096


def _points(x) -> np.ndarray:
    pts = x.points if isinstance(x, SampleSet) else np.asarray(x, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


@dataclass(frozen=True)
class MmdReport:
    mmd2: float
    bandwidth: float
    n_a: int
    n_b: int


def median_heuristic_bandwidth(points, max_points: int = BANDWIDTH_MAX_POINTS, seed: int = 0) -> float:
    """Lower median of pairwise Euclidean distances.

    Sets larger than ``max_points`` are first subsampled without replacement
    using ``seed``.
    """
    pts = _points(points)
    if len(pts) < 2:
        raise ValueError("median heuristic needs at least 2 points")
    if len(pts) > max_points:
        idx = make_rng(seed).choice(len(pts), size=max_points, replace=False)
        pts = pts[np.sort(idx)]
    d = pdist(pts)
    k = (len(d) - 1) // 2
    med = float(np.partition(d, k)[k])
    if med <= 0:
        raise ValueError("degenerate bandwidth: median pairwise distance is 0")
    return med


def _kernel_sum(a: np.ndarray, b: np.ndarray, bandwidth: float, symmetric: bool) -> float:
    """Sum of exp(-|a_i - b_j|^2 / (2 s^2)) over all (i, j).

    The exponent comes out of one matmul on augmented coordinates
    ``[a, |a|^2, 1] . [b/s^2, -1/(2s^2), -|b|^2/(2s^2)]``.  Tile sums are
    combined with ``math.fsum`` in a fixed order.
    """
    g = -0.5 / bandwidth ** 2
    na = np.einsum("ij,ij->i", a, a)
    nb = np.einsum("ij,ij->i", b, b)
    A = np.column_stack([a, na, np.ones(len(a))])
    BT = np.ascontiguousarray(np.column_stack([-2 * g * b, np.full(len(b), g), g * nb]).T)
    buf = np.empty(_TILE_ROWS * _TILE_COLS)
    parts = []
    for i in range(0, len(a), _TILE_ROWS):
        Ai = A[i:i + _TILE_ROWS]
        j0 = i if symmetric else 0
        for j in range(j0, len(b), _TILE_COLS):
            Bj = BT[:, j:j + _TILE_COLS]
            tile = buf[:len(Ai) * Bj.shape[1]].reshape(len(Ai), Bj.shape[1])
            np.matmul(Ai, Bj, out=tile)
            np.minimum(tile, 0.0, out=tile)
            np.exp(tile, out=tile)
            if symmetric and j == i:
                # diagonal tile (columns span >= rows): strict upper triangle only
                upper = np.arange(tile.shape[1])[None, :] > np.arange(len(Ai))[:, None]
                parts.append(2.0 * float(tile[upper].sum()))
            else:
                parts.append((2.0 if symmetric else 1.0) * float(tile.sum()))
    if symmetric:
        parts.append(float(len(a)))  # k(x, x) = 1
    return math.fsum(parts)


def mmd2(a, b, bandwidth: float) -> MmdReport:
    """Biased (V-statistic) squared MMD with a Gaussian kernel of width ``bandwidth``."""
    pa, pb = _points(a), _points(b)
    if pa.shape[1] != pb.shape[1]:
        raise ValueError(f"dimension mismatch: {pa.shape[1]} vs {pb.shape[1]}")
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    n_a, n_b = len(pa), len(pb)
    kaa = _kernel_sum(pa, pa, bandwidth, True) / (n_a * n_a)
    kbb = _kernel_sum(pb, pb, bandwidth, True) / (n_b * n_b)
    if pa.shape == pb.shape and np.array_equal(pa, pb):
        kab = kaa
    else:
        kab = _kernel_sum(pa, pb, bandwidth, False) / (n_a * n_b)
    return MmdReport(kaa + kbb - 2 * kab, float(bandwidth), n_a, n_b)


def ks_two_sample_1d(a, b) -> float:
    """Exact two-sample KS statistic sup |ECDF_a - ECDF_b|."""
    a = np.sort(np.ravel(a))
    b = np.sort(np.ravel(b))
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right")
    fb = np.searchsorted(b, grid, side="right")
    # integer numerators keep the comparison exact
    num = np.abs(fa * b.size - fb * a.size).max()
    return float(num) / (a.size * b.size)


def mode_coverage_8gaussians(samples, frac_threshold: float = 0.01):
    """Count the 8gaussians modes that receive a fair share of samples.

    Returns ``(count, fractions)``.  A mode counts when at least
    ``frac_threshold`` of the samples are nearest to it and those samples sit
    on average within three component standard deviations of its center.
    """
    pts = _points(samples)
    if len(pts) == 0:
        raise ValueError("mode coverage needs at least one sample")
    d = np.linalg.norm(pts[:, None, :] - EIGHT_GAUSSIAN_CENTERS[None, :, :], axis=2)
    nearest = d.argmin(axis=1)
    radius = 3 * (0.5 / 1.414)
    fractions = np.bincount(nearest, minlength=8) / len(pts)
    count = 0
    for k in range(8):
        mine = d[nearest == k, k]
        if fractions[k] >= frac_threshold and mine.size and mine.mean() <= radius:
            count += 1
    return count, fractions
