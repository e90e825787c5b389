"""Seeded samplers: latent Gaussian, the eight toy 2D targets, and the half-normal/normal pair.

Random streams use numpy's counter-based Philox generator; normal variates
come from numpy's ziggurat sampler.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TARGETS = ("swissroll", "circles", "rings", "moons", "8gaussians",
           "pinwheel", "2spirals", "checkerboard")

SQRT1_2 = 1.0 / np.sqrt(2.0)
EIGHT_GAUSSIAN_CENTERS = 4.0 * np.array([
    (1, 0), (-1, 0), (0, 1), (0, -1),
    (SQRT1_2, SQRT1_2), (SQRT1_2, -SQRT1_2), (-SQRT1_2, SQRT1_2), (-SQRT1_2, -SQRT1_2),
]) / 1.414


def make_rng(seed) -> np.random.Generator:
    """Philox stream for an integer seed or a ``SeedSequence``."""
    return np.random.Generator(np.random.Philox(seed))


def substreams(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent streams derived from one seed."""
    return [make_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class SampleSet:
    points: np.ndarray
    label: str
    rng_state: dict | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n


def _check_n(n: int) -> None:
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")


def sample_latent(n: int, dim: int, rng: np.random.Generator) -> SampleSet:
    _check_n(n)
    state = rng.bit_generator.state
    return SampleSet(rng.standard_normal((n, dim)), "latent", state)


def _swissroll(n, rng):
    t = 1.5 * np.pi * (1 + 2 * rng.uniform(size=n))
    raw = np.column_stack([t * np.cos(t), t * np.sin(t)]) + rng.standard_normal((n, 2))
    return raw / 5.0


def _circles(n, rng):
    n_out = n // 2
    radius = np.where(np.arange(n) < n_out, 1.0, 0.5)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pts = radius[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    pts = pts + 0.08 * rng.standard_normal((n, 2))
    return 3.0 * rng.permutation(pts)


def _rings(n, rng):
    radius = np.array([1.0, 0.75, 0.5, 0.25])[np.arange(n) % 4]
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pts = radius[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    pts = pts + 0.08 * rng.standard_normal((n, 2))
    return 3.0 * rng.permutation(pts)


def _moons(n, rng):
    n_upper = n // 2
    upper = np.arange(n) < n_upper
    theta = rng.uniform(0, np.pi, size=n)
    x = np.where(upper, np.cos(theta), 1 - np.cos(theta))
    y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
    pts = np.column_stack([x, y]) + 0.1 * rng.standard_normal((n, 2))
    return rng.permutation(pts) * 2 + np.array([-1.0, -0.2])


def _8gaussians(n, rng):
    pts = 0.5 * rng.standard_normal((n, 2))
    idx = rng.integers(0, 8, size=n)
    return pts / 1.414 + EIGHT_GAUSSIAN_CENTERS[idx]


def _pinwheel(n, rng, arms=5, radial_std=0.3, tangential_std=0.1, rate=0.25):
    base = rng.standard_normal((n, 2)) * np.array([radial_std, tangential_std])
    base[:, 0] += 1.0
    arm = rng.integers(0, arms, size=n)
    angle = 2 * np.pi * arm / arms + rate * np.exp(base[:, 0])
    cos, sin = np.cos(angle), np.sin(angle)
    x = base[:, 0] * cos + base[:, 1] * sin
    y = -base[:, 0] * sin + base[:, 1] * cos
    return 2.0 * np.column_stack([x, y])


def _2spirals(n, rng):
    r = np.sqrt(rng.uniform(size=n)) * np.deg2rad(540.0)
    jitter = rng.uniform(size=(n, 2)) * 0.5
    p = np.column_stack([-np.cos(r) * r, np.sin(r) * r]) + jitter
    sign = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return sign[:, None] * p / 3.0 + 0.1 * rng.standard_normal((n, 2))


def _checkerboard(n, rng):
    x1 = 4 * rng.uniform(size=n) - 2
    x2 = rng.uniform(size=n) - 2 * rng.integers(0, 2, size=n) + np.floor(x1) % 2
    return 2.0 * np.column_stack([x1, x2])


_RECIPES = {
    "swissroll": _swissroll, "circles": _circles, "rings": _rings, "moons": _moons,
    "8gaussians": _8gaussians, "pinwheel": _pinwheel, "2spirals": _2spirals,
    "checkerboard": _checkerboard,
}


def sample_target(name: str, n: int, rng: np.random.Generator) -> SampleSet:
    if name not in _RECIPES:
        raise ValueError(f"unknown target {name!r}; valid targets: {', '.join(TARGETS)}")
    _check_n(n)
    state = rng.bit_generator.state
    return SampleSet(_RECIPES[name](n, rng), name, state)


def analytic_pair_chi_gaussian(n: int, rng: np.random.Generator) -> tuple[SampleSet, SampleSet]:
    """Half-normal (chi with one dof) and standard-normal samples, both 1D."""
    _check_n(n)
    state = rng.bit_generator.state
    chi = np.abs(rng.standard_normal((n, 1)))
    gauss = rng.standard_normal((n, 1))
    return SampleSet(chi, "chi1", state), SampleSet(gauss, "normal", state)
