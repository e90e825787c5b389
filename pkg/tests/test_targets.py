import numpy as np
import pytest

from ksgan.targets import (EIGHT_GAUSSIAN_CENTERS, TARGETS, analytic_pair_chi_gaussian, make_rng,
                           sample_latent, sample_target, substreams)

SIGMA_8G = 0.5 / 1.414


def test_latent_moments():
    z = sample_latent(100_000, 8, make_rng(0)).points
    assert z.shape == (100_000, 8)
    assert np.all(np.abs(z.mean(axis=0)) <= 0.02)
    assert np.all(np.abs(z.var(axis=0) - 1) <= 0.03)


def test_latent_same_state_same_sample():
    a = sample_latent(50, 8, make_rng(7))
    b = sample_latent(50, 8, make_rng(7))
    np.testing.assert_array_equal(a.points, b.points)
    assert repr(a.rng_state) == repr(b.rng_state)


@pytest.mark.parametrize("n", [0, -3])
def test_nonpositive_n_rejected(n):
    with pytest.raises(ValueError):
        sample_latent(n, 8, make_rng(0))
    with pytest.raises(ValueError):
        sample_target("moons", n, make_rng(0))
    with pytest.raises(ValueError):
        analytic_pair_chi_gaussian(n, make_rng(0))


def test_unknown_target_lists_valid_names():
    with pytest.raises(ValueError) as e:
        sample_target("spiral", 10, make_rng(0))
    for name in TARGETS:
        assert name in str(e.value)


@pytest.mark.parametrize("name", TARGETS)
def test_targets_shape_finite_deterministic(name):
    a = sample_target(name, 1001, make_rng(3))
    b = sample_target(name, 1001, make_rng(3))
    assert a.points.shape == (1001, 2) and a.label == name
    assert np.all(np.isfinite(a.points))
    np.testing.assert_array_equal(a.points, b.points)


def test_substreams_are_distinct_and_reproducible():
    s1 = [g.standard_normal(4) for g in substreams(5, 3)]
    s2 = [g.standard_normal(4) for g in substreams(5, 3)]
    for x, y in zip(s1, s2):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(s1[0], s1[1])


def test_8gaussians_bounds_and_balance():
    pts = sample_target("8gaussians", 8000, make_rng(1)).points
    d = np.linalg.norm(pts[:, None, :] - EIGHT_GAUSSIAN_CENTERS[None], axis=2)
    nearest = d.min(axis=1)
    # Gaussian noise is unbounded: the 3-sigma radius holds 1 - exp(-4.5) ~ 98.9% of a
    # 2D component, and 5.5 sigma is exceeded with probability ~3e-7 per point.
    assert np.mean(nearest <= 3 * SIGMA_8G) >= 0.98
    assert np.all(nearest <= 5.5 * SIGMA_8G)
    share = np.bincount(d.argmin(axis=1), minlength=8) / len(pts)
    assert np.all(share >= 0.05)


def test_8gaussians_centers_scaled():
    radii = np.linalg.norm(EIGHT_GAUSSIAN_CENTERS, axis=1)
    np.testing.assert_allclose(radii, 4 / 1.414)


def test_checkerboard_inside_box():
    pts = sample_target("checkerboard", 20000, make_rng(2)).points
    assert np.all(pts >= -4) and np.all(pts <= 4)
    # occupied cells alternate: floor(x/2) + floor(y/2) is always even
    cell = np.floor(pts[:, 0] / 2) + np.floor(pts[:, 1] / 2)
    assert np.all(cell % 2 == 0)


def test_swissroll_radii():
    r = np.linalg.norm(sample_target("swissroll", 20000, make_rng(4)).points, axis=1)
    assert np.mean((r > 0.5) & (r < 3.5)) >= 0.99
    assert 0.94 - 0.1 < np.median(r[r < 1.2]) < 1.2


def test_circles_radii():
    r = np.linalg.norm(sample_target("circles", 20000, make_rng(5)).points, axis=1)
    inner, outer = r[r < 2.25], r[r >= 2.25]
    assert abs(len(inner) - len(outer)) < 200
    assert abs(np.median(outer) - 3.0) < 0.05 and abs(np.median(inner) - 1.5) < 0.05


def test_rings_four_radii():
    r = np.linalg.norm(sample_target("rings", 20000, make_rng(6)).points, axis=1)
    counts = np.histogram(r, bins=[0, 1.125, 1.875, 2.625, 10])[0]
    assert np.all(np.abs(counts - 5000) < 400)


def test_moons_center():
    pts = sample_target("moons", 20000, make_rng(7)).points
    # two arcs with means (0, 2/pi) and (1, 0.5 - 2/pi) average to (0.5, 0.25), then x2, shift
    np.testing.assert_allclose(pts.mean(axis=0), [0.0, 0.3], atol=0.03)


def test_pinwheel_five_arms():
    pts = sample_target("pinwheel", 20000, make_rng(8)).points
    r = np.linalg.norm(pts, axis=1)
    assert 1.5 < np.median(r) < 2.5
    ang = np.angle(pts[:, 0] + 1j * pts[:, 1])
    hist = np.histogram(ang, bins=40, range=(-np.pi, np.pi))[0]
    # five arms: the angular histogram's dominant Fourier component is the fifth harmonic
    power = np.abs(np.fft.rfft(hist - hist.mean()))
    assert int(np.argmax(power)) == 5
    assert hist.max() > 5 * hist.min()


def test_2spirals_point_symmetry():
    pts = sample_target("2spirals", 20000, make_rng(9)).points
    first, second = pts[0::2], pts[1::2]
    np.testing.assert_allclose(first.mean(axis=0), -second.mean(axis=0), atol=0.1)


def test_chi_gaussian_pair():
    chi, gauss = analytic_pair_chi_gaussian(65536, make_rng(10))
    assert chi.points.shape == (65536, 1) and gauss.points.shape == (65536, 1)
    assert np.all(chi.points >= 0)
    assert abs(chi.points.mean() - np.sqrt(2 / np.pi)) <= 0.02
    assert abs(gauss.points.mean()) <= 0.02
