import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from slfvlab import geometry
from slfvlab.geometry import Domain

T10 = Domain.torus(10.0, 10.0)
B10 = Domain.box(10.0, 10.0)

coord = st.floats(0.0, 10.0, allow_nan=False)
point2 = st.tuples(coord, coord)


def test_distance_examples():
    assert geometry.distance([1.0], [9.0], Domain.torus(10.0)) == pytest.approx(2.0)
    assert geometry.distance([0.0, 0.0], [3.0, 4.0], B10) == pytest.approx(5.0)
    assert geometry.distance([2.5, 7.0], [2.5, 7.0], T10) == 0.0


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        geometry.distance([1.0], [1.0, 2.0], T10)
    with pytest.raises(ValueError):
        Domain.torus(1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        Domain("sphere", (1.0,))


def test_ball_volume_examples():
    assert geometry.ball_volume([3.0, 3.0], 1.0, T10) == pytest.approx(math.pi, rel=1e-12)
    assert geometry.ball_volume([3.0, 3.0], 50.0, T10) == pytest.approx(100.0)
    assert geometry.ball_volume([0.0, 0.0], 1.0, B10) == pytest.approx(math.pi / 4, rel=1e-12)
    # one dimension, clipped at the left wall
    assert geometry.ball_volume([0.5], 1.0, Domain.box(10.0)) == pytest.approx(1.5)


@given(point2, st.floats(0.01, 4.99))
def test_ball_volume_closed_form_on_torus(z, r):
    assert geometry.ball_volume(z, r, T10) == pytest.approx(math.pi * r * r, rel=1e-12)


@given(point2, st.floats(0.05, 8.0))
def test_box_ball_volume_matches_grid_count(z, r):
    # midpoint-rule area estimate on a fine grid, error O(perimeter * h)
    h = 0.02
    g = np.arange(h / 2, 10.0, h)
    X, Y = np.meshgrid(g, g, indexing="ij")
    inside = (X - z[0]) ** 2 + (Y - z[1]) ** 2 <= r * r
    est = inside.sum() * h * h
    assert geometry.ball_volume(z, r, B10) == pytest.approx(est, abs=4 * 2 * math.pi * r * h + 1e-9)


def test_ball_box_volume_wraps_on_torus():
    # box straddling the seam: [9, 11] x [4, 6] is [9,10]∪[0,1] x [4,6]
    v = geometry.ball_box_volume([0.0, 5.0], 1.0, [9.0, 4.0], [11.0, 6.0], T10)
    assert v == pytest.approx(math.pi, rel=1e-12)
    half = geometry.ball_box_volume([0.0, 5.0], 1.0, [0.0, 4.0], [1.0, 6.0], T10)
    assert half == pytest.approx(math.pi / 2, rel=1e-12)


@given(st.tuples(coord, coord, coord, coord, coord, coord))
def test_triangle_inequality(p):
    a, b, c = np.array(p[0:2]), np.array(p[2:4]), np.array(p[4:6])
    for dom in (T10, B10):
        d = lambda x, y: geometry.distance(x, y, dom)  # noqa: E731
        assert d(a, c) <= d(a, b) + d(b, c) + 1e-12


def test_triangle_inequality_bulk():
    rng = np.random.default_rng(0)
    a, b, c = (T10.uniform(rng, 10_000) for _ in range(3))
    dab = geometry.distance(a, b, T10)
    dbc = geometry.distance(b, c, T10)
    dac = geometry.distance(a, c, T10)
    assert np.all(dac <= dab + dbc + 1e-12)


def test_degenerate_ball_sample_is_centre():
    rng = np.random.default_rng(1)
    assert np.allclose(geometry.sample_uniform_ball([2.0, 3.0], 0.0, T10, rng), [2.0, 3.0])
    pts = geometry.sample_uniform_ball([2.0, 3.0], 1e-12, T10, rng, size=100)
    assert np.max(geometry.distance(pts, [2.0, 3.0], T10)) <= 1e-12


def test_sample_mean_is_centre():
    rng = np.random.default_rng(2)
    z = np.array([4.0, 6.0])
    pts = geometry.sample_uniform_ball(z, 1.0, T10, rng, size=100_000)
    se = math.sqrt(0.25 / 100_000)  # each coordinate has variance r^2/4 on the disk
    assert np.all(np.abs(pts.mean(axis=0) - z) < 3 * se)


def test_box_corner_samples_stay_inside():
    rng = np.random.default_rng(3)
    pts = geometry.sample_uniform_ball([0.0, 0.0], 1.0, B10, rng, size=5000)
    assert np.all(pts >= 0.0)
    assert np.all(np.hypot(pts[:, 0], pts[:, 1]) <= 1.0 + 1e-12)


@pytest.mark.parametrize("z", [(5.0, 5.0), (0.2, 9.9)])
def test_sector_uniformity(z):
    rng = np.random.default_rng(4)
    pts = geometry.sample_uniform_ball(z, 1.0, T10, rng, size=100_000)
    d = pts - np.array(z)
    d = (d + 5.0) % 10.0 - 5.0
    sector = np.floor((np.arctan2(d[:, 1], d[:, 0]) + math.pi) / (2 * math.pi) * 8).astype(int) % 8
    counts = np.bincount(sector, minlength=8)
    assert stats.chisquare(counts).pvalue > 0.01
    # radial law: P(|d| <= s) = s^2
    assert stats.kstest(np.hypot(d[:, 0], d[:, 1]) ** 2, "uniform").pvalue > 0.01


def test_batched_sampler_in_balls():
    rng = np.random.default_rng(5)
    centers = B10.uniform(rng, 2000)
    radii = rng.uniform(0.1, 3.0, 2000)
    pts = geometry.sample_uniform_balls(centers, radii, B10, rng)
    assert np.all(B10.contains(pts))
    assert np.all(np.hypot(*(pts - centers).T) <= radii + 1e-12)
