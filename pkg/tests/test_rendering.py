import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fewshot_nerf.errors import ConfigError
from fewshot_nerf.rendering import (
    Camera,
    composite,
    generate_rays,
    look_at,
    ray_density,
    sample_intervals,
    stratified_sample,
)


def cam(w=4, h=4, f=2.0, c2w=None):
    return Camera(f, f, w / 2, h / 2, w, h, np.eye(4) if c2w is None else c2w)


# ---------------------------------------------------------------- rays


def test_principal_point_looks_forward():
    # odd size so a pixel centre sits exactly on the principal point
    r = generate_rays(Camera(3.0, 3.0, 2.5, 2.5, 5, 5, np.eye(4)), pixels=[[2, 2]])
    np.testing.assert_allclose(r.directions[0], [0, 0, -1], atol=1e-15)


def test_symmetric_pixels_mirror():
    r = generate_rays(cam(), pixels=[[1, 0], [1, 3]])
    a, b = r.directions
    np.testing.assert_allclose(a * [-1, 1, 1], b, atol=1e-15)


def test_corner_pixel_hand_backprojection():
    # pixel (row 0, col 0): centre (0.5, 0.5); x = (0.5 - 2)/2, y = -(0.5 - 2)/2, z = -1
    r = generate_rays(cam(f=2.0), pixels=[[0, 0]])
    v = np.array([-0.75, 0.75, -1.0])
    np.testing.assert_allclose(r.directions[0], v / np.linalg.norm(v), rtol=1e-15)


def test_ray_fields_and_unit_directions():
    c2w = look_at([3.0, 1.0, 2.0])
    r = generate_rays(cam(8, 6, 5.0, c2w), view_id=4, near=1.0, far=5.0)
    assert len(r) == 48
    np.testing.assert_allclose(np.linalg.norm(r.directions, axis=-1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(r.origins, np.tile([3.0, 1.0, 2.0], (48, 1)))
    assert np.all(r.pixels[:, 0] == 4)
    np.testing.assert_array_equal(r.pixels[7], [4, 0, 7])
    assert np.all(r.near < r.far)


def test_look_at_centre_ray_hits_target():
    r = generate_rays(Camera(3.0, 3.0, 2.5, 2.5, 5, 5, look_at([0.0, -4.0, 1.0])), pixels=[[2, 2]])
    np.testing.assert_allclose(r.directions[0], np.array([0, 4.0, -1.0]) / math.sqrt(17), atol=1e-12)


def test_singular_intrinsics_rejected():
    with pytest.raises(ConfigError):
        generate_rays(Camera(0.0, 2.0, 1, 1, 2, 2, np.eye(4)))
    with pytest.raises(ConfigError):
        generate_rays(cam(), near=2.0, far=1.0)


# ---------------------------------------------------------------- sampling


def test_midpoints_without_rng():
    np.testing.assert_allclose(stratified_sample(0.0, 1.0, 4)[0], [0.125, 0.375, 0.625, 0.875])


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(1, 64), st.floats(0.0, 5.0), st.floats(0.1, 5.0))
def test_jittered_depths_sorted_in_bounds(seed, n, near, span):
    t = stratified_sample(np.full(3, near), np.full(3, near + span), n, np.random.default_rng(seed))
    assert np.all(np.diff(t, axis=1) > 0) or n == 1
    assert np.all((t >= near) & (t <= near + span))
    edges = near + span * np.arange(n + 1) / n
    assert np.all((t >= edges[:-1] - 1e-12) & (t <= edges[1:] + 1e-12))


def test_seeded_draws_reproducible():
    a = stratified_sample(np.zeros(5), np.ones(5), 8, np.random.default_rng(3))
    b = stratified_sample(np.zeros(5), np.ones(5), 8, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_final_interval_capped_by_median():
    t = np.array([[0.0, 0.1, 0.2, 0.4]])
    np.testing.assert_allclose(sample_intervals(t, 10.0), [[0.1, 0.1, 0.2, 0.1]])
    np.testing.assert_allclose(sample_intervals(t, 0.45), [[0.1, 0.1, 0.2, 0.05]])


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(2, 32))
def test_intervals_positive(seed, n):
    t = stratified_sample(np.full(4, 2.0), np.full(4, 6.0), n, np.random.default_rng(seed))
    assert np.all(sample_intervals(t, 6.0) > 0)


# ---------------------------------------------------------------- compositing


def test_empty_space():
    px = composite(np.zeros((1, 5)), np.full((1, 5), 0.3), np.ones((1, 5, 3)), np.ones((1, 5)))
    np.testing.assert_array_equal(px.c_bar.data, 0.0)
    np.testing.assert_array_equal(px.weights.data, 0.0)
    assert px.residual_transmittance.data[0] == 1.0


def test_two_sample_hand_values():
    ln2 = math.log(2)
    px = composite(np.array([[ln2, 2 * ln2]]), np.array([[1.0, 0.5]]),
                   np.array([[[1.0, 0, 0], [0, 1.0, 0]]]), np.array([[0.04, 0.16]]))
    np.testing.assert_allclose(px.weights.data, [[0.5, 0.25]], rtol=1e-15)
    np.testing.assert_allclose(px.c_bar.data, [[0.5, 0.25, 0.0]], rtol=1e-15)
    np.testing.assert_allclose(px.beta_bar2.data, [0.25 * 0.04 + 0.0625 * 0.16], rtol=1e-14)
    assert px.beta_bar2.data[0] == pytest.approx(0.02, rel=1e-14)
    np.testing.assert_allclose(px.transmittances.data, [[1.0, 0.5]], rtol=1e-15)
    assert px.residual_transmittance.data[0] == pytest.approx(0.25, rel=1e-15)


sig = arrays(np.float64, (3, 6), elements=st.floats(0, 50))
dlt = arrays(np.float64, (3, 6), elements=st.floats(0, 2))


@settings(max_examples=100)
@given(sig, dlt)
def test_conservation(s, d):
    px = composite(s, d, np.zeros((3, 6, 3)))
    total = px.weights.data.sum(axis=-1) + px.residual_transmittance.data
    np.testing.assert_allclose(total, 1.0, atol=1e-9)
    assert np.all(px.weights.data >= 0)


@settings(max_examples=100)
@given(sig, st.integers(0, 4), st.floats(0.01, 20))
def test_earlier_density_never_raises_later_weights(s, i, bump):
    d = np.full((3, 6), 0.2)
    w0 = composite(s, d, np.zeros((3, 6, 3))).weights.data
    s2 = s.copy()
    s2[:, i] += bump
    w1 = composite(s2, d, np.zeros((3, 6, 3))).weights.data
    assert np.all(w1[:, i + 1:] <= w0[:, i + 1:] + 1e-15)


@settings(max_examples=100)
@given(arrays(np.float64, (2, 5), elements=st.floats(0.01, 20)),
       arrays(np.float64, (2, 5), elements=st.floats(1e-4, 10)))
def test_variance_positive_when_weights_positive(s, b2):
    px = composite(s, np.full((2, 5), 0.1), np.zeros((2, 5, 3)), b2)
    assert np.all(px.beta_bar2.data > 0)


# ---------------------------------------------------------------- ray density


def test_ray_density_examples():
    np.testing.assert_allclose(ray_density(np.full((1, 4), 0.3)).data, 0.25)
    np.testing.assert_allclose(ray_density(np.array([[0.5, 0.5]])).data, [[0.5, 0.5]])
    np.testing.assert_allclose(ray_density(np.array([[0.2, 0.6, 0.2]])).data, [[0.2, 0.6, 0.2]], rtol=1e-15)
    np.testing.assert_array_equal(ray_density(np.zeros((1, 5))).data, 0.2)


@settings(max_examples=100)
@given(arrays(np.float64, (4, 7), elements=st.floats(0, 1)))
def test_ray_density_sums_to_one(a):
    np.testing.assert_allclose(ray_density(a).data.sum(axis=-1), 1.0, atol=1e-12)
