import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewshot_nerf import autodiff as ad
from fewshot_nerf.encoding import EncodingConfig
from fewshot_nerf.errors import ConfigError, DataError
from fewshot_nerf.field import (
    FieldError,
    MlpArchitecture,
    RadianceField,
    init_parameters,
    layer_shapes,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from fewshot_nerf.losses import loss_u
from fewshot_nerf.rendering import composite

SMALL = MlpArchitecture(depth=2, width=8, skips=(1,), head_width=4)
SMALL_ENC = EncodingConfig(k_pos=2, k_dir=1)


def features(rng, n, enc=SMALL_ENC):
    return rng.uniform(-1, 1, (n, enc.pos_dim)), rng.uniform(-1, 1, (n, enc.dir_dim))


def test_zero_weights_output():
    model = RadianceField(SMALL, SMALL_ENC)
    for p in model.parameters:
        p.data[...] = 0.0
    x, d = features(np.random.default_rng(0), 5)
    out = model.query(x, d)
    np.testing.assert_array_equal(out.c.data, 0.5)
    np.testing.assert_allclose(out.sigma.data, math.log(2), rtol=1e-15)
    np.testing.assert_allclose(out.beta2.data, math.log(2) + 1e-4, rtol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0.1, 50.0))
def test_output_ranges(seed, scale):
    rng = np.random.default_rng(seed)
    model = RadianceField(SMALL, SMALL_ENC, seed=seed)
    x, d = features(rng, 16)
    out = model.query(scale * x, scale * d)
    assert np.all((out.c.data >= 0) & (out.c.data <= 1))
    assert np.all(out.sigma.data >= 0)
    assert np.all(out.beta2.data >= SMALL.beta_min)


def test_density_ignores_direction():
    rng = np.random.default_rng(1)
    model = RadianceField(SMALL, SMALL_ENC, seed=3)
    x, d = features(rng, 8)
    a = model.query(x, d)
    b = model.query(x, -3.0 * d + 1.0)
    np.testing.assert_array_equal(a.sigma.data, b.sigma.data)
    assert not np.array_equal(a.c.data, b.c.data)
    np.testing.assert_array_equal(model.density(x), a.sigma.data)


def test_query_is_deterministic():
    rng = np.random.default_rng(2)
    model = RadianceField(SMALL, SMALL_ENC, seed=4)
    x, d = features(rng, 8)
    np.testing.assert_array_equal(model.query(x, d).c.data, model.query(x, d).c.data)


def test_width_mismatch():
    model = RadianceField(SMALL, SMALL_ENC)
    with pytest.raises(ConfigError):
        model.query(np.zeros((2, SMALL_ENC.pos_dim + 1)), np.zeros((2, SMALL_ENC.dir_dim)))


def test_nonfinite_activation_names_layer():
    model = RadianceField(SMALL, SMALL_ENC)
    model.params["trunk0.w"].data[0, 0] = np.inf
    x, d = features(np.random.default_rng(0), 3)
    with pytest.raises(FieldError) as exc:
        model.query(x, d)
    assert exc.value.layer == "trunk0"


def test_init_determinism():
    a = init_parameters(SMALL, SMALL_ENC, seed=7)
    b = init_parameters(SMALL, SMALL_ENC, seed=7)
    c = init_parameters(SMALL, SMALL_ENC, seed=8)
    for k in a:
        np.testing.assert_array_equal(a[k].data, b[k].data)
    assert any(not np.array_equal(a[k].data, c[k].data) for k in a if k.endswith(".w"))
    assert all(np.all(a[k].data == 0) for k in a if k.endswith(".b"))


def test_default_parameter_count():
    # trunk: 51->64, 64->64, (64+51)->64, 64->64; sigma 64->1; head (64+27)->32; rgb 32->3; beta 32->1
    expected = (51 * 64 + 64) + (64 * 64 + 64) + (115 * 64 + 64) + (64 * 64 + 64) \
        + (64 + 1) + (91 * 32 + 32) + (32 * 3 + 3) + (32 + 1)
    assert expected == 22213
    assert parameter_count(MlpArchitecture(), EncodingConfig()) == expected
    assert RadianceField().n_params == expected


def test_density_head_sees_only_position():
    shapes = layer_shapes(MlpArchitecture(), EncodingConfig())
    assert shapes["sigma"] == (64, 1)
    assert shapes["head"][0] == 64 + EncodingConfig().dir_dim


def test_architecture_validation():
    with pytest.raises(ConfigError):
        MlpArchitecture(depth=4, skips=(4,))
    with pytest.raises(ConfigError):
        MlpArchitecture(beta_min=0.0)


def test_every_layer_receives_gradient_from_adaptive_loss():
    rng = np.random.default_rng(0)
    model = RadianceField(SMALL, SMALL_ENC, seed=1)
    n_rays, n = 6, 5
    x, d = features(rng, n_rays * n)
    out = model.query(x, d)
    px = composite(out.sigma.reshape(n_rays, n), np.full((n_rays, n), 0.2),
                   out.c.reshape(n_rays, n, 3), out.beta2.reshape(n_rays, n))
    grads = ad.backward(loss_u(px.c_bar, px.beta_bar2, rng.uniform(size=(n_rays, 3))), model.parameters)
    for name, g in grads.items():
        if name.endswith(".w"):
            assert np.linalg.norm(g) > 0, name


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = RadianceField(SMALL, SMALL_ENC, seed=5)
    path = save_checkpoint(tmp_path / "c.npz", model, 42, {"note": "x"}, {"adam/t": np.array(3)})
    ck = load_checkpoint(path)
    assert ck.iteration == 42 and ck.meta["note"] == "x"
    assert ck.model.arch == SMALL and ck.model.enc == SMALL_ENC
    assert int(ck.arrays["adam/t"]) == 3
    for k, p in model.params.items():
        np.testing.assert_array_equal(ck.model.params[k].data, p.data)
        assert ck.model.params[k].dtype == p.dtype


def test_checkpoint_shape_mismatch(tmp_path):
    path = save_checkpoint(tmp_path / "c.npz", RadianceField(SMALL, SMALL_ENC), 0)
    other = RadianceField(MlpArchitecture(depth=2, width=9, skips=(1,), head_width=4), SMALL_ENC)
    with pytest.raises(ConfigError):
        other.load_arrays(load_checkpoint(path).model.state_arrays())


def test_missing_checkpoint(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "nope.npz")
