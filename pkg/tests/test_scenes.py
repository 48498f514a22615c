import math

import numpy as np
import pytest

from fewshot_nerf.config import load_yaml
from fewshot_nerf.errors import ConfigError
from fewshot_nerf.scenes import (
    AnalyticScene,
    Primitive,
    SceneRenderSpec,
    default_scene,
    eval_scene,
    floater_grid,
    floater_mass,
    make_dataset,
    render_oracle,
    ring_camera,
    scene_from_dict,
    scene_to_dict,
)
from fewshot_nerf.supervision import write_dataset

SMALL = SceneRenderSpec(width=24, height=24, focal=40.0, oracle_samples=256, train_samples=32)


def test_empty_space_is_background():
    scene = AnalyticScene((Primitive("sphere", (0, 0, 0), 0.5, (1, 0, 0)),), background=(0.1, 0.2, 0.3))
    albedo, dens = eval_scene(scene, [[1.2, 1.2, 1.2]])
    assert dens[0] == 0.0
    np.testing.assert_array_equal(albedo[0], [0.1, 0.2, 0.3])


def test_primitive_interior():
    scene = AnalyticScene((Primitive("sphere", (0.2, 0, 0), 0.5, (1, 0, 0), density=30.0),))
    albedo, dens = eval_scene(scene, [[0.2, 0, 0]])
    assert dens[0] == 30.0
    np.testing.assert_array_equal(albedo[0], [1, 0, 0])


def test_overlap_averages_albedo():
    scene = AnalyticScene((Primitive("sphere", (0, 0, 0), 0.5, (1, 0, 0)),
                           Primitive("box", (0.1, 0, 0), (0.4, 0.4, 0.4), (0, 0, 1))))
    albedo, dens = eval_scene(scene, [[0.05, 0, 0]])
    assert dens[0] == 80.0
    np.testing.assert_allclose(albedo[0], [0.5, 0, 0.5])


def test_taper_is_smooth_and_bounded():
    p = Primitive("sphere", (0, 0, 0), 1.0, (1, 1, 1), density=10.0)
    scene = AnalyticScene((p,))
    r = np.linspace(0.9, 1.01, 200)
    _, d = eval_scene(scene, np.stack([r, 0 * r, 0 * r], axis=-1))
    assert np.all(np.diff(d) <= 0) and d[0] == 10.0 and d[-1] == 0.0
    assert np.all((d >= 0) & (d <= 10.0))


def test_scene_invariants():
    with pytest.raises(ConfigError):
        Primitive("sphere", (0, 0, 0), 0.5, (1, 0, 0), density=-1.0)
    with pytest.raises(ConfigError):
        Primitive("cone", (0, 0, 0), 0.5, (1, 0, 0))
    with pytest.raises(ConfigError):
        AnalyticScene((Primitive("sphere", (1.3, 0, 0), 0.5, (1, 0, 0)),))
    with pytest.raises(ConfigError):
        SceneRenderSpec(oracle_samples=100, train_samples=64)


def test_checker_box_has_two_albedos():
    box = default_scene().primitives[2]
    cell = box.checker_cell
    centres = np.asarray(box.center) + cell * (np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]]) + 0.5)
    np.testing.assert_allclose(box.albedo_at(centres),
                               [box.albedo, box.checker_albedo, box.albedo, box.checker_albedo], atol=1e-12)
    # colour blends continuously across a cell border
    x = np.asarray(box.center) + np.stack([np.linspace(0.4, 0.6, 101) * cell * 2, np.full(101, 0.5 * cell),
                                          np.full(101, 0.5 * cell)], axis=-1)
    assert np.abs(np.diff(box.albedo_at(x), axis=0)).max() < 0.1


# ---------------------------------------------------------------- oracle renders


def test_background_only_view():
    scene = AnalyticScene((Primitive("sphere", (1.2, 1.2, 1.2), 0.2, (1, 0, 0)),), background=(0.2, 0.4, 0.6))
    cam = ring_camera(SMALL, 0.0, 0.0)  # the sphere sits about 31 degrees off-axis, outside the view
    img = render_oracle(scene, cam, SMALL)
    np.testing.assert_allclose(img.pixels, np.broadcast_to([0.2, 0.4, 0.6], img.pixels.shape), atol=1e-12)
    assert not img.mask.any()


@pytest.mark.parametrize("azimuth", [30.0, 100.0, 200.0])
def test_quadrature_converges(azimuth):
    spec = SceneRenderSpec(width=24, height=24, focal=40.0)
    cam = ring_camera(spec, azimuth, 25.0)
    a = render_oracle(default_scene(), cam, spec).pixels
    b = render_oracle(default_scene(), cam, spec, n_samples=2 * spec.oracle_samples).pixels
    assert np.abs(a - b).max() < 1e-3


def test_sphere_silhouette_matches_projection():
    R, D, f = 0.6, 4.0, 40.0
    scene = AnalyticScene((Primitive("sphere", (0, 0, 0), R, (1, 1, 1), density=500.0),))
    spec = SceneRenderSpec(width=48, height=48, focal=f, radius=D, oracle_samples=256, train_samples=32)
    img = render_oracle(scene, ring_camera(spec, 10.0, 20.0), spec)
    measured = math.sqrt(img.mask.sum() / math.pi)
    expected = f * R / math.sqrt(D**2 - R**2)  # tangent cone
    assert abs(measured - expected) <= 1.0


def test_oracle_conserves_mass():
    scene = default_scene()
    img = render_oracle(scene, ring_camera(SMALL, 200.0, 25.0), SMALL)
    assert img.pixels.min() >= 0 and img.pixels.max() <= 1


# ---------------------------------------------------------------- datasets


def test_make_dataset_layout():
    ds = make_dataset(default_scene(), 3, 4, SMALL)
    assert len(ds.train) == 3 and len(ds.test) == 4
    ids = [v.view_id for v in ds.views]
    assert len(set(ids)) == 7
    az = [math.degrees(math.atan2(v.camera.center[1], v.camera.center[0])) % 360 for v in ds.train]
    np.testing.assert_allclose(np.diff(az), 120.0, atol=1e-9)
    assert ds.meta["scene_config"] == scene_to_dict(default_scene())


def test_make_dataset_rejects_view_counts():
    with pytest.raises(ConfigError):
        make_dataset(default_scene(), 7, 2, SMALL)


def test_dataset_files_deterministic(tmp_path):
    for d in ("a", "b"):
        write_dataset(make_dataset(default_scene(), 3, 2, SMALL), tmp_path / d)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


# ---------------------------------------------------------------- floaters


def test_floater_mass_zero_cases():
    scene = default_scene()
    assert floater_mass(lambda p: np.zeros(len(p)), scene, 16) == 0.0
    assert floater_mass(lambda p: eval_scene(scene, p)[1], scene, 16) == 0.0


def test_floater_grid_is_empty_space():
    scene = default_scene()
    pts = floater_grid(scene, 16)
    assert 0 < len(pts) < 16**3
    assert np.all(eval_scene(scene, pts)[1] == 0)


def test_floater_mass_grid_consistency():
    scene = default_scene()
    blob = np.array([0.9, -0.9, 0.9])

    def smooth_floater(p):
        return 5.0 * np.exp(-np.sum((p - blob) ** 2, axis=-1) / 0.1)

    a = floater_mass(smooth_floater, scene, 32)
    b = floater_mass(smooth_floater, scene, 64)
    assert a > 0 and abs(a - b) / b < 0.1


# ---------------------------------------------------------------- config


def test_scene_config_round_trip(tmp_path):
    path = tmp_path / "s.yaml"
    import yaml

    path.write_text(yaml.safe_dump(scene_to_dict(default_scene())))
    assert scene_from_dict(load_yaml(path)) == default_scene()


def test_scene_config_errors_carry_line(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("name: x\nprimitives:\n  - shape: sphere\n    center: [0, 0, 0]\n    size: 0.5\n"
                    "    albedo: [1, 0, 0]\n    colour: red\n")
    with pytest.raises(ConfigError, match="line 7"):
        scene_from_dict(load_yaml(path))
    path.write_text("name: x\nprimitives:\n  - shape: sphere\n    center: [0, 0, 0]\n")
    with pytest.raises(ConfigError, match="line 3"):
        scene_from_dict(load_yaml(path))
    path.write_text("name: [x\n")
    with pytest.raises(ConfigError, match="line"):
        load_yaml(path)
