"""Tests for synthetic record sampling."""

import numpy as np
import pytest

from face_relief.errors import BehindCameraError, DimensionMismatchError, InputError
from face_relief.evaluation import angular_error
from face_relief.face_model import build_toy_model
from face_relief.geometry import pixel_rays, triangle_normals_and_centroids
from face_relief.integration import heightfield_normals, interior_mask, restrict
from face_relief.models import N_EXP, N_ID
from face_relief.synth import (
    SampleSpec,
    base_light_directions,
    draw_coefficients,
    make_proxy,
    sample_record,
)

QUIET = dict(
    id_std=0.0,
    exp_std=0.0,
    albedo_std=0.0,
    pitch_range=0.0,
    yaw_range=0.0,
    roll_range=0.0,
    translation_jitter_mm=0.0,
    light_jitter=0.0,
    detail_amplitude_mm=0.0,
)


# ---------------------------------------------------------------------------
# SampleSpec
# ---------------------------------------------------------------------------


def test_spec_rejects_bad_values():
    with pytest.raises(InputError):
        SampleSpec(seed=0, n_lights=0)
    with pytest.raises(InputError):
        SampleSpec(seed=0, id_std=-1.0)
    with pytest.raises(InputError):
        SampleSpec(seed=0, light_jitter=1.0)
    with pytest.raises(InputError):
        SampleSpec(seed=0, detail_wavelength_mm=(40.0, 20.0))


def test_spec_digest_tracks_content():
    spec = SampleSpec(seed=3)
    assert spec.digest() == SampleSpec.from_dict(spec.to_dict()).digest()
    assert spec.digest() != SampleSpec(seed=4).digest()


def test_spec_camera_centres_the_principal_point():
    cam = SampleSpec(seed=0, resolution=64).camera()
    assert (cam.width, cam.height) == (64, 64)
    assert cam.cx == cam.cy == 31.5
    assert cam.fx == pytest.approx(4.2 * 64)


def test_more_than_three_lights_spread_across_the_front():
    dirs = base_light_directions(5)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0)
    assert np.all(dirs[:, 2] < 0.0)
    assert np.all(np.diff(dirs[:, 0]) > 0.0)
    assert np.ptp(dirs[:, 1]) > 0.3


def test_three_light_rig_constrains_every_normal_direction():
    dirs = base_light_directions(3)
    assert dirs[0, 0] == 0.0 and dirs[1, 0] < 0.0 < dirs[2, 0]
    assert dirs[0, 1] < 0.0 < dirs[1, 1]
    # Smallest eigenvalue of sum_j d_j d_j^T; a shared elevation drives it toward 0.
    assert np.linalg.eigvalsh(dirs.T @ dirs).min() > 0.3


def test_zero_stds_give_zero_coefficients(small_model):
    coeffs = draw_coefficients(small_model, SampleSpec(seed=0, **QUIET), np.random.default_rng(0))
    assert len(coeffs["alpha_id"]) == N_ID
    assert not np.any(coeffs["alpha_id"]) and not np.any(coeffs["alpha_exp"])


# ---------------------------------------------------------------------------
# Proxy
# ---------------------------------------------------------------------------


def test_full_rank_proxy_reproduces_model_geometry(small_model):
    rng = np.random.default_rng(5)
    record = sample_record(small_model, SampleSpec(seed=5, resolution=48, detail_amplitude_mm=0.0))
    proxy = make_proxy(record.gt_mesh, small_model, N_ID, N_EXP, rng=rng)
    np.testing.assert_allclose(proxy.vertices, record.gt_mesh.vertices, atol=1e-9)


def test_proxy_needs_model_topology(small_model, coarse_model):
    mesh = sample_record(coarse_model, SampleSpec(seed=0, resolution=48)).gt_mesh
    with pytest.raises(DimensionMismatchError):
        make_proxy(mesh, small_model, 10, 5)


def test_proxy_rank_out_of_range(small_model):
    mesh = sample_record(small_model, SampleSpec(seed=0, resolution=48)).gt_mesh
    with pytest.raises(InputError):
        make_proxy(mesh, small_model, N_ID + 1, 0)


def _mean_normal_angle(a, b):
    na, _ = triangle_normals_and_centroids(a)
    nb, _ = triangle_normals_and_centroids(b)
    return float(np.degrees(np.arccos(np.clip(np.sum(na * nb, axis=1), -1.0, 1.0))).mean())


def test_truncated_proxy_is_coarser_than_full_rank(small_model):
    truth = sample_record(small_model, SampleSpec(seed=8, resolution=48, detail_amplitude_mm=0.0)).gt_mesh
    full = make_proxy(truth, small_model, N_ID, N_EXP)
    coarse = make_proxy(truth, small_model, 10, 5)
    assert _mean_normal_angle(coarse, truth) > _mean_normal_angle(full, truth)
    assert _mean_normal_angle(full, truth) < 1e-3


def test_proxy_without_noise_is_deterministic(small_model):
    truth = sample_record(small_model, SampleSpec(seed=9, resolution=48)).gt_mesh
    a = make_proxy(truth, small_model, 10, 5)
    b = make_proxy(truth, small_model, 10, 5)
    np.testing.assert_array_equal(a.vertices, b.vertices)
    np.testing.assert_allclose(a.albedo.reshape(-1), np.clip(small_model.mean_albedo, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


def test_same_seed_gives_identical_arrays(small_model):
    spec = SampleSpec(seed=11, resolution=48)
    a = sample_record(small_model, spec)
    b = sample_record(small_model, spec)
    for x, y in zip(a.images, b.images):
        np.testing.assert_array_equal(x.pixels, y.pixels)
    np.testing.assert_array_equal(a.gt_mesh.vertices, b.gt_mesh.vertices)
    np.testing.assert_array_equal(a.proxy.vertices, b.proxy.vertices)
    assert a.metadata() == b.metadata()


def test_different_seeds_differ(small_model):
    a = sample_record(small_model, SampleSpec(seed=1, resolution=48))
    b = sample_record(small_model, SampleSpec(seed=2, resolution=48))
    assert not np.array_equal(a.gt_mesh.vertices, b.gt_mesh.vertices)


def test_zero_deviation_gives_mean_face_and_nominal_lights(small_model):
    record = sample_record(small_model, SampleSpec(seed=0, resolution=48, **QUIET))
    np.testing.assert_allclose(record.gt_mesh.vertices.reshape(-1), small_model.mean_shape)
    np.testing.assert_allclose(record.pose.translation, [0.0, 0.0, 1000.0])
    center = record.gt_mesh.vertices.mean(axis=0) + np.array([0.0, 0.0, 1000.0])
    for light, direction in zip(record.lights, base_light_directions(3)):
        np.testing.assert_allclose(light.position, center + 600.0 * direction, atol=1e-9)
        assert light.illumination == pytest.approx(600.0**2)


def test_ground_truth_masks_agree(small_model):
    record = sample_record(small_model, SampleSpec(seed=4, resolution=48))
    mask = record.gt_normals.mask
    assert mask.any()
    np.testing.assert_array_equal(record.gt_depth.mask, mask)
    for image in record.images:
        np.testing.assert_array_equal(image.mask, mask)
        assert np.all(image.pixels[~mask] == 0.0)
    assert np.all(record.gt_depth.depth[mask] > 900.0)


def test_ground_truth_normals_face_the_camera(small_model):
    record = sample_record(small_model, SampleSpec(seed=6, resolution=48))
    mask = record.gt_normals.mask
    rays = pixel_rays(record.camera)[mask]
    facing = np.einsum("ij,ij->i", record.gt_normals.normals[mask], rays)
    assert np.mean(facing < 0.0) > 0.95


def test_face_that_never_fits_raises():
    model = build_toy_model(grid=8, seed=0)
    with pytest.raises(BehindCameraError):
        sample_record(model, SampleSpec(seed=0, resolution=32, base_distance_mm=-1000.0))


@pytest.mark.parametrize("seed", [4, 11])
def test_ground_truth_normals_agree_with_the_depth_they_come_with(default_model, seed):
    record = sample_record(default_model, SampleSpec(seed=seed))
    induced = heightfield_normals(record.gt_depth)
    inner = interior_mask(record.gt_depth.mask)
    report = angular_error(restrict(induced, inner), record.gt_normals)
    assert report.mean <= 1.0
