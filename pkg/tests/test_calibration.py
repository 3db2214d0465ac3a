"""Tests for near point-light calibration."""

import numpy as np
import pytest

from face_relief.calibration import (
    PhotometricData,
    calibrate_lights,
    photometric_residual_and_jacobian,
)
from face_relief.config import CalibrationSettings
from face_relief.errors import InputError, InsufficientDataError
from face_relief.models import CalibrationProblem, FaceMesh, PointLight
from face_relief.objective_log import ObjectiveLog, is_non_increasing
from face_relief.renderer import render_lights
from face_relief.synth import SampleSpec, sample_record

SETTINGS = CalibrationSettings(min_triangles=20)


def _problem(face_scene, initial=None):
    mesh, pose, cam, lights = face_scene
    images = render_lights(mesh, pose, cam, lights)
    return CalibrationProblem(mesh, pose, cam, images, list(initial or lights)), lights


def _face_scale(mesh):
    extent = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    return float(np.linalg.norm(extent))


# ---------------------------------------------------------------------------
# Round trips on rendered images
# ---------------------------------------------------------------------------


def test_true_lights_are_a_fixed_point(face_scene):
    problem, truth = _problem(face_scene)
    lights, report = calibrate_lights(problem, SETTINGS)
    for est, ref in zip(lights, truth):
        np.testing.assert_allclose(est.position, ref.position, atol=1e-6)
        assert est.illumination == pytest.approx(ref.illumination, rel=1e-9)
    assert report.rms_residual < 1e-9


def test_displaced_guess_recovers_the_lights(face_scene):
    _, _, _, truth = face_scene
    offsets = [np.array([30.0, -20.0, 15.0]), np.array([-25.0, 10.0, -30.0]), np.array([20.0, 25.0, 20.0])]
    guess = [PointLight(s.position + d, s.illumination * f) for s, d, f in zip(truth, offsets, (1.1, 0.9, 1.15))]
    problem, _ = _problem(face_scene, guess)
    log = ObjectiveLog()
    lights, report = calibrate_lights(problem, SETTINGS, log)
    scale = _face_scale(face_scene[0])
    for est, ref in zip(lights, truth):
        assert np.linalg.norm(est.position - ref.position) < 0.01 * scale
        assert est.illumination == pytest.approx(ref.illumination, rel=0.01)
    assert report.outer_objectives[-1] < report.objective_history[0]
    assert log.values("calibration") == report.objective_history
    assert len(report.triangles_per_light) == 3


def test_sampled_record_with_exact_proxy_recovers_displaced_lights(small_model):
    record = sample_record(small_model, SampleSpec(seed=3, detail_amplitude_mm=0.0))
    scale = _face_scale(record.gt_mesh)
    directions = np.array([[1.0, -1.0, 0.5], [-0.5, 1.0, 1.0], [1.0, 0.5, -1.0]])
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    guess = [
        PointLight(light.position + 0.2 * scale * d, light.illumination * f)
        for light, d, f in zip(record.lights, directions, (1.2, 0.85, 1.1))
    ]
    problem = CalibrationProblem(record.gt_mesh, record.pose, record.camera, record.images, guess)
    lights, report = calibrate_lights(problem, SETTINGS)
    for est, ref in zip(lights, record.lights):
        assert np.linalg.norm(est.position - ref.position) <= 0.01 * scale
        assert est.illumination == pytest.approx(ref.illumination, rel=0.01)
    assert report.rms_residual < 1e-6


def test_doubled_illumination_with_fixed_albedo_is_recovered(face_scene):
    mesh, pose, cam, truth = face_scene
    brighter = [PointLight(s.position, 2.0 * s.illumination) for s in truth]
    images = render_lights(mesh, pose, cam, brighter)
    lights, _ = calibrate_lights(CalibrationProblem(mesh, pose, cam, images, truth), SETTINGS)
    for est, ref in zip(lights, brighter):
        assert est.illumination == pytest.approx(ref.illumination, rel=1e-6)


def test_result_does_not_depend_on_triangle_order(face_scene):
    mesh, pose, cam, truth = face_scene
    images = render_lights(mesh, pose, cam, truth)
    guess = [PointLight(s.position + np.array([20.0, -15.0, 10.0]), 1.1 * s.illumination) for s in truth]
    order = np.random.default_rng(7).permutation(mesh.n_triangles)
    shuffled = FaceMesh(mesh.vertices, mesh.triangles[order], mesh.albedo)

    lights_a, _ = calibrate_lights(CalibrationProblem(mesh, pose, cam, images, guess), SETTINGS)
    lights_b, _ = calibrate_lights(CalibrationProblem(shuffled, pose, cam, images, guess), SETTINGS)
    for a, b in zip(lights_a, lights_b):
        np.testing.assert_allclose(a.position, b.position, atol=1e-6)
        assert a.illumination == pytest.approx(b.illumination, rel=1e-6)


def test_inner_objective_never_increases(face_scene):
    _, _, _, truth = face_scene
    guess = [PointLight(s.position + np.array([15.0, 15.0, -15.0]), s.illumination) for s in truth]
    problem, _ = _problem(face_scene, guess)
    _, report = calibrate_lights(problem, CalibrationSettings(min_triangles=20, outer_iters=1))
    assert is_non_increasing(report.objective_history)


# ---------------------------------------------------------------------------
# Residuals and Jacobian
# ---------------------------------------------------------------------------


def test_samples_follow_the_proxy_coverage(face_scene):
    problem, _ = _problem(face_scene)
    data = PhotometricData.from_problem(problem)
    assert len(data.points) == int(problem.observations[0].mask.sum())
    assert data.observed.all()
    np.testing.assert_allclose(np.linalg.norm(data.normals, axis=1), 1.0)


def test_jacobian_matches_central_differences(face_scene):
    problem, truth = _problem(face_scene)
    data = PhotometricData.from_problem(problem)
    lights = [PointLight(s.position + np.array([5.0, -3.0, 2.0]), s.illumination) for s in truth]
    active = data.observed & data.lit(lights)
    _, jac = photometric_residual_and_jacobian(lights, active=active, data=data)

    def residual(perturbed):
        return photometric_residual_and_jacobian(perturbed, active=active, data=data)[0]

    for j, light in enumerate(lights):
        for axis in range(4):
            h = 1e-3 if axis < 3 else 1e-3 * light.illumination
            plus, minus = list(lights), list(lights)
            if axis < 3:
                step = np.zeros(3)
                step[axis] = h
                plus[j] = PointLight(light.position + step, light.illumination)
                minus[j] = PointLight(light.position - step, light.illumination)
            else:
                plus[j] = PointLight(light.position, light.illumination + h)
                minus[j] = PointLight(light.position, light.illumination - h)
            numeric = (residual(plus) - residual(minus)) / (2 * h)
            analytic = jac[:, 4 * j + axis]
            scale = np.max(np.abs(analytic))
            assert np.max(np.abs(numeric - analytic)) <= 1e-5 * scale


def test_beta_columns_are_intensity_over_beta(face_scene):
    problem, truth = _problem(face_scene)
    data = PhotometricData.from_problem(problem)
    active = data.observed & data.lit(truth)
    residual, jac = photometric_residual_and_jacobian(truth, active=active, data=data)
    assert np.linalg.norm(residual) <= 1e-10
    predicted = residual + data.intensities[active].reshape(-1)
    betas = np.array([s.illumination for s in truth])
    np.testing.assert_allclose(jac[:, 3::4] @ betas, predicted, rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------------------
# Rejections
# ---------------------------------------------------------------------------


def test_light_behind_the_face_is_rejected(face_scene):
    _, _, _, truth = face_scene
    behind = list(truth)
    behind[0] = PointLight(truth[0].position + np.array([0.0, 0.0, 1200.0]), truth[0].illumination)
    problem, _ = _problem(face_scene, behind)
    with pytest.raises(InputError, match="faces only"):
        calibrate_lights(problem, SETTINGS)


def test_too_few_triangles_raises_with_counts(face_scene):
    problem, _ = _problem(face_scene)
    with pytest.raises(InsufficientDataError) as exc:
        calibrate_lights(problem, CalibrationSettings(min_triangles=100_000))
    assert len(exc.value.counts) == 3


def test_observation_count_must_match_lights(face_scene):
    mesh, pose, cam, truth = face_scene
    images = render_lights(mesh, pose, cam, truth)
    with pytest.raises(InputError):
        CalibrationProblem(mesh, pose, cam, images[:2], truth)
