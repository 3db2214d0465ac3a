"""Tests for height-field integration and its helpers."""

import numpy as np
import pytest

from face_relief.config import IntegrationSettings
from face_relief.errors import DegenerateGeometryError, GaugeError, InputError
from face_relief.face_model import grid_triangles
from face_relief.geometry import pixel_rays, posed_mesh, triangle_normals_and_centroids
from face_relief.integration import (
    _InteriorStencil,
    heightfield_normals,
    heightfield_to_mesh,
    integrate,
    interior_mask,
    laplacian,
    pixel_normal_from_heights,
    prune_mask,
    rasterize_target_normals,
)
from face_relief.models import CameraIntrinsics, FaceMesh, HeightField, NormalMap, Pose, RefinementState
from face_relief.objective_log import ObjectiveLog, is_non_increasing
from face_relief.raster import rasterize


@pytest.fixture
def narrow_camera():
    """128 px image with a long focal length (about 0.1 mm per pixel at 1 m)."""
    return CameraIntrinsics(fx=10000.0, fy=10000.0, cx=63.5, cy=63.5, width=128, height=128)


def _paraboloid(cam, height_range=2.0, base=1000.0):
    rays = pixel_rays(cam)
    # Lateral position at the base depth is close enough for a smooth test surface.
    x, y = rays[:, :, 0] * base, rays[:, :, 1] * base
    r2 = x**2 + y**2
    depth = base + height_range * r2 / r2.max()
    return HeightField(depth, np.ones(depth.shape, dtype=bool), cam)


def _flat(cam, depth=1000.0, mask=None):
    mask = np.ones((cam.height, cam.width), dtype=bool) if mask is None else mask
    return HeightField(np.full(mask.shape, depth), mask, cam)


# ---------------------------------------------------------------------------
# Pixel normals
# ---------------------------------------------------------------------------


def test_flat_plane_normal_faces_the_camera(camera):
    normal = pixel_normal_from_heights(_flat(camera, 500.0), (10, 20))
    np.testing.assert_allclose(normal, [0.0, 0.0, -1.0], atol=1e-12)


def test_boundary_pixel_uses_remaining_cross_terms(camera):
    normal = pixel_normal_from_heights(_flat(camera, 500.0), (0, 0))
    np.testing.assert_allclose(normal, [0.0, 0.0, -1.0], atol=1e-12)


def test_pixel_outside_mask_rejected(camera):
    mask = np.zeros((camera.height, camera.width), dtype=bool)
    mask[5:10, 5:10] = True
    with pytest.raises(InputError):
        pixel_normal_from_heights(_flat(camera, 500.0, mask), (0, 0))


def test_isolated_pixel_has_no_normal(camera):
    mask = np.zeros((camera.height, camera.width), dtype=bool)
    mask[5, 5] = True
    with pytest.raises(DegenerateGeometryError):
        pixel_normal_from_heights(_flat(camera, 500.0, mask), (5, 5))


def test_heightfield_normals_agree_with_single_pixel_normals(narrow_camera):
    height = _paraboloid(narrow_camera)
    normals = heightfield_normals(height)
    assert normals.mask.all()
    for pixel in [(0, 0), (64, 10), (127, 127), (30, 90)]:
        np.testing.assert_allclose(
            normals.normals[pixel[1], pixel[0]], pixel_normal_from_heights(height, pixel), atol=1e-12
        )


# ---------------------------------------------------------------------------
# Masks and operators
# ---------------------------------------------------------------------------


def test_prune_mask_keeps_largest_component():
    mask = np.zeros((10, 10), dtype=bool)
    mask[1:5, 1:5] = True
    mask[7:9, 7:9] = True
    mask[0, 9] = True
    pruned = prune_mask(mask)
    assert pruned[1:5, 1:5].all()
    assert not pruned[7:9, 7:9].any()
    assert not pruned[0, 9]


def test_laplacian_rows_sum_to_zero():
    mask = np.zeros((6, 7), dtype=bool)
    mask[1:5, 1:6] = True
    lap = laplacian(mask)
    assert lap.shape == (20, 20)
    np.testing.assert_allclose(np.asarray(lap.sum(axis=1)).ravel(), 0.0)
    assert lap.diagonal().max() == 4


def test_interior_mask_excludes_the_rim():
    mask = np.ones((5, 5), dtype=bool)
    interior = interior_mask(mask)
    assert interior.sum() == 9
    assert not interior[0].any()


def test_normal_jacobian_matches_central_differences(narrow_camera):
    height = _paraboloid(narrow_camera)
    mask = height.mask
    stencil = _InteriorStencil(mask, narrow_camera)
    z = height.depth[mask]
    n = len(z)
    _, jac = stencil.jacobian(z, n)
    jac = jac.tocsc()
    rng = np.random.default_rng(0)
    h = 1e-4
    for col in rng.choice(n, size=100, replace=False):
        step = np.zeros(n)
        step[col] = h
        numeric = (stencil.normals(z + step) - stencil.normals(z - step)).reshape(-1) / (2 * h)
        analytic = jac[:, col].toarray().ravel()
        scale = max(np.max(np.abs(analytic)), 1e-12)
        assert np.max(np.abs(numeric - analytic)) <= 1e-4 * scale


# ---------------------------------------------------------------------------
# Gauss-Newton integration
# ---------------------------------------------------------------------------


def test_plane_with_its_own_normals_is_a_fixed_point(camera):
    z0 = _flat(camera, 500.0)
    target = heightfield_normals(z0)
    result = integrate(target, z0, w1=1e-4, w2=1e-3)
    np.testing.assert_allclose(result.height.depth, 500.0, rtol=1e-9)
    assert result.converged


def test_paraboloid_is_recovered_from_its_normals(narrow_camera):
    truth = _paraboloid(narrow_camera, height_range=2.0)
    target = heightfield_normals(truth)
    z0 = _flat(narrow_camera, float(truth.depth.mean()))
    log = ObjectiveLog()
    result = integrate(target, z0, w1=1e-4, w2=1e-3, log=log)
    error = result.height.depth - truth.depth
    rms = float(np.sqrt(np.mean(error[truth.mask] ** 2)))
    assert rms <= 0.005 * 2.0
    assert is_non_increasing(result.objective_history)
    assert log.values("integration") == result.objective_history


def test_zero_weights_leave_the_gauge_free(camera):
    z0 = _flat(camera, 500.0)
    with pytest.raises(GaugeError):
        integrate(heightfield_normals(z0), z0, w1=0.0, w2=0.0)


def test_negative_weight_rejected(camera):
    z0 = _flat(camera, 500.0)
    with pytest.raises(InputError):
        integrate(heightfield_normals(z0), z0, w1=-1.0, w2=1e-3)


def test_target_and_prior_masks_must_match(camera):
    z0 = _flat(camera, 500.0)
    mask = z0.mask.copy()
    mask[0, 0] = False
    target = NormalMap(np.where(mask[:, :, None], [0.0, 0.0, -1.0], 0.0), mask)
    with pytest.raises(InputError):
        integrate(target, z0, w1=1e-4, w2=1e-3)


def test_iteration_cap_returns_best_iterate(narrow_camera):
    truth = _paraboloid(narrow_camera)
    z0 = _flat(narrow_camera, float(truth.depth.mean()))
    result = integrate(
        heightfield_normals(truth), z0, 1e-4, 1e-3, IntegrationSettings(max_iters=1, rel_tol=0.0)
    )
    assert result.iterations <= 1
    assert result.objective_history[-1] <= result.objective_history[0]


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def test_heightfield_to_mesh_faces_the_camera(camera):
    mask = np.zeros((camera.height, camera.width), dtype=bool)
    mask[10:13, 20:23] = True
    mesh = heightfield_to_mesh(_flat(camera, 400.0, mask))
    assert mesh.n_vertices == 9
    assert mesh.n_triangles == 8
    normals, _ = triangle_normals_and_centroids(mesh)
    assert np.all(normals[:, 2] < 0.0)
    np.testing.assert_allclose(mesh.vertices[:, 2], 400.0)


# ---------------------------------------------------------------------------
# Target normals
# ---------------------------------------------------------------------------

SPHERE_CENTRE = np.array([0.0, 0.0, 300.0])
SPHERE_RADIUS = 60.0


def _proxy_state(mesh, pose):
    normals, centroids = triangle_normals_and_centroids(posed_mesh(mesh, pose))
    k = len(normals)
    return RefinementState(
        normals_hat=normals,
        albedo_hat=np.full((k, 3), 0.5),
        visible_set=np.arange(k),
        one_rings=[np.zeros(0, dtype=np.int64) for _ in range(k)],
        centroids=centroids,
        prior_normals=normals.copy(),
    )


def _hemisphere(n=101):
    """Front cap of a sphere as a height grid, flat skirt outside the disc."""
    coords = np.linspace(-SPHERE_RADIUS, SPHERE_RADIUS, n)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    cap = np.sqrt(np.maximum(SPHERE_RADIUS**2 - xx**2 - yy**2, 0.0))
    vertices = np.stack([xx.ravel(), yy.ravel(), -cap.ravel()], axis=1)
    return FaceMesh(vertices, grid_triangles(n, n), np.full((n * n, 3), 0.5))


def test_frontal_plane_target_normals_point_at_the_camera(camera, plane):
    mesh = plane(n=9, size=300.0)
    pose = Pose(translation=np.array([0.0, 0.0, 1000.0]))
    target = rasterize_target_normals(_proxy_state(mesh, pose), mesh, pose, camera)
    assert target.mask.sum() > 100
    expected = np.tile([0.0, 0.0, -1.0], (int(target.mask.sum()), 1))
    np.testing.assert_allclose(target.normals[target.mask], expected, atol=1e-12)


def test_target_mask_is_the_proxy_coverage(camera):
    mesh = _hemisphere()
    pose = Pose(translation=SPHERE_CENTRE)
    posed = posed_mesh(mesh, pose)
    target = rasterize_target_normals(_proxy_state(mesh, pose), mesh, pose, camera)
    np.testing.assert_array_equal(target.mask, rasterize(posed.vertices, posed.triangles, camera).mask)


def test_hemisphere_target_normals_follow_the_sphere(camera):
    mesh = _hemisphere()
    pose = Pose(translation=SPHERE_CENTRE)
    target = rasterize_target_normals(_proxy_state(mesh, pose), mesh, pose, camera)

    # Nearest ray / sphere intersection for every pixel centre.
    rays = pixel_rays(camera)
    b = rays @ SPHERE_CENTRE
    a = np.sum(rays**2, axis=2)
    disc = b**2 - a * (SPHERE_CENTRE @ SPHERE_CENTRE - SPHERE_RADIUS**2)
    hit = disc > 0.0
    t = (b - np.sqrt(np.where(hit, disc, 0.0))) / a
    points = rays * t[:, :, None]
    analytic = (points - SPHERE_CENTRE) / SPHERE_RADIUS
    lateral = np.linalg.norm(points[:, :, :2] - SPHERE_CENTRE[:2], axis=2)
    core = hit & target.mask & (lateral < 0.7 * SPHERE_RADIUS)
    assert core.sum() > 200

    cosines = np.clip(np.sum(target.normals[core] * analytic[core], axis=1), -1.0, 1.0)
    assert np.degrees(np.arccos(cosines)).max() <= 3.0


def test_refined_normals_facing_away_leave_the_target_mask(camera, plane):
    mesh = plane(n=9, size=300.0)
    pose = Pose(translation=np.array([0.0, 0.0, 1000.0]))
    state = _proxy_state(mesh, pose)
    state.normals_hat[0] = [0.0, 0.0, 1.0]
    covered = rasterize(posed_mesh(mesh, pose).vertices, mesh.triangles, camera)
    target = rasterize_target_normals(state, mesh, pose, camera)
    flipped = covered.mask & (covered.tri_id == 0)
    assert flipped.any()
    assert not target.mask[flipped].any()
    np.testing.assert_array_equal(target.mask, covered.mask & ~flipped)
