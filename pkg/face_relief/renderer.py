"""Lambertian near point-light rendering, the available-light filter and intensity sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from face_relief.errors import EmptyMaskError, LightSingularityError
from face_relief.geometry import (
    posed_mesh,
    project_points,
    transform_points,
    triangle_normals_and_centroids,
    vertex_normals,
)
from face_relief.models import (
    CameraIntrinsics,
    FaceMesh,
    ObservedIntensities,
    PointLight,
    Pose,
    RadianceImage,
    VisibilitySets,
)
from face_relief.raster import Fragments, rasterize, ray_hits_triangles, segment_occluded

logger = logging.getLogger(__name__)

EPS_DIST_MM = 1e-9


@dataclass(frozen=True)
class RenderOptions:
    cast_shadows: bool = False
    smooth_shading: bool = True
    cull_backfaces: bool = True


# ---------------------------------------------------------------------------
# Shading
# ---------------------------------------------------------------------------


def shade_point(position, normal, albedo, light: PointLight) -> np.ndarray:
    """I = rho * max(N . beta (P - V) / |P - V|^3, 0) for one surface point."""
    return shade(
        np.asarray(position, dtype=np.float64).reshape(1, 3),
        np.asarray(normal, dtype=np.float64).reshape(1, 3),
        np.asarray(albedo, dtype=np.float64).reshape(1, 3),
        light,
    )[0]


def light_vectors(positions: np.ndarray, light: PointLight) -> np.ndarray:
    """beta (P - V) / |P - V|^3 per point; raises near the light position."""
    d = light.position[None, :] - np.asarray(positions, dtype=np.float64)
    dist = np.linalg.norm(d, axis=1)
    if dist.size and dist.min() < EPS_DIST_MM:
        raise LightSingularityError(
            f"surface point within {EPS_DIST_MM} mm of light at {light.position.tolist()}"
        )
    return light.illumination * d / dist[:, None] ** 3


def shade(positions: np.ndarray, normals: np.ndarray, albedo: np.ndarray, light: PointLight) -> np.ndarray:
    """Vectorised ``shade_point`` over (k, 3) arrays."""
    irradiance = np.einsum("ij,ij->i", normals, light_vectors(positions, light))
    return np.asarray(albedo, dtype=np.float64) * np.maximum(irradiance, 0.0)[:, None]


def available_lights(mesh: FaceMesh, lights: Sequence[PointLight]) -> VisibilitySets:
    """Light j is available to triangle i iff N_i . (P_j - V_i) > 0 (camera-space mesh)."""
    normals, centroids = triangle_normals_and_centroids(mesh)
    positions = np.stack([light.position for light in lights], axis=0) if lights else np.zeros((0, 3))
    offsets = positions[None, :, :] - centroids[:, None, :]
    return VisibilitySets(np.einsum("ik,ijk->ij", normals, offsets) > 0.0)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render(
    mesh: FaceMesh,
    pose: Pose,
    cam: CameraIntrinsics,
    light: PointLight,
    options: Optional[RenderOptions] = None,
) -> RadianceImage:
    return render_lights(mesh, pose, cam, [light], options)[0]


def render_lights(
    mesh: FaceMesh,
    pose: Pose,
    cam: CameraIntrinsics,
    lights: Sequence[PointLight],
    options: Optional[RenderOptions] = None,
    fragments: Optional[Fragments] = None,
) -> list[RadianceImage]:
    """Render one image per light from a single shared rasterization."""
    options = options or RenderOptions()
    posed = posed_mesh(mesh, pose)
    empty = np.zeros((cam.height, cam.width, 3))
    no_mask = np.zeros((cam.height, cam.width), dtype=bool)
    if np.all(posed.vertices[:, 2] <= 0.0):
        logger.warning("Mesh is entirely behind the camera; returning empty renders")
        return [RadianceImage(empty.copy(), no_mask.copy(), status="behind_camera") for _ in lights]

    if fragments is None:
        fragments = rasterize(posed.vertices, posed.triangles, cam, options.cull_backfaces)
    mask = fragments.mask
    positions = fragments.interpolate(posed.vertices, posed.triangles)[mask]
    albedo = fragments.interpolate(posed.albedo, posed.triangles)[mask]
    normals = surface_normals(posed, fragments, options.smooth_shading)[mask]

    images = []
    for light in lights:
        pixels = empty.copy()
        values = shade(positions, normals, albedo, light)
        if options.cast_shadows and len(positions):
            blocked = segment_occluded(positions, light.position, posed.vertices, posed.triangles)
            values[blocked] = 0.0
        pixels[mask] = values
        images.append(RadianceImage(pixels, mask.copy()))
    logger.debug("Rendered %d light(s), %d covered pixels", len(lights), int(mask.sum()))
    return images


def surface_normals(posed: FaceMesh, fragments: Fragments, smooth: bool = True) -> np.ndarray:
    """Per-pixel unit normals: interpolated vertex normals or flat triangle normals."""
    mask = fragments.mask
    out = np.zeros(mask.shape + (3,))
    if smooth:
        blended = fragments.interpolate(vertex_normals(posed), posed.triangles)[mask]
        out[mask] = blended / np.linalg.norm(blended, axis=1, keepdims=True)
    else:
        normals, _ = triangle_normals_and_centroids(posed)
        out[mask] = normals[fragments.tri_id[mask]]
    return out


# ---------------------------------------------------------------------------
# Observed intensities
# ---------------------------------------------------------------------------


def sample_observed_intensity(
    image: RadianceImage,
    mesh: FaceMesh,
    pose: Pose,
    cam: CameraIntrinsics,
    triangles: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear samples of *image* at the projected centroids of *triangles*.

    Returns ``(values (k, 3), observed (k,))``. A triangle is unobserved when
    its centroid is behind the camera or any tap with non-zero weight falls
    outside the image or its mask.
    """
    if not image.mask.any():
        raise EmptyMaskError("cannot sample intensities from an image with an empty mask")
    centroids = transform_points(mesh.vertices[mesh.triangles].mean(axis=1), pose)
    if triangles is not None:
        centroids = centroids[np.asarray(triangles, dtype=np.int64)]
    return bilinear_sample(image, centroids, cam)


def bilinear_sample(
    image: RadianceImage, points_cam: np.ndarray, cam: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    k = len(points_cam)
    values = np.zeros((k, 3))
    observed = points_cam[:, 2] > 0.0
    uv = np.zeros((k, 2))
    if observed.any():
        uv[observed] = project_points(points_cam[observed], cam)
    u, v = uv[:, 0], uv[:, 1]
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = u - u0
    fv = v - v0
    taps = (
        (0, 0, (1.0 - fu) * (1.0 - fv)),
        (1, 0, fu * (1.0 - fv)),
        (0, 1, (1.0 - fu) * fv),
        (1, 1, fu * fv),
    )
    for du, dv, weight in taps:
        cu, cv = u0 + du, v0 + dv
        needed = weight > 0.0
        inside = (cu >= 0) & (cu < image.width) & (cv >= 0) & (cv < image.height)
        ok = inside & observed
        covered = np.zeros(k, dtype=bool)
        covered[ok] = image.mask[cv[ok], cu[ok]]
        observed &= covered | ~needed
        use = ok & needed & observed
        values[use] += weight[use, None] * image.pixels[cv[use], cu[use]]
    values[~observed] = 0.0
    return values, observed


def sample_observations(
    images: Sequence[RadianceImage],
    mesh: FaceMesh,
    pose: Pose,
    cam: CameraIntrinsics,
    triangles: Optional[np.ndarray] = None,
) -> ObservedIntensities:
    """Stack per-light samples into ``ObservedIntensities`` of shape (k, n_lights, 3)."""
    samples = [sample_observed_intensity(img, mesh, pose, cam, triangles) for img in images]
    return ObservedIntensities(
        values=np.stack([s[0] for s in samples], axis=1),
        observed=np.stack([s[1] for s in samples], axis=1),
    )


# ---------------------------------------------------------------------------
# Camera visibility
# ---------------------------------------------------------------------------


def visible_triangles(
    mesh: FaceMesh,
    pose: Pose,
    cam: CameraIntrinsics,
    fragments: Optional[Fragments] = None,
    tolerance_mm: float = 1e-6,
) -> np.ndarray:
    """Boolean mask of triangles seen by the camera.

    A triangle is visible when it faces the camera centre and the triangle
    winning the z-buffer at its centroid's nearest pixel is itself, shares a
    vertex with it, or is not hit by the centroid's ray closer than the
    centroid minus *tolerance_mm*.
    """
    posed = posed_mesh(mesh, pose)
    normals, centroids = triangle_normals_and_centroids(posed)
    visible = (np.einsum("ij,ij->i", normals, centroids) < 0.0) & (centroids[:, 2] > 0.0)
    if fragments is None:
        fragments = rasterize(posed.vertices, posed.triangles, cam)
    candidates = np.flatnonzero(visible)
    if candidates.size == 0:
        return visible
    uv = np.rint(project_points(centroids[candidates], cam)).astype(np.int64)
    on_image = (
        (uv[:, 0] >= 0) & (uv[:, 0] < cam.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)
    )
    visible[candidates[~on_image]] = False
    candidates, uv = candidates[on_image], uv[on_image]
    winner = fragments.tri_id[uv[:, 1], uv[:, 0]]

    tris = posed.triangles
    contested = (winner >= 0) & (winner != candidates)
    rival_corners = tris[winner[contested]][:, :, None]
    own_corners = tris[candidates[contested]][:, None, :]
    shares = np.any(rival_corners == own_corners, axis=(1, 2))
    check = candidates[contested][~shares]
    rivals = winner[contested][~shares]
    if check.size:
        rays = centroids[check]
        t = ray_hits_triangles(np.zeros_like(rays), rays, posed.vertices[tris[rivals]])
        along = np.linalg.norm(rays, axis=1)
        occluded = t * along < along - tolerance_mm
        visible[check[occluded]] = False
    return visible
