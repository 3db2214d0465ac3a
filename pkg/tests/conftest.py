"""Shared test fixtures."""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure the project root is importable
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from face_relief.face_model import build_toy_model, grid_triangles  # noqa: E402
from face_relief.geometry import (  # noqa: E402
    posed_mesh,
    project_points,
    triangle_albedo,
    triangle_normals_and_centroids,
)
from face_relief.models import CameraIntrinsics, FaceMesh, PointLight, Pose, RadianceImage  # noqa: E402
from face_relief.renderer import shade, visible_triangles  # noqa: E402
from face_relief.synth import SampleSpec, base_light_directions  # noqa: E402


@pytest.fixture(autouse=True)
def _clean_relief_env(monkeypatch):
    """Keep RELIEF_* variables from the developer's shell out of the tests."""
    for key in list(os.environ):
        if key.startswith("RELIEF_"):
            monkeypatch.delenv(key, raising=False)


# ---------------------------------------------------------------------------
# Cameras and simple meshes
# ---------------------------------------------------------------------------


@pytest.fixture
def camera():
    """64x64 pinhole, f = 100 px, principal point at the image centre."""
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=31.5, cy=31.5, width=64, height=64)


def make_plane(n=9, size=40.0, z=0.0, albedo=0.5):
    """n x n vertex grid centred on the origin at height *z*, facing -z."""
    coords = np.linspace(-size / 2, size / 2, n)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    vertices = np.stack([xx.ravel(), yy.ravel(), np.full(n * n, z)], axis=1)
    return FaceMesh(vertices, grid_triangles(n, n), np.full((n * n, 3), albedo))


@pytest.fixture
def plane():
    return make_plane


# ---------------------------------------------------------------------------
# Toy face models
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def small_model():
    return build_toy_model(grid=24, seed=0)


@pytest.fixture(scope="session")
def coarse_model():
    return build_toy_model(grid=12, seed=0)


@pytest.fixture(scope="session")
def default_model():
    """The procedural model at its default lattice density."""
    return build_toy_model()


@pytest.fixture
def face_scene(coarse_model):
    """Coarse mean face 1 m in front of a 128 px camera with three near lights."""
    mesh = FaceMesh(
        coarse_model.mean_shape.reshape(-1, 3),
        coarse_model.triangles,
        np.full((coarse_model.n_vertices, 3), 0.6),
    )
    pose = Pose(translation=np.array([0.0, 0.0, 1000.0]))
    cam = SampleSpec(seed=0).camera()
    center = posed_mesh(mesh, pose).vertices.mean(axis=0)
    betas = 600.0**2 * np.array([1.0, 1.1, 0.9])
    lights = [
        PointLight(center + 600.0 * direction, beta)
        for direction, beta in zip(base_light_directions(3), betas)
    ]
    return mesh, pose, cam, lights


def splat_images(mesh, pose, cam, lights):
    """Images whose bilinear samples at visible centroids equal the exact facet shading.

    Each visible triangle writes its value onto the 2x2 taps around its
    projected centroid; taps claimed by two triangles are left out of the mask.
    """
    posed = posed_mesh(mesh, pose)
    normals, centroids = triangle_normals_and_centroids(posed)
    albedo = triangle_albedo(mesh)
    visible = np.flatnonzero(visible_triangles(mesh, pose, cam))
    uv = project_points(centroids[visible], cam)
    u0 = np.floor(uv[:, 0]).astype(np.int64)
    v0 = np.floor(uv[:, 1]).astype(np.int64)
    taps = [(u0 + du, v0 + dv) for du in (0, 1) for dv in (0, 1)]

    claims = np.zeros((cam.height, cam.width), dtype=np.int64)
    for tu, tv in taps:
        inside = (tu >= 0) & (tu < cam.width) & (tv >= 0) & (tv < cam.height)
        np.add.at(claims, (tv[inside], tu[inside]), 1)
    mask = claims == 1

    images = []
    for light in lights:
        values = shade(centroids[visible], normals[visible], albedo[visible], light)
        pixels = np.zeros((cam.height, cam.width, 3))
        for tu, tv in taps:
            inside = (tu >= 0) & (tu < cam.width) & (tv >= 0) & (tv < cam.height)
            pixels[tv[inside], tu[inside]] = values[inside]
        pixels[~mask] = 0.0
        images.append(RadianceImage(pixels, mask.copy()))
    return images


@pytest.fixture
def splat():
    return splat_images
