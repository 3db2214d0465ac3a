"""Camera projection, pose and triangle geometry shared by every stage."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from face_relief.errors import BehindCameraError, DegenerateGeometryError, InputError
from face_relief.models import CameraIntrinsics, FaceMesh, Pose

logger = logging.getLogger(__name__)

# Twice-area below which a triangle counts as degenerate.
DEGENERATE_AREA = 1e-14


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------


def rotation_matrix(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """R = R_z(roll) @ R_y(yaw) @ R_x(pitch)."""
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cr, sr = np.cos(roll), np.sin(roll)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def transform_points(points: np.ndarray, pose: Pose) -> np.ndarray:
    """Apply ``R X + t`` to an (n, 3) array."""
    points = np.asarray(points, dtype=np.float64)
    return points @ pose.rotation.T + pose.translation


def posed_mesh(mesh: FaceMesh, pose: Pose) -> FaceMesh:
    return mesh.with_vertices(transform_points(mesh.vertices, pose))


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def project_points(points_cam: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-space points; caller guarantees z > 0."""
    points_cam = np.asarray(points_cam, dtype=np.float64)
    z = points_cam[..., 2]
    u = cam.fx * points_cam[..., 0] / z + cam.cx
    v = cam.fy * points_cam[..., 1] / z + cam.cy
    return np.stack([u, v], axis=-1)


def project(point: Sequence[float], pose: Pose, cam: CameraIntrinsics) -> np.ndarray:
    """Project one model-space point to pixel coordinates."""
    p = transform_points(np.asarray(point, dtype=np.float64).reshape(1, 3), pose)[0]
    if p[2] <= 0.0:
        raise BehindCameraError(f"point {tuple(point)} is behind the camera (z' = {p[2]:.6g})")
    return project_points(p, cam)


def back_project(pixel: Sequence[float], depth_z: float, cam: CameraIntrinsics) -> np.ndarray:
    """Camera-space point at depth *depth_z* seen through *pixel*."""
    if not depth_z > 0.0:
        raise InputError(f"back_project needs positive depth, got {depth_z}")
    u, v = float(pixel[0]), float(pixel[1])
    return np.array(
        [(u - cam.cx) * depth_z / cam.fx, (v - cam.cy) * depth_z / cam.fy, depth_z]
    )


def pixel_rays(cam: CameraIntrinsics) -> np.ndarray:
    """Per-pixel ray directions scaled to unit z, shape (H, W, 3)."""
    v, u = np.mgrid[0 : cam.height, 0 : cam.width].astype(np.float64)
    return np.stack(
        [(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1
    )


# ---------------------------------------------------------------------------
# Triangles
# ---------------------------------------------------------------------------


def triangle_cross(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v0 = vertices[triangles[:, 0]]
    v1 = vertices[triangles[:, 1]]
    v2 = vertices[triangles[:, 2]]
    return np.cross(v1 - v0, v2 - v0)


def triangle_normals_and_centroids(mesh: FaceMesh) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals (stored winding) and centroids of every triangle."""
    cross = triangle_cross(mesh.vertices, mesh.triangles)
    norms = np.linalg.norm(cross, axis=1)
    bad = np.flatnonzero(norms <= DEGENERATE_AREA)
    if bad.size:
        raise DegenerateGeometryError(
            f"triangle {int(bad[0])} has zero area", index=int(bad[0])
        )
    normals = cross / norms[:, None]
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    return normals, centroids


def vertex_normals(mesh: FaceMesh) -> np.ndarray:
    """Area-weighted vertex normals."""
    cross = triangle_cross(mesh.vertices, mesh.triangles)
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.triangles[:, k], cross)
    norms = np.linalg.norm(acc, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return acc / norms


def triangle_albedo(mesh: FaceMesh) -> np.ndarray:
    """Per-triangle albedo as the mean of its vertex albedos."""
    return mesh.albedo[mesh.triangles].mean(axis=1)


def edge_adjacency(triangles: np.ndarray) -> list[np.ndarray]:
    """Edge-sharing neighbours of each triangle, sorted ascending."""
    triangles = np.asarray(triangles, dtype=np.int64)
    m = len(triangles)
    edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=0
    )
    edges.sort(axis=1)
    owner = np.tile(np.arange(m), 3)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges, owner = edges[order], owner[order]
    neighbours: list[list[int]] = [[] for _ in range(m)]
    start = 0
    n = len(edges)
    while start < n:
        stop = start + 1
        while stop < n and edges[stop, 0] == edges[start, 0] and edges[stop, 1] == edges[start, 1]:
            stop += 1
        group = owner[start:stop]
        for a in group:
            for b in group:
                if a != b:
                    neighbours[a].append(int(b))
        start = stop
    return [np.array(sorted(set(nb)), dtype=np.int64) for nb in neighbours]


def apply_similarity(
    points: np.ndarray, scale: float, rotation: np.ndarray, translation: np.ndarray
) -> np.ndarray:
    return scale * np.asarray(points, dtype=np.float64) @ np.asarray(rotation).T + translation
