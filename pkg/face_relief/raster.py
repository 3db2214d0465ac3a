"""Z-buffer triangle rasterizer and segment ray casting.

One rasterization pass yields per-pixel fragments (winning triangle,
perspective-correct barycentrics, depth) that every stage interpolates from:
shading, ground-truth maps, the visible-set test and target normals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from face_relief.models import CameraIntrinsics

logger = logging.getLogger(__name__)

NEAR_PLANE_MM = 1e-6
_RAY_CHUNK = 64


@dataclass(frozen=True, eq=False)
class Fragments:
    """Per-pixel rasterization result; ``tri_id`` is -1 on uncovered pixels."""

    tri_id: np.ndarray
    bary: np.ndarray
    depth: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.tri_id >= 0

    def interpolate(self, attributes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
        """Barycentric blend of per-vertex *attributes* over covered pixels (zeros elsewhere)."""
        attributes = np.asarray(attributes, dtype=np.float64)
        out = np.zeros(self.tri_id.shape + attributes.shape[1:])
        mask = self.mask
        corners = attributes[triangles[self.tri_id[mask]]]
        out[mask] = np.einsum("pk,pk...->p...", self.bary[mask], corners)
        return out


def rasterize(
    vertices_cam: np.ndarray,
    triangles: np.ndarray,
    cam: CameraIntrinsics,
    cull_backfaces: bool = True,
) -> Fragments:
    """Rasterize camera-space triangles; the nearest fragment wins (strict less-than).

    Triangles with a vertex on or behind the near plane are skipped. With
    *cull_backfaces*, triangles whose stored winding faces away from the
    camera centre are skipped as well.
    """
    vertices_cam = np.asarray(vertices_cam, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    h, w = cam.height, cam.width
    tri_id = np.full((h, w), -1, dtype=np.int64)
    bary = np.zeros((h, w, 3))
    depth = np.full((h, w), np.inf)

    z = vertices_cam[:, 2]
    safe_z = np.where(z > NEAR_PLANE_MM, z, 1.0)
    u = cam.fx * vertices_cam[:, 0] / safe_z + cam.cx
    v = cam.fy * vertices_cam[:, 1] / safe_z + cam.cy

    corners = vertices_cam[triangles]
    keep = np.all(z[triangles] > NEAR_PLANE_MM, axis=1)
    if cull_backfaces:
        cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        keep &= np.einsum("ij,ij->i", cross, corners[:, 0]) < 0.0

    for t in np.flatnonzero(keep):
        i0, i1, i2 = triangles[t]
        us = np.array([u[i0], u[i1], u[i2]])
        vs = np.array([v[i0], v[i1], v[i2]])
        u_lo = max(int(np.ceil(us.min())), 0)
        u_hi = min(int(np.floor(us.max())), w - 1)
        v_lo = max(int(np.ceil(vs.min())), 0)
        v_hi = min(int(np.floor(vs.max())), h - 1)
        if u_lo > u_hi or v_lo > v_hi:
            continue
        area = (us[1] - us[0]) * (vs[2] - vs[0]) - (us[2] - us[0]) * (vs[1] - vs[0])
        if abs(area) < 1e-12:
            continue
        pv, pu = np.mgrid[v_lo : v_hi + 1, u_lo : u_hi + 1].astype(np.float64)
        w0 = ((us[1] - pu) * (vs[2] - pv) - (us[2] - pu) * (vs[1] - pv)) / area
        w1 = ((us[2] - pu) * (vs[0] - pv) - (us[0] - pu) * (vs[2] - pv)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            continue
        zs = z[[i0, i1, i2]]
        inv = w0 / zs[0] + w1 / zs[1] + w2 / zs[2]
        frag_z = 1.0 / inv
        rows = pv[inside].astype(np.int64)
        cols = pu[inside].astype(np.int64)
        closer = frag_z[inside] < depth[rows, cols]
        if not closer.any():
            continue
        rows, cols = rows[closer], cols[closer]
        fz = frag_z[inside][closer]
        persp = np.stack(
            [
                w0[inside][closer] / zs[0],
                w1[inside][closer] / zs[1],
                w2[inside][closer] / zs[2],
            ],
            axis=1,
        ) * fz[:, None]
        depth[rows, cols] = fz
        tri_id[rows, cols] = t
        bary[rows, cols] = persp
    return Fragments(tri_id=tri_id, bary=bary, depth=depth)


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------


def cast_rays(
    origins: np.ndarray,
    directions: np.ndarray,
    vertices: np.ndarray,
    triangles: np.ndarray,
    t_min: float = 1e-9,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest two-sided Moller-Trumbore hit along ``origin + t * direction``.

    Returns ``(t, triangle)`` per ray; misses give ``inf`` and -1.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    corners = np.asarray(vertices, dtype=np.float64)[np.asarray(triangles, dtype=np.int64)]
    v0 = corners[:, 0]
    e1 = corners[:, 1] - v0
    e2 = corners[:, 2] - v0
    best_t = np.full(len(origins), np.inf)
    best_tri = np.full(len(origins), -1, dtype=np.int64)
    for start in range(0, len(origins), _RAY_CHUNK):
        o = origins[start : start + _RAY_CHUNK, None, :]
        d = directions[start : start + _RAY_CHUNK, None, :]
        p = np.cross(d, e2[None])
        det = np.einsum("rtk,tk->rt", p, e1)
        ok = np.abs(det) > 1e-15
        inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = o - v0[None]
        a = np.einsum("rtk,rtk->rt", s, p) * inv_det
        q = np.cross(s, e1[None])
        b = np.einsum("rtk,rtk->rt", d, q) * inv_det
        t = np.einsum("tk,rtk->rt", e2, q) * inv_det
        hit = ok & (a >= 0.0) & (b >= 0.0) & (a + b <= 1.0) & (t > t_min)
        t = np.where(hit, t, np.inf)
        idx = np.argmin(t, axis=1)
        rows = np.arange(len(idx))
        t_best = t[rows, idx]
        best_t[start : start + len(idx)] = t_best
        best_tri[start : start + len(idx)] = np.where(np.isfinite(t_best), idx, -1)
    return best_t, best_tri


def segment_occluded(
    points: np.ndarray,
    target: np.ndarray,
    vertices: np.ndarray,
    triangles: np.ndarray,
    epsilon: float = 1e-4,
) -> np.ndarray:
    """True where the open segment from each point to *target* crosses the mesh."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(target, dtype=np.float64)[None, :] - points
    t, _ = cast_rays(points, directions, vertices, triangles, t_min=epsilon)
    return t < 1.0 - epsilon


def ray_hits_triangles(
    origins: np.ndarray,
    directions: np.ndarray,
    corners: np.ndarray,
) -> np.ndarray:
    """Pairwise ray/triangle parameter ``t`` for ray k against triangle ``corners[k]`` (inf on miss)."""
    v0 = corners[:, 0]
    e1 = corners[:, 1] - v0
    e2 = corners[:, 2] - v0
    p = np.cross(directions, e2)
    det = np.einsum("ij,ij->i", p, e1)
    ok = np.abs(det) > 1e-15
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origins - v0
    a = np.einsum("ij,ij->i", s, p) * inv_det
    q = np.cross(s, e1)
    b = np.einsum("ij,ij->i", directions, q) * inv_det
    t = np.einsum("ij,ij->i", e2, q) * inv_det
    hit = ok & (a >= 0.0) & (b >= 0.0) & (a + b <= 1.0)
    return np.where(hit, t, np.inf)
