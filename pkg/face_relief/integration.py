"""Height-field recovery from target normals by Gauss-Newton.

Z is depth along +z per masked pixel. Every pixel back-projects to
X = Z * ((u - cx) / fx, (v - cy) / fy, 1); its normal is the normalised sum of
cross products of the vectors to its four neighbours taken right, below, left,
above (counter-clockwise about +z), which points toward the camera on a
fronto-parallel plane. The solver minimises

    sum_interior |N(Z) - N_target|^2 + w1 |Z - Z0|^2 + w2 |L Z|^2

with L the 4-neighbour graph Laplacian of the mask.
"""

from __future__ import annotations

import logging
import math
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.linalg import LinearOperator, cg, spsolve

from face_relief.config import IntegrationSettings
from face_relief.errors import (
    DegenerateGeometryError,
    DimensionMismatchError,
    EmptyMaskError,
    GaugeError,
    InputError,
)
from face_relief.geometry import pixel_rays, posed_mesh, triangle_normals_and_centroids
from face_relief.models import (
    CameraIntrinsics,
    FaceMesh,
    HeightField,
    IntegrationResult,
    NormalMap,
    Pose,
    RefinementState,
)
from face_relief.objective_log import ObjectiveLog
from face_relief.raster import rasterize

logger = logging.getLogger(__name__)

# (du, dv) of the neighbours: right, below, left, above.
NEIGHBOUR_OFFSETS = ((1, 0), (0, 1), (-1, 0), (0, -1))


# ---------------------------------------------------------------------------
# Mask helpers
# ---------------------------------------------------------------------------


def prune_mask(mask: np.ndarray) -> np.ndarray:
    """Drop pixels without any 4-neighbour, then keep the largest 4-connected component."""
    mask = np.asarray(mask, dtype=bool)
    counts = _neighbour_presence(mask).sum(axis=0)
    mask = mask & (counts > 0)
    labels, n = ndimage.label(mask)
    if n <= 1:
        return mask
    sizes = ndimage.sum(mask, labels, index=np.arange(1, n + 1))
    return labels == (int(np.argmax(sizes)) + 1)


def _neighbour_presence(mask: np.ndarray) -> np.ndarray:
    """(4, H, W) booleans: neighbour k exists inside the mask."""
    h, w = mask.shape
    present = np.zeros((4, h, w), dtype=bool)
    for k, (du, dv) in enumerate(NEIGHBOUR_OFFSETS):
        shifted = np.zeros_like(mask)
        src_v = slice(max(dv, 0), h + min(dv, 0))
        src_u = slice(max(du, 0), w + min(du, 0))
        dst_v = slice(max(-dv, 0), h + min(-dv, 0))
        dst_u = slice(max(-du, 0), w + min(-du, 0))
        shifted[dst_v, dst_u] = mask[src_v, src_u]
        present[k] = mask & shifted
    return present


def interior_mask(mask: np.ndarray) -> np.ndarray:
    return _neighbour_presence(np.asarray(mask, dtype=bool)).all(axis=0)


def laplacian(mask: np.ndarray) -> sp.csr_matrix:
    """Graph Laplacian over masked pixels (row-major order); degree = masked neighbours."""
    mask = np.asarray(mask, dtype=bool)
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[mask] = np.arange(int(mask.sum()))
    present = _neighbour_presence(mask)
    rows, cols = [], []
    vv, uu = np.nonzero(mask)
    for k, (du, dv) in enumerate(NEIGHBOUR_OFFSETS):
        has = present[k][vv, uu]
        rows.append(index[vv[has], uu[has]])
        cols.append(index[vv[has] + dv, uu[has] + du])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    n = int(mask.sum())
    adjacency = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    return (sp.diags(degree) - adjacency).tocsr()


# ---------------------------------------------------------------------------
# Pixel normals
# ---------------------------------------------------------------------------


def back_project_heights(height: HeightField) -> np.ndarray:
    """(H, W, 3) camera-space points (zeros outside the mask)."""
    return pixel_rays(height.camera) * height.depth[:, :, None]


def pixel_normal_from_heights(height: HeightField, pixel) -> np.ndarray:
    """Unit normal at *pixel* = (u, v) from its back-projected 4-neighbourhood.

    Cross terms referencing a neighbour outside the mask are dropped.
    """
    u, v = int(pixel[0]), int(pixel[1])
    mask = height.mask
    if not (0 <= v < mask.shape[0] and 0 <= u < mask.shape[1]) or not mask[v, u]:
        raise InputError(f"pixel ({u}, {v}) is not inside the height-field mask")
    points = back_project_heights(height)
    centre = points[v, u]
    edges = []
    for du, dv in NEIGHBOUR_OFFSETS:
        nu, nv = u + du, v + dv
        if 0 <= nv < mask.shape[0] and 0 <= nu < mask.shape[1] and mask[nv, nu]:
            edges.append(points[nv, nu] - centre)
        else:
            edges.append(None)
    total = np.zeros(3)
    terms = 0
    for k in range(4):
        a, b = edges[(k + 1) % 4], edges[k]
        if a is not None and b is not None:
            total += np.cross(a, b)
            terms += 1
    norm = np.linalg.norm(total)
    if terms == 0 or norm == 0.0:
        raise DegenerateGeometryError(
            f"pixel ({u}, {v}) has too few adjacent neighbours for a normal"
        )
    return total / norm


def heightfield_normals(height: HeightField) -> NormalMap:
    """Pixel normals wherever at least one cross term exists (boundary-aware)."""
    mask = height.mask
    present = _neighbour_presence(mask)
    points = back_project_heights(height)
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2, 3))
    padded[1:-1, 1:-1] = points
    edges = []
    for du, dv in NEIGHBOUR_OFFSETS:
        edges.append(padded[1 + dv : h + 1 + dv, 1 + du : w + 1 + du] - points)
    total = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    for k in range(4):
        term = present[k] & present[(k + 1) % 4]
        total += np.where(term[:, :, None], np.cross(edges[(k + 1) % 4], edges[k]), 0.0)
        valid |= term
    norms = np.linalg.norm(total, axis=2)
    valid &= mask & (norms > 0.0)
    normals = np.zeros((h, w, 3))
    normals[valid] = total[valid] / norms[valid, None]
    return NormalMap(normals, valid)


class _InteriorStencil:
    """Indices of interior pixels and their neighbours in the unknown vector."""

    def __init__(self, mask: np.ndarray, cam: CameraIntrinsics) -> None:
        self.mask = mask
        index = np.full(mask.shape, -1, dtype=np.int64)
        index[mask] = np.arange(int(mask.sum()))
        interior = interior_mask(mask)
        vv, uu = np.nonzero(interior)
        self.interior = interior
        self.centre = index[vv, uu]
        self.neighbours = np.stack(
            [index[vv + dv, uu + du] for du, dv in NEIGHBOUR_OFFSETS], axis=0
        )  # (4, P)
        rays = pixel_rays(cam)
        self.rays = np.stack([rays[vv + dv, uu + du] for du, dv in NEIGHBOUR_OFFSETS], axis=0)  # (4, P, 3)

    def cross_sum(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """S = sum_k X_{k+1} x X_k (centre-independent) and the points X_k."""
        points = self.rays * z[self.neighbours][:, :, None]
        total = np.zeros(points.shape[1:])
        for k in range(4):
            total += np.cross(points[(k + 1) % 4], points[k])
        return total, points

    def normals(self, z: np.ndarray) -> np.ndarray:
        total, _ = self.cross_sum(z)
        return total / np.linalg.norm(total, axis=1, keepdims=True)

    def jacobian(self, z: np.ndarray, n_unknowns: int) -> tuple[np.ndarray, sp.csr_matrix]:
        """Normals (P, 3) and the sparse (3P, n) Jacobian dN/dZ."""
        total, points = self.cross_sum(z)
        norm = np.linalg.norm(total, axis=1)
        normals = total / norm[:, None]
        n_pix = len(norm)
        rows, cols, vals = [], [], []
        base = 3 * np.arange(n_pix)
        for k in range(4):
            # dS/dZ_k = r_k x (X_{k-1} - X_{k+1})
            ds = np.cross(self.rays[k], points[(k - 1) % 4] - points[(k + 1) % 4])
            dn = (ds - normals * np.einsum("ij,ij->i", normals, ds)[:, None]) / norm[:, None]
            for c in range(3):
                rows.append(base + c)
                cols.append(self.neighbours[k])
                vals.append(dn[:, c])
        jac = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(3 * n_pix, n_unknowns),
        )
        return normals, jac


# ---------------------------------------------------------------------------
# Gauss-Newton
# ---------------------------------------------------------------------------


def integrate(
    target: NormalMap,
    z0: HeightField,
    w1: float,
    w2: float,
    settings: Optional[IntegrationSettings] = None,
    log: Optional[ObjectiveLog] = None,
) -> IntegrationResult:
    """Minimise the normal, prior and Laplacian terms over the pruned mask."""
    settings = settings or IntegrationSettings()
    if target.mask.shape != z0.mask.shape:
        raise DimensionMismatchError("target normals and prior depth differ in size")
    if not np.array_equal(target.mask, z0.mask):
        raise InputError("target normals and prior depth must share one mask")
    for name, value in (("w1", w1), ("w2", w2)):
        if not (math.isfinite(value) and value >= 0.0):
            raise InputError(f"{name} must be finite and >= 0, got {value}")
    if w1 == 0.0 and w2 == 0.0:
        raise GaugeError("w1 = w2 = 0 leaves the depth gauge free; set w1 > 0")

    mask = prune_mask(z0.mask)
    if not mask.any():
        raise EmptyMaskError("height-field mask is empty after pruning")
    n = int(mask.sum())
    stencil = _InteriorStencil(mask, z0.camera)
    targets = target.normals[stencil.interior]
    prior = z0.depth[mask]
    lap = laplacian(mask)
    sw1, sw2 = math.sqrt(w1), math.sqrt(w2)

    def objective(z: np.ndarray) -> float:
        normal_term = float(np.sum((stencil.normals(z) - targets) ** 2)) if len(targets) else 0.0
        lz = lap @ z
        return normal_term + w1 * float(np.dot(z - prior, z - prior)) + w2 * float(np.dot(lz, lz))

    z = prior.copy()
    value = objective(z)
    history = [value]
    if log is not None:
        log.record("integration", 0, value)
    converged = False
    iterations = 0
    regulariser = sp.vstack([sw1 * sp.identity(n, format="csr"), sw2 * lap]).tocsr()
    for iterations in range(1, settings.max_iters + 1):
        normals, jac_n = stencil.jacobian(z, n)
        jac = sp.vstack([jac_n, regulariser]).tocsr()
        residual = np.concatenate(
            [(normals - targets).reshape(-1), sw1 * (z - prior), sw2 * (lap @ z)]
        )
        step = _solve_normal_equations(jac, residual, settings)
        accepted = False
        alpha = 1.0
        for _ in range(settings.max_halvings + 1):
            trial_z = z + alpha * step
            if np.all(trial_z > 0.0):
                trial = objective(trial_z)
                if math.isfinite(trial) and trial < value:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            converged = True
            iterations -= 1
            break
        change = (value - trial) / max(value, 1e-300)
        z, value = trial_z, trial
        history.append(value)
        if log is not None:
            log.record("integration", iterations, value, step=alpha)
        if change < settings.rel_tol:
            converged = True
            break
    if not converged:
        logger.warning(
            "Integration did not converge in %d iterations; returning best iterate (objective=%.6g)",
            settings.max_iters,
            value,
        )
    logger.info("Integration: %d iteration(s), objective=%.6g", iterations, value)
    depth = np.zeros(mask.shape)
    depth[mask] = z
    return IntegrationResult(
        height=HeightField(depth, mask, z0.camera),
        converged=converged,
        iterations=iterations,
        objective_history=history,
    )


def _solve_normal_equations(
    jac: sp.csr_matrix, residual: np.ndarray, settings: IntegrationSettings
) -> np.ndarray:
    """Gauss-Newton step from J^T J d = -J^T r (Jacobi-preconditioned CG, direct fallback)."""
    normal = (jac.T @ jac).tocsr()
    rhs = -(jac.T @ residual)
    diag = normal.diagonal()
    inv_diag = np.where(diag > 0.0, 1.0 / np.where(diag > 0.0, diag, 1.0), 1.0)
    precond = LinearOperator(normal.shape, matvec=lambda x: inv_diag * x, dtype=np.float64)
    step, info = cg(normal, rhs, rtol=settings.cg_rtol, maxiter=settings.cg_max_iter, M=precond)
    if info != 0:
        logger.debug("CG did not reach rtol (info=%d); falling back to a direct solve", info)
        step = spsolve(normal.tocsc(), rhs)
    return np.asarray(step, dtype=np.float64)


# ---------------------------------------------------------------------------
# Proxy maps and export
# ---------------------------------------------------------------------------


def rasterize_target_normals(
    state: RefinementState, mesh: FaceMesh, pose: Pose, cam: CameraIntrinsics
) -> NormalMap:
    """Per-pixel refined normal of the z-buffer winner; mask = proxy coverage.

    Pixels whose refined normal has z >= 0 are left out of the mask.
    """
    posed = posed_mesh(mesh, pose)
    fragments = rasterize(posed.vertices, posed.triangles, cam)
    mask = fragments.mask
    if not mask.any():
        raise EmptyMaskError("proxy covers no pixel")
    per_triangle, _ = triangle_normals_and_centroids(posed)
    per_triangle = per_triangle.copy()
    per_triangle[state.visible_set] = state.normals_hat
    normals = np.zeros(mask.shape + (3,))
    normals[mask] = per_triangle[fragments.tri_id[mask]]
    away = mask & (normals[:, :, 2] >= 0.0)
    if away.any():
        logger.warning(
            "Dropping %d target pixel(s) whose refined normal faces away from the camera",
            int(away.sum()),
        )
        mask = mask & ~away
        normals[away] = 0.0
    return NormalMap(normals, mask)


def proxy_depth(mesh: FaceMesh, pose: Pose, cam: CameraIntrinsics) -> HeightField:
    """Z-buffer depth of the posed mesh over its coverage."""
    posed = posed_mesh(mesh, pose)
    fragments = rasterize(posed.vertices, posed.triangles, cam)
    mask = fragments.mask
    if not mask.any():
        raise EmptyMaskError("mesh covers no pixel")
    return HeightField(np.where(mask, fragments.depth, 0.0), mask, cam)


def restrict(normals: NormalMap, mask: np.ndarray) -> NormalMap:
    mask = np.asarray(mask, dtype=bool) & normals.mask
    return NormalMap(np.where(mask[:, :, None], normals.normals, 0.0), mask, normals.camera_facing)


def heightfield_to_mesh(height: HeightField) -> FaceMesh:
    """Back-project masked pixels; two triangles per fully masked 2x2 pixel quad; white albedo."""
    mask = height.mask
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[mask] = np.arange(int(mask.sum()))
    vertices = back_project_heights(height)[mask]
    quad = mask[:-1, :-1] & mask[:-1, 1:] & mask[1:, :-1] & mask[1:, 1:]
    vv, uu = np.nonzero(quad)
    a = index[vv, uu]
    b = index[vv, uu + 1]
    d = index[vv + 1, uu]
    e = index[vv + 1, uu + 1]
    triangles = np.stack(
        [np.stack([a, d, b], axis=1), np.stack([b, d, e], axis=1)], axis=1
    ).reshape(-1, 3)
    return FaceMesh(vertices, triangles, np.ones_like(vertices))
