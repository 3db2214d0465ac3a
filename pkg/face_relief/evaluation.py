"""Reconstruction metrics: angular and cosine normal errors, 7-DOF alignment, point-to-point distance."""

from __future__ import annotations

import logging
from collections import defaultdict
from typing import Any, Iterable, Optional

import numpy as np
from scipy.spatial import cKDTree

from face_relief.errors import DegenerateGeometryError, DimensionMismatchError, EmptyMaskError, InputError
from face_relief.geometry import apply_similarity
from face_relief.models import ErrorReport, FaceMesh, NormalMap

logger = logging.getLogger(__name__)

ICP_MAX_ITERS = 30
ICP_OUTLIER_FACTOR = 3.0

_STATS = {"mean": float, "median": float, "rms": float, "units": str}

REPORT_SCHEMA: dict[str, Any] = {
    "record_id": str,
    "subset": str,
    "angular_error": _STATS,
    "cosine_error": float,
    "point_to_point": _STATS,
    "proxy_angular_error": _STATS,
}


def _report(values: np.ndarray, error_map: np.ndarray, units: str) -> ErrorReport:
    return ErrorReport(
        mean=float(np.mean(values)),
        median=float(np.median(values)),
        rms=float(np.sqrt(np.mean(values**2))),
        error_map=error_map,
        units=units,
    )


# ---------------------------------------------------------------------------
# Normal metrics
# ---------------------------------------------------------------------------


def _shared_mask(estimated: NormalMap, truth: NormalMap) -> np.ndarray:
    if estimated.mask.shape != truth.mask.shape:
        raise DimensionMismatchError(
            f"normal maps differ in size: {estimated.mask.shape} vs {truth.mask.shape}"
        )
    mask = estimated.mask & truth.mask
    if not mask.any():
        raise EmptyMaskError("normal maps share no pixel")
    return mask


def angular_error(estimated: NormalMap, truth: NormalMap) -> ErrorReport:
    """Per-pixel angle in degrees over the mask intersection."""
    mask = _shared_mask(estimated, truth)
    dots = np.einsum("ij,ij->i", estimated.normals[mask], truth.normals[mask])
    angles = np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))
    error_map = np.zeros(mask.shape)
    error_map[mask] = angles
    return _report(angles, error_map, "degrees")


def cosine_normal_error(estimated: NormalMap, truth: NormalMap) -> float:
    """Mean of 1 - n . n_hat over the shared mask; lies in [0, 2]."""
    mask = _shared_mask(estimated, truth)
    dots = np.einsum("ij,ij->i", estimated.normals[mask], truth.normals[mask])
    return float(np.mean(1.0 - dots))


# ---------------------------------------------------------------------------
# Alignment
# ---------------------------------------------------------------------------


def similarity_from_pairs(source: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Closed-form least-squares similarity with a proper rotation (det = +1)."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if len(source) < 3 or len(source) != len(target):
        raise DegenerateGeometryError("alignment needs at least 3 paired points")
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    src = source - mu_s
    dst = target - mu_t
    sv = np.linalg.svd(src, compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateGeometryError("alignment points are collinear or coincident")
    cov = dst.T @ src / len(source)
    u, d, vt = np.linalg.svd(cov)
    fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        fix[2] = -1.0
    rotation = u @ np.diag(fix) @ vt
    variance = float(np.mean(np.sum(src**2, axis=1)))
    scale = float(np.sum(d * fix) / variance)
    translation = mu_t - scale * rotation @ mu_s
    return scale, rotation, translation


def align_7dof(
    source: FaceMesh,
    target: FaceMesh,
    correspondences: Optional[np.ndarray] = None,
    max_iters: int = ICP_MAX_ITERS,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Similarity (s, R, t) taking *source* onto *target*.

    *correspondences* is an optional (k, 2) array of (source, target) vertex
    indices. Without it, ICP with mutual-nearest filtering and a
    median-based outlier cutoff estimates the pairs.
    """
    src = source.vertices
    dst = target.vertices
    if correspondences is not None:
        pairs = np.asarray(correspondences, dtype=np.int64)
        return similarity_from_pairs(src[pairs[:, 0]], dst[pairs[:, 1]])

    var_s = float(np.mean(np.sum((src - src.mean(axis=0)) ** 2, axis=1)))
    var_t = float(np.mean(np.sum((dst - dst.mean(axis=0)) ** 2, axis=1)))
    if var_s <= 0.0:
        raise DegenerateGeometryError("source vertices are coincident")
    scale = float(np.sqrt(var_t / var_s))
    rotation = np.eye(3)
    translation = dst.mean(axis=0) - scale * src.mean(axis=0)
    tree = cKDTree(dst)
    previous = np.inf
    for iteration in range(max_iters):
        moved = apply_similarity(src, scale, rotation, translation)
        dist, nearest = tree.query(moved)
        _, back = cKDTree(moved).query(dst[nearest])
        keep = back == np.arange(len(src))
        if keep.sum() >= 3:
            cutoff = ICP_OUTLIER_FACTOR * float(np.median(dist[keep]))
            keep &= dist <= max(cutoff, 1e-12)
        if keep.sum() < 3:
            keep = np.ones(len(src), dtype=bool)
        scale, rotation, translation = similarity_from_pairs(src[keep], dst[nearest[keep]])
        current = float(np.mean(dist[keep]))
        if abs(previous - current) <= 1e-10 * max(current, 1.0):
            logger.debug("ICP converged after %d iteration(s)", iteration + 1)
            break
        previous = current
    return scale, rotation, translation


def _shares_topology(a: FaceMesh, b: FaceMesh) -> bool:
    return a.n_vertices == b.n_vertices and np.array_equal(a.triangles, b.triangles)


def point_to_point_error(
    reconstructed: FaceMesh, truth: FaceMesh, align: bool = True
) -> ErrorReport:
    """Distance from each (aligned) reconstructed vertex to its nearest truth vertex, in mm."""
    if reconstructed.n_vertices == 0 or truth.n_vertices == 0:
        raise InputError("point-to-point error needs non-empty meshes")
    points = reconstructed.vertices
    if align:
        pairs = None
        if _shares_topology(reconstructed, truth):
            idx = np.arange(reconstructed.n_vertices)
            pairs = np.stack([idx, idx], axis=1)
        scale, rotation, translation = align_7dof(reconstructed, truth, pairs)
        points = apply_similarity(points, scale, rotation, translation)
    dist, _ = cKDTree(truth.vertices).query(points)
    return _report(dist, dist, "mm")


def vertex_geometry_error(estimated: FaceMesh, truth: FaceMesh) -> ErrorReport:
    """Per-vertex Euclidean distance between meshes of one topology (no alignment)."""
    if estimated.n_vertices != truth.n_vertices:
        raise DimensionMismatchError(
            f"meshes differ in vertex count: {estimated.n_vertices} vs {truth.n_vertices}"
        )
    dist = np.linalg.norm(estimated.vertices - truth.vertices, axis=1)
    return _report(dist, dist, "mm")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def validate_report(report: dict, schema: Optional[dict] = None, prefix: str = "") -> None:
    """Raise ``InputError`` when *report* misses a key or has a wrongly typed value."""
    schema = REPORT_SCHEMA if schema is None else schema
    for key, expected in schema.items():
        name = f"{prefix}{key}"
        if key not in report:
            raise InputError(f"report is missing '{name}'")
        value = report[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise InputError(f"report field '{name}' must be an object")
            validate_report(value, expected, prefix=f"{name}.")
        elif expected is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InputError(f"report field '{name}' must be a number")
        elif not isinstance(value, expected):
            raise InputError(f"report field '{name}' must be {expected.__name__}")


def aggregate(reports: Iterable[dict]) -> dict:
    """Average per-record means grouped by light subset."""
    groups: dict[str, list[dict]] = defaultdict(list)
    for report in reports:
        groups[report["subset"]].append(report)
    summary = {}
    for subset in sorted(groups):
        items = groups[subset]
        summary[subset] = {
            "records": sorted(r["record_id"] for r in items),
            "count": len(items),
            "angular_error_mean": float(np.mean([r["angular_error"]["mean"] for r in items])),
            "angular_error_median": float(np.mean([r["angular_error"]["median"] for r in items])),
            "cosine_error": float(np.mean([r["cosine_error"] for r in items])),
            "point_to_point_mean": float(np.mean([r["point_to_point"]["mean"] for r in items])),
            "proxy_angular_error_mean": float(
                np.mean([r["proxy_angular_error"]["mean"] for r in items])
            ),
        }
    return {"subsets": summary}
