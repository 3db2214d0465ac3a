"""Linear parametric face model: synthesis and the bundled procedural toy model.

Real BFM / FaceWarehouse assets are license-restricted, so the bundled model
is generated: a smooth ellipsoidal face mean plus smooth random orthogonal
bases with decaying scales. Basis dimensions match (100, 79, 100).

Coefficient vectors are interleaved per vertex: ``[x0, y0, z0, x1, ...]``.
The model frame has the face looking toward -z, chin toward +y.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from face_relief.errors import DimensionMismatchError, InputError
from face_relief.models import N_ALBEDO, N_EXP, N_ID, FaceMesh, LinearFaceModel

logger = logging.getLogger(__name__)

DEFAULT_GRID = 80
FACE_HALF_WIDTH_MM = 75.0
FACE_HALF_HEIGHT_MM = 95.0
FACE_DEPTH_MM = 50.0

# Per-vertex RMS displacement (mm) / albedo change of the leading basis column.
ID_RMS_MM = 2.5
EXP_RMS_MM = 1.2
ALBEDO_RMS = 0.04
_DECAY = 0.7
_FREQUENCIES = 8


def synthesize_face(
    model: LinearFaceModel,
    alpha_id: np.ndarray,
    alpha_exp: np.ndarray,
    alpha_albedo: np.ndarray,
) -> FaceMesh:
    """Geometry and albedo for one coefficient triple; albedo clamped to [0, 1]."""
    alpha_id = np.asarray(alpha_id, dtype=np.float64).reshape(-1)
    alpha_exp = np.asarray(alpha_exp, dtype=np.float64).reshape(-1)
    alpha_albedo = np.asarray(alpha_albedo, dtype=np.float64).reshape(-1)
    for name, alpha, basis in (
        ("alpha_id", alpha_id, model.basis_id),
        ("alpha_exp", alpha_exp, model.basis_exp),
        ("alpha_albedo", alpha_albedo, model.basis_albedo),
    ):
        if alpha.shape[0] != basis.shape[1]:
            raise DimensionMismatchError(
                f"{name} has {alpha.shape[0]} entries, basis has {basis.shape[1]} columns"
            )
    geometry = model.mean_shape + model.basis_id @ alpha_id + model.basis_exp @ alpha_exp
    albedo = model.mean_albedo + model.basis_albedo @ alpha_albedo
    return FaceMesh(
        geometry.reshape(-1, 3),
        model.triangles,
        np.clip(albedo.reshape(-1, 3), 0.0, 1.0),
    )


def synthesize_geometry(
    model: LinearFaceModel, alpha_id: np.ndarray, alpha_exp: np.ndarray
) -> np.ndarray:
    """Unclamped vertex array (n, 3) for shape coefficients only."""
    return (model.mean_shape + model.basis_id @ alpha_id + model.basis_exp @ alpha_exp).reshape(-1, 3)


# ---------------------------------------------------------------------------
# Procedural toy model
# ---------------------------------------------------------------------------


def grid_triangles(rows: int, cols: int) -> np.ndarray:
    """Two triangles per grid quad, wound so normals face -z for a +x/+y grid."""
    r, c = np.mgrid[0 : rows - 1, 0 : cols - 1]
    a = (r * cols + c).reshape(-1)
    b = a + 1
    d = a + cols
    e = d + 1
    first = np.stack([a, d, b], axis=1)
    second = np.stack([b, d, e], axis=1)
    return np.stack([first, second], axis=1).reshape(-1, 3).astype(np.int64)


def _face_parameters(grid: int) -> tuple[np.ndarray, np.ndarray]:
    t, s = np.mgrid[0:grid, 0:grid].astype(np.float64)
    s = 2.0 * s / (grid - 1) - 1.0
    t = 2.0 * t / (grid - 1) - 1.0
    return s.reshape(-1), t.reshape(-1)


def _mean_geometry(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    x = FACE_HALF_WIDTH_MM * s
    y = FACE_HALF_HEIGHT_MM * t
    z = -FACE_DEPTH_MM * (1.0 - 0.55 * s**2 - 0.35 * t**2)
    nose = np.exp(-((s / 0.16) ** 2 + ((t + 0.02) / 0.3) ** 2))
    sockets = np.exp(-(((np.abs(s) - 0.38) / 0.14) ** 2 + ((t + 0.28) / 0.11) ** 2))
    brow = np.exp(-((t + 0.45) / 0.08) ** 2) * np.exp(-(s / 0.6) ** 2)
    lips = np.exp(-((s / 0.25) ** 2 + ((t - 0.45) / 0.08) ** 2))
    z = z - 16.0 * nose + 6.0 * sockets - 3.0 * brow - 3.0 * lips
    return np.stack([x, y, z], axis=1)


def _mean_albedo(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    skin = np.array([0.78, 0.58, 0.48])
    lips = np.exp(-((s / 0.25) ** 2 + ((t - 0.45) / 0.06) ** 2))[:, None]
    brows = (np.exp(-((t + 0.45) / 0.05) ** 2) * np.exp(-((np.abs(s) - 0.35) / 0.2) ** 2))[:, None]
    albedo = skin * (1.0 - 0.25 * brows) + lips * np.array([0.05, -0.12, -0.08])
    return np.clip(albedo, 0.05, 0.95)


def _smooth_fields(s: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosine fields over the face parameter square and their frequency index."""
    fields = []
    freq = []
    for a in range(_FREQUENCIES):
        for b in range(_FREQUENCIES):
            fields.append(np.cos(a * np.pi * (s + 1) / 2) * np.cos(b * np.pi * (t + 1) / 2))
            freq.append(a + b)
    return np.stack(fields, axis=1), np.array(freq, dtype=np.float64)


def _orthogonal_basis(
    fields: np.ndarray,
    freq: np.ndarray,
    n_columns: int,
    rms: float,
    rng: np.random.Generator,
    window: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Random smooth vector fields, orthonormalised, scaled with decaying RMS."""
    n_v, n_f = fields.shape
    if window is not None:
        fields = fields * window[:, None]
    weights = 1.0 / (1.0 + freq)
    blocks = np.zeros((3 * n_v, 3 * n_f))
    for axis in range(3):
        blocks[axis::3, axis * n_f : (axis + 1) * n_f] = fields
    mixing = rng.standard_normal((3 * n_f, n_columns)) * np.tile(weights, 3)[:, None]
    q, _ = np.linalg.qr(blocks @ mixing)
    scales = rms * np.sqrt(3 * n_v) * (1.0 + np.arange(n_columns)) ** (-_DECAY)
    return q * scales[None, :]


def build_toy_model(grid: int = DEFAULT_GRID, seed: int = 0) -> LinearFaceModel:
    """Deterministic procedural face model on a ``grid`` x ``grid`` vertex lattice."""
    if grid < 6:
        raise InputError(f"toy model grid must be >= 6 vertices per side, got {grid}")
    rng = np.random.default_rng(seed)
    s, t = _face_parameters(grid)
    fields, freq = _smooth_fields(s, t)
    mouth = np.exp(-((t - 0.45) / 0.3) ** 2) + 0.6 * np.exp(-((t + 0.3) / 0.2) ** 2)
    basis_id = _orthogonal_basis(fields, freq, N_ID, ID_RMS_MM, rng)
    basis_exp = _orthogonal_basis(fields, freq, N_EXP, EXP_RMS_MM, rng, window=mouth)
    basis_albedo = _orthogonal_basis(fields, freq, N_ALBEDO, ALBEDO_RMS, rng)
    logger.info("Built toy face model: %d vertices, seed=%d", grid * grid, seed)
    return LinearFaceModel(
        mean_shape=_mean_geometry(s, t).reshape(-1),
        mean_albedo=_mean_albedo(s, t).reshape(-1),
        basis_id=basis_id,
        basis_exp=basis_exp,
        basis_albedo=basis_albedo,
        triangles=grid_triangles(grid, grid),
    )
