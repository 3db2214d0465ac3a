"""Synthetic capture sampling: coefficients, pose, near lights, renders and ground truth.

A record is a deterministic function of the model and its ``SampleSpec``.
Each draw uses ``default_rng([seed, attempt])``; a face that lands behind
the camera (or outside the image) is redrawn with the next attempt index.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from face_relief.errors import BehindCameraError, DimensionMismatchError, InputError
from face_relief.face_model import synthesize_face
from face_relief.formats import dumps_json
from face_relief.geometry import posed_mesh, transform_points, vertex_normals
from face_relief.models import (
    N_EXP,
    N_ID,
    CameraIntrinsics,
    DatasetRecord,
    FaceMesh,
    HeightField,
    LinearFaceModel,
    NormalMap,
    PointLight,
    Pose,
)
from face_relief.raster import NEAR_PLANE_MM, rasterize
from face_relief.renderer import RenderOptions, render_lights, surface_normals

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 10

# Directions from the face centre toward the front, left and right lights
# (camera frame: +x right, +y down, the camera looks along +z). The front light
# sits above the camera, the side lights slightly below it; a shared elevation
# would make the directions near coplanar and vertical tilt unobservable.
_BASE_DIRECTIONS = (
    (0.0, -0.7, -1.0),
    (-1.0, 0.3, -1.0),
    (1.0, 0.3, -1.0),
)
_ARC_AZIMUTH_DEG = 45.0
_ARC_ELEVATIONS_DEG = (30.0, -10.0)


@dataclass(frozen=True)
class SampleSpec:
    """Sampling parameters of one synthetic record. Angles in degrees, lengths in mm."""

    seed: int
    n_lights: int = 3
    id_std: float = 1.0
    exp_std: float = 1.0
    albedo_std: float = 1.0
    pitch_range: float = 8.0
    yaw_range: float = 12.0
    roll_range: float = 5.0
    translation_jitter_mm: float = 10.0
    light_jitter: float = 0.1
    resolution: int = 128
    focal_ratio: float = 4.2
    base_distance_mm: float = 1000.0
    light_distance_mm: float = 600.0
    detail_amplitude_mm: float = 0.5
    detail_wavelength_mm: tuple[float, float] = (25.0, 45.0)
    detail_waves: int = 6
    albedo_texture_noise: float = 0.0
    proxy_k_id: int = 10
    proxy_k_exp: int = 5
    proxy_noise_deg: float = 0.0
    cast_shadows: bool = False

    def __post_init__(self) -> None:
        if self.n_lights < 1:
            raise InputError(f"n_lights must be >= 1, got {self.n_lights}")
        for name in (
            "id_std",
            "exp_std",
            "albedo_std",
            "pitch_range",
            "yaw_range",
            "roll_range",
            "translation_jitter_mm",
            "light_jitter",
            "detail_amplitude_mm",
            "albedo_texture_noise",
            "proxy_noise_deg",
        ):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise InputError(f"{name} must be finite and >= 0, got {value}")
        if self.resolution < 8:
            raise InputError(f"resolution must be >= 8, got {self.resolution}")
        if self.light_jitter >= 1.0:
            raise InputError("light_jitter must be < 1")
        lo, hi = self.detail_wavelength_mm
        if not (0.0 < lo <= hi):
            raise InputError(f"detail_wavelength_mm must satisfy 0 < lo <= hi, got {lo}, {hi}")
        object.__setattr__(self, "detail_wavelength_mm", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detail_wavelength_mm"] = list(self.detail_wavelength_mm)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SampleSpec":
        known = set(cls.__dataclass_fields__)
        kwargs = {k: v for k, v in d.items() if k in known}
        if "detail_wavelength_mm" in kwargs:
            kwargs["detail_wavelength_mm"] = tuple(kwargs["detail_wavelength_mm"])
        return cls(**kwargs)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        return hashlib.sha256(dumps_json(self.to_dict())).hexdigest()

    def camera(self) -> CameraIntrinsics:
        f = self.focal_ratio * self.resolution
        c = (self.resolution - 1) / 2.0
        return CameraIntrinsics(f, f, c, c, self.resolution, self.resolution)


# ---------------------------------------------------------------------------
# Sampling pieces
# ---------------------------------------------------------------------------


def draw_coefficients(model: LinearFaceModel, spec: SampleSpec, rng: np.random.Generator) -> dict:
    return {
        "alpha_id": rng.standard_normal(model.basis_id.shape[1]) * spec.id_std,
        "alpha_exp": rng.standard_normal(model.basis_exp.shape[1]) * spec.exp_std,
        "alpha_albedo": rng.standard_normal(model.basis_albedo.shape[1]) * spec.albedo_std,
    }


def draw_pose(spec: SampleSpec, rng: np.random.Generator) -> Pose:
    pitch, yaw, roll = (
        math.radians(rng.uniform(-r, r)) if r > 0 else 0.0
        for r in (spec.pitch_range, spec.yaw_range, spec.roll_range)
    )
    jitter = rng.uniform(-1.0, 1.0, 3) * spec.translation_jitter_mm
    translation = np.array([0.0, 0.0, spec.base_distance_mm]) + jitter
    return Pose(pitch=pitch, yaw=yaw, roll=roll, translation=translation)


def base_light_directions(n_lights: int) -> np.ndarray:
    """Front, left, right; more lights spread across the frontal arc.

    Arc lights alternate between a raised and a lowered elevation.
    """
    if n_lights <= len(_BASE_DIRECTIONS):
        dirs = np.array(_BASE_DIRECTIONS[:n_lights])
    else:
        azimuth = np.radians(np.linspace(-_ARC_AZIMUTH_DEG, _ARC_AZIMUTH_DEG, n_lights))
        elevation = np.radians(np.resize(_ARC_ELEVATIONS_DEG, n_lights))
        dirs = np.stack(
            [
                np.sin(azimuth) * np.cos(elevation),
                -np.sin(elevation),
                -np.cos(azimuth) * np.cos(elevation),
            ],
            axis=1,
        )
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def draw_lights(center: np.ndarray, spec: SampleSpec, rng: np.random.Generator) -> list[PointLight]:
    """Lights at ``light_distance_mm`` from *center*, position and illumination jittered."""
    lights = []
    nominal_beta = spec.light_distance_mm**2
    for direction in base_light_directions(spec.n_lights):
        offset = spec.light_distance_mm * direction
        offset = offset + rng.uniform(-1.0, 1.0, 3) * spec.light_jitter * spec.light_distance_mm
        beta = nominal_beta * (1.0 + rng.uniform(-1.0, 1.0) * spec.light_jitter)
        lights.append(PointLight(center + offset, beta))
    return lights


def add_detail(
    mesh: FaceMesh,
    rng: np.random.Generator,
    amplitude_mm: float,
    wavelength_mm: tuple[float, float],
    n_waves: int,
) -> FaceMesh:
    """Displace vertices along their normals by a sum of planar sinusoids over (x, y)."""
    if amplitude_mm <= 0.0 or n_waves <= 0:
        return mesh
    angles = rng.uniform(0.0, 2.0 * np.pi, n_waves)
    wavelengths = rng.uniform(wavelength_mm[0], wavelength_mm[1], n_waves)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_waves)
    directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    xy = mesh.vertices[:, :2]
    arg = 2.0 * np.pi * (xy @ directions.T) / wavelengths[None, :] + phases[None, :]
    height = amplitude_mm * np.sin(arg).sum(axis=1) / math.sqrt(n_waves)
    return mesh.with_vertices(mesh.vertices + height[:, None] * vertex_normals(mesh))


def texture_albedo(mesh: FaceMesh, rng: np.random.Generator, noise: float) -> FaceMesh:
    if noise <= 0.0:
        return mesh
    factor = 1.0 + noise * rng.standard_normal(mesh.n_vertices)
    return mesh.with_albedo(np.clip(mesh.albedo * factor[:, None], 0.0, 1.0))


def make_proxy(
    truth: FaceMesh,
    model: LinearFaceModel,
    k_id: int,
    k_exp: int,
    noise_deg: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> FaceMesh:
    """Coarse face: *truth* projected onto the leading shape columns, plus normal-direction noise.

    The noise standard deviation is ``tan(noise_deg)`` times the mean edge length.
    The proxy carries the model's mean albedo.
    """
    if truth.n_vertices != model.n_vertices or not np.array_equal(truth.triangles, model.triangles):
        raise DimensionMismatchError("proxy construction needs a mesh with the model's topology")
    if not (0 <= k_id <= N_ID and 0 <= k_exp <= N_EXP):
        raise InputError(f"k_id / k_exp out of range: {k_id}, {k_exp}")
    if not (math.isfinite(noise_deg) and noise_deg >= 0.0):
        raise InputError(f"noise_deg must be finite and >= 0, got {noise_deg}")
    basis = np.concatenate([model.basis_id[:, :k_id], model.basis_exp[:, :k_exp]], axis=1)
    offset = truth.vertices.reshape(-1) - model.mean_shape
    shape = model.mean_shape.copy()
    if basis.shape[1]:
        coeffs, *_ = np.linalg.lstsq(basis, offset, rcond=None)
        shape += basis @ coeffs
    proxy = FaceMesh(
        shape.reshape(-1, 3),
        model.triangles,
        np.clip(model.mean_albedo.reshape(-1, 3), 0.0, 1.0),
    )
    if noise_deg > 0.0:
        rng = rng if rng is not None else np.random.default_rng(0)
        corners = proxy.vertices[proxy.triangles]
        edges = np.linalg.norm(corners - np.roll(corners, 1, axis=1), axis=2)
        sigma = math.tan(math.radians(noise_deg)) * float(edges.mean())
        shift = rng.normal(0.0, sigma, proxy.n_vertices)
        proxy = proxy.with_vertices(proxy.vertices + shift[:, None] * vertex_normals(proxy))
    return proxy


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


def _in_view(posed: FaceMesh, cam: CameraIntrinsics) -> bool:
    if np.any(posed.vertices[:, 2] <= NEAR_PLANE_MM):
        return False
    z = posed.vertices[:, 2]
    u = cam.fx * posed.vertices[:, 0] / z + cam.cx
    v = cam.fy * posed.vertices[:, 1] / z + cam.cy
    return bool(
        u.min() >= 0.0 and u.max() <= cam.width - 1 and v.min() >= 0.0 and v.max() <= cam.height - 1
    )


def sample_record(model: LinearFaceModel, spec: SampleSpec) -> DatasetRecord:
    """Draw, render and package one record; identical inputs give identical arrays."""
    cam = spec.camera()
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([spec.seed, attempt])
        coefficients = draw_coefficients(model, spec, rng)
        pose = draw_pose(spec, rng)
        face = synthesize_face(
            model, coefficients["alpha_id"], coefficients["alpha_exp"], coefficients["alpha_albedo"]
        )
        truth = add_detail(
            face, rng, spec.detail_amplitude_mm, spec.detail_wavelength_mm, spec.detail_waves
        )
        truth = texture_albedo(truth, rng, spec.albedo_texture_noise)
        posed = posed_mesh(truth, pose)
        if _in_view(posed, cam):
            break
        logger.warning("Seed %d attempt %d: face outside the view, resampling", spec.seed, attempt)
    else:
        raise BehindCameraError(f"seed {spec.seed}: no in-view face after {MAX_ATTEMPTS} attempts")

    center = transform_points(truth.vertices.mean(axis=0, keepdims=True), pose)[0]
    lights = draw_lights(center, spec, rng)
    fragments = rasterize(posed.vertices, posed.triangles, cam)
    mask = fragments.mask
    images = render_lights(
        truth, pose, cam, lights, RenderOptions(cast_shadows=spec.cast_shadows), fragments=fragments
    )
    gt_normals = NormalMap(surface_normals(posed, fragments, smooth=True), mask)
    gt_depth = HeightField(np.where(mask, fragments.depth, 0.0), mask, cam)
    proxy = make_proxy(truth, model, spec.proxy_k_id, spec.proxy_k_exp, spec.proxy_noise_deg, rng)
    logger.debug("Sampled record seed=%d attempt=%d covered=%d", spec.seed, attempt, int(mask.sum()))
    return DatasetRecord(
        images=images,
        lights=lights,
        camera=cam,
        pose=pose,
        gt_mesh=truth,
        gt_normals=gt_normals,
        gt_depth=gt_depth,
        proxy=proxy,
        seed=spec.seed,
        spec_hash=spec.digest(),
        coefficients={k: [float(x) for x in v] for k, v in coefficients.items()},
    )
