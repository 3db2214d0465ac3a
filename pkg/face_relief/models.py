"""Data models used across the Face Relief package.

All lengths are millimetres in camera space (right-handed, +z into the scene,
image y grows downward). Arrays are float64 unless noted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from face_relief.errors import DimensionMismatchError, InputError

# Basis column counts of the parametric face model.
N_ID = 100
N_EXP = 79
N_ALBEDO = 100


def _as_vec3(value: Any, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise DimensionMismatchError(f"{name} must be a 3-vector, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Camera and pose
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; pixel centres sit at integer coordinates."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise InputError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InputError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """Euler pose; R = R_z(roll) . R_y(yaw) . R_x(pitch), X_cam = R X + t."""

    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "translation", _as_vec3(self.translation, "translation"))

    @property
    def rotation(self) -> np.ndarray:
        from face_relief.geometry import rotation_matrix

        return rotation_matrix(self.pitch, self.yaw, self.roll)

    def to_dict(self) -> dict:
        return {
            "pitch": self.pitch,
            "yaw": self.yaw,
            "roll": self.roll,
            "translation": [float(x) for x in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(
            pitch=float(d.get("pitch", 0.0)),
            yaw=float(d.get("yaw", 0.0)),
            roll=float(d.get("roll", 0.0)),
            translation=np.asarray(d.get("translation", [0.0, 0.0, 0.0]), dtype=np.float64),
        )


# ---------------------------------------------------------------------------
# Lights and meshes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointLight:
    """Near point light at *position* with scalar illumination (beta)."""

    position: np.ndarray
    illumination: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _as_vec3(self.position, "light position"))
        if not (math.isfinite(self.illumination) and self.illumination > 0):
            raise InputError(f"light illumination must be > 0, got {self.illumination}")

    def scaled(self, factor: float) -> "PointLight":
        return PointLight(self.position.copy(), self.illumination * factor)

    def to_dict(self) -> dict:
        return {"position": [float(x) for x in self.position], "beta": float(self.illumination)}

    @classmethod
    def from_dict(cls, d: dict) -> "PointLight":
        return cls(np.asarray(d["position"], dtype=np.float64), float(d["beta"]))


@dataclass(frozen=True, eq=False)
class FaceMesh:
    """Triangle mesh with per-vertex RGB albedo in [0, 1].

    Triangles wind counter-clockwise seen from outside. Degenerate triangles
    are reported by ``geometry.triangle_normals_and_centroids``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    albedo: np.ndarray

    def __post_init__(self) -> None:
        vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        albedo = np.ascontiguousarray(self.albedo, dtype=np.float64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise DimensionMismatchError(f"vertices must be (n, 3), got {vertices.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise DimensionMismatchError(f"triangles must be (m, 3), got {triangles.shape}")
        if albedo.shape != vertices.shape:
            raise DimensionMismatchError(
                f"albedo shape {albedo.shape} does not match vertices {vertices.shape}"
            )
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise InputError("triangle index out of range")
        if albedo.size and (albedo.min() < 0.0 or albedo.max() > 1.0):
            raise InputError("albedo channels must lie in [0, 1]")
        for name, arr in (("vertices", vertices), ("triangles", triangles), ("albedo", albedo)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    def with_vertices(self, vertices: np.ndarray) -> "FaceMesh":
        return FaceMesh(vertices, self.triangles, self.albedo)

    def with_albedo(self, albedo: np.ndarray) -> "FaceMesh":
        return FaceMesh(self.vertices, self.triangles, albedo)


@dataclass(frozen=True, eq=False)
class LinearFaceModel:
    """Mean shape / albedo plus identity, expression and albedo bases."""

    mean_shape: np.ndarray
    mean_albedo: np.ndarray
    basis_id: np.ndarray
    basis_exp: np.ndarray
    basis_albedo: np.ndarray
    triangles: np.ndarray

    def __post_init__(self) -> None:
        n3 = np.asarray(self.mean_shape).reshape(-1).shape[0]
        if n3 % 3:
            raise DimensionMismatchError("mean_shape length must be a multiple of 3")
        expected = {
            "basis_id": (n3, N_ID),
            "basis_exp": (n3, N_EXP),
            "basis_albedo": (n3, N_ALBEDO),
        }
        object.__setattr__(self, "mean_shape", np.asarray(self.mean_shape, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "mean_albedo", np.asarray(self.mean_albedo, dtype=np.float64).reshape(-1))
        if self.mean_albedo.shape != (n3,):
            raise DimensionMismatchError("mean_albedo must match mean_shape length")
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise DimensionMismatchError(f"{name} must be {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        tris = np.asarray(self.triangles, dtype=np.int64)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise DimensionMismatchError("triangles must be (m, 3)")
        if tris.size and (tris.min() < 0 or tris.max() >= n3 // 3):
            raise InputError("model triangle index out of range")
        object.__setattr__(self, "triangles", tris)

    @property
    def n_vertices(self) -> int:
        return self.mean_shape.shape[0] // 3


# ---------------------------------------------------------------------------
# Images and per-pixel maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RadianceImage:
    """Linear RGB float image with a coverage mask."""

    pixels: np.ndarray
    mask: np.ndarray
    status: str = "ok"

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise DimensionMismatchError(f"pixels must be (H, W, 3), got {pixels.shape}")
        if mask.shape != pixels.shape[:2]:
            raise DimensionMismatchError(
                f"mask shape {mask.shape} does not match image {pixels.shape[:2]}"
            )
        if pixels.size and np.nanmin(pixels) < 0.0:
            raise InputError("radiance values must be non-negative")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "mask", mask)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


@dataclass(frozen=True, eq=False)
class VisibilitySets:
    """``available[i, j]`` is True when light j lights triangle i (half-space filter)."""

    available: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "available", np.asarray(self.available, dtype=bool))

    @property
    def n_lights(self) -> int:
        return int(self.available.shape[1])

    def members(self, triangle: int) -> set[int]:
        return set(np.flatnonzero(self.available[triangle]).tolist())

    def sets(self) -> list[set[int]]:
        return [self.members(i) for i in range(self.available.shape[0])]


@dataclass(frozen=True, eq=False)
class NormalMap:
    """Unit normals per masked pixel, camera space; zero outside the mask.

    Surface normal maps face the camera (z < 0 on the mask). Pass
    ``camera_facing=False`` for arbitrary direction fields.
    """

    normals: np.ndarray
    mask: np.ndarray
    camera_facing: bool = True

    def __post_init__(self) -> None:
        normals = np.asarray(self.normals, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if normals.ndim != 3 or normals.shape[2] != 3 or normals.shape[:2] != mask.shape:
            raise DimensionMismatchError(
                f"normal map {normals.shape} does not match mask {mask.shape}"
            )
        if mask.any():
            norms = np.linalg.norm(normals[mask], axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-6:
                raise InputError("normal map contains non-unit normals on its mask")
            if self.camera_facing and np.any(normals[mask][:, 2] >= 0.0):
                count = int(np.sum(normals[mask][:, 2] >= 0.0))
                raise InputError(f"normal map has {count} normal(s) with z >= 0 on its mask")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True, eq=False)
class HeightField:
    """Depth along +z per masked pixel (0 outside the mask)."""

    depth: np.ndarray
    mask: np.ndarray
    camera: CameraIntrinsics

    def __post_init__(self) -> None:
        depth = np.asarray(self.depth, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if depth.shape != mask.shape:
            raise DimensionMismatchError(
                f"depth shape {depth.shape} does not match mask {mask.shape}"
            )
        if depth.shape != (self.camera.height, self.camera.width):
            raise DimensionMismatchError("height field does not match camera image size")
        if mask.any() and np.min(depth[mask]) <= 0.0:
            raise InputError("height field depth must be positive on its mask")
        object.__setattr__(self, "depth", np.where(mask, depth, 0.0))
        object.__setattr__(self, "mask", mask)


# ---------------------------------------------------------------------------
# Solver state and reports
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ObservedIntensities:
    """Intensities sampled at triangle centroids, one column per light."""

    values: np.ndarray  # (k, n_lights, 3)
    observed: np.ndarray  # (k, n_lights) bool


@dataclass(eq=False)
class RefinementState:
    """Refined normals and albedos over the visible triangles of a proxy.

    Rows follow ``visible_set``. Normals, centroids and prior normals are
    camera-space.
    """

    normals_hat: np.ndarray
    albedo_hat: np.ndarray
    visible_set: np.ndarray
    one_rings: list[np.ndarray]
    centroids: np.ndarray
    prior_normals: np.ndarray
    photometric_scale: float = 1.0
    albedo_scale: float = 1.0
    flagged: Optional[np.ndarray] = None
    objective_history: list[float] = field(default_factory=list)

    def copy(self) -> "RefinementState":
        return RefinementState(
            normals_hat=self.normals_hat.copy(),
            albedo_hat=self.albedo_hat.copy(),
            visible_set=self.visible_set,
            one_rings=self.one_rings,
            centroids=self.centroids,
            prior_normals=self.prior_normals,
            photometric_scale=self.photometric_scale,
            albedo_scale=self.albedo_scale,
            flagged=None if self.flagged is None else self.flagged.copy(),
            objective_history=list(self.objective_history),
        )


@dataclass(eq=False)
class CalibrationProblem:
    """Proxy, camera and one observation per light to calibrate against."""

    proxy: FaceMesh
    pose: Pose
    cam: CameraIntrinsics
    observations: list[RadianceImage]
    initial_lights: list[PointLight]

    def __post_init__(self) -> None:
        if not self.observations:
            raise InputError("calibration needs at least one observation")
        if len(self.observations) != len(self.initial_lights):
            raise DimensionMismatchError(
                f"{len(self.observations)} observations but "
                f"{len(self.initial_lights)} initial lights"
            )


@dataclass
class CalibrationReport:
    rms_residual: float
    objective_history: list[float]
    outer_objectives: list[float]
    n_residuals: int
    triangles_per_light: list[int]

    def to_dict(self) -> dict:
        return {
            "rms_residual": self.rms_residual,
            "objective_history": list(self.objective_history),
            "outer_objectives": list(self.outer_objectives),
            "n_residuals": self.n_residuals,
            "triangles_per_light": list(self.triangles_per_light),
        }


@dataclass(eq=False)
class IntegrationResult:
    height: HeightField
    converged: bool
    iterations: int
    objective_history: list[float]


@dataclass(eq=False)
class ErrorReport:
    """Summary statistics of a per-pixel or per-vertex error map."""

    mean: float
    median: float
    rms: float
    error_map: np.ndarray
    units: str

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "median": self.median,
            "rms": self.rms,
            "units": self.units,
        }


# ---------------------------------------------------------------------------
# Dataset records
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class DatasetRecord:
    """One synthetic capture: images, lights and every ground-truth artefact."""

    images: list[RadianceImage]
    lights: list[PointLight]
    camera: CameraIntrinsics
    pose: Pose
    gt_mesh: FaceMesh
    gt_normals: NormalMap
    gt_depth: HeightField
    proxy: FaceMesh
    seed: int
    spec_hash: str
    coefficients: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        """JSON-serialisable description (no pixel payloads)."""
        return {
            "seed": int(self.seed),
            "spec_hash": self.spec_hash,
            "camera": self.camera.to_dict(),
            "pose": self.pose.to_dict(),
            "lights": [light.to_dict() for light in self.lights],
            "n_images": len(self.images),
        }
