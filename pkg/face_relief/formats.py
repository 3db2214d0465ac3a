"""File formats: OBJ meshes, PFM float maps, PNG previews, binary containers, lights JSON."""

from __future__ import annotations

import contextlib
import json
import logging
import struct
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import cv2
import numpy as np

from face_relief.errors import InputError, MissingPathError, ReliefError
from face_relief.models import LinearFaceModel, PointLight, RefinementState

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CONTAINER_MAGIC = b"FRELIEF1"
_DTYPES = {"<f8": np.float64, "<i8": np.int64}


@contextlib.contextmanager
def io_errors(path: PathLike) -> Iterator[None]:
    """Re-raise ``OSError`` as a pipeline error naming *path*."""
    try:
        yield
    except FileNotFoundError as exc:
        raise MissingPathError(path, "file") from exc
    except OSError as exc:
        raise ReliefError(f"I/O failure on {path}: {exc}") from exc


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if not path.exists():
        raise MissingPathError(path, "file")
    with io_errors(path):
        return path.read_bytes()


def _write_bytes(path: PathLike, data: bytes) -> None:
    path = Path(path)
    with io_errors(path):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)


def dumps_json(payload: dict) -> bytes:
    """Canonical JSON bytes (sorted keys) so reruns are byte-identical."""
    return (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8")


def write_json(path: PathLike, payload: dict) -> None:
    _write_bytes(path, dumps_json(payload))


def read_json(path: PathLike) -> dict:
    raw = _read_bytes(path)
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# OBJ
# ---------------------------------------------------------------------------


def encode_obj(vertices: np.ndarray, triangles: np.ndarray, colors: Optional[np.ndarray] = None) -> bytes:
    lines = []
    if colors is None:
        for x, y, z in vertices:
            lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    else:
        for (x, y, z), (r, g, b) in zip(vertices, colors):
            lines.append(f"v {x:.9g} {y:.9g} {z:.9g} {r:.9g} {g:.9g} {b:.9g}")
    for a, b, c in np.asarray(triangles, dtype=np.int64) + 1:
        lines.append(f"f {a} {b} {c}")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_obj(path: PathLike, mesh) -> None:
    """Write a ``FaceMesh`` with per-vertex RGB on each ``v`` line."""
    _write_bytes(path, encode_obj(mesh.vertices, mesh.triangles, mesh.albedo))


def read_obj(path: PathLike):
    """Read ``v`` (3 or 6 values) and triangular ``f`` records into a ``FaceMesh``.

    Missing colours default to white. Face entries may carry ``/vt/vn``
    suffixes and negative (relative) indices.
    """
    from face_relief.models import FaceMesh

    text = _read_bytes(path).decode("utf-8", errors="replace")
    vertices: list[list[float]] = []
    colors: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        try:
            if tokens[0] == "v":
                values = [float(t) for t in tokens[1:]]
                vertices.append(values[:3])
                colors.append(values[3:6] if len(values) >= 6 else [1.0, 1.0, 1.0])
            elif tokens[0] == "f":
                idx = []
                for token in tokens[1:]:
                    i = int(token.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                if len(idx) != 3:
                    raise InputError(f"{path}:{lineno}: only triangular faces are supported")
                faces.append(idx)
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: malformed OBJ record: {exc}") from exc
    if not vertices:
        raise InputError(f"{path} contains no vertices")
    return FaceMesh(
        np.asarray(vertices, dtype=np.float64),
        np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        np.clip(np.asarray(colors, dtype=np.float64), 0.0, 1.0),
    )


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def encode_pfm(data: np.ndarray) -> bytes:
    """Little-endian PFM; (H, W) -> ``Pf``, (H, W, 3) -> ``PF``; rows stored bottom-up."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        kind = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        kind = b"PF"
    else:
        raise InputError(f"PFM needs (H, W) or (H, W, 3) data, got {data.shape}")
    height, width = data.shape[:2]
    header = kind + b"\n" + f"{width} {height}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(data[::-1].astype("<f4")).tobytes()
    return header + body


def decode_pfm(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise InputError(f"{source} is not a PFM file")
    channels = 3 if parts[0] == b"PF" else 1
    try:
        width, height = (int(x) for x in parts[1].split())
        scale = float(parts[2])
    except ValueError as exc:
        raise InputError(f"{source}: malformed PFM header") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    data = np.frombuffer(parts[3], dtype=dtype, count=count)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return data.reshape(shape)[::-1].astype(np.float64)


def write_pfm(path: PathLike, data: np.ndarray) -> None:
    _write_bytes(path, encode_pfm(data))


def read_pfm(path: PathLike) -> np.ndarray:
    return decode_pfm(_read_bytes(path), str(path))


# ---------------------------------------------------------------------------
# PNG previews
# ---------------------------------------------------------------------------


def linear_to_srgb(values: np.ndarray) -> np.ndarray:
    values = np.clip(values, 0.0, 1.0)
    return np.where(
        values <= 0.0031308, 12.92 * values, 1.055 * np.power(values, 1.0 / 2.4) - 0.055
    )


def write_preview_png(path: PathLike, pixels: np.ndarray, peak: Optional[float] = None) -> None:
    """16-bit sRGB preview of a linear RGB image scaled so *peak* maps to white."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if peak is None:
        peak = float(pixels.max()) if pixels.size else 1.0
    scaled = pixels / peak if peak > 0 else np.zeros_like(pixels)
    encoded = np.round(linear_to_srgb(scaled) * 65535.0).astype(np.uint16)
    _imwrite(path, encoded[..., ::-1] if encoded.ndim == 3 else encoded)


def write_colormap_png(
    path: PathLike,
    values: np.ndarray,
    mask: np.ndarray,
    vmin: float = 0.0,
    vmax: float = 20.0,
) -> None:
    """Jet-coded error map over [vmin, vmax]; pixels outside *mask* are black."""
    norm = np.clip((np.asarray(values, dtype=np.float64) - vmin) / (vmax - vmin), 0.0, 1.0)
    coded = cv2.applyColorMap(np.round(norm * 255.0).astype(np.uint8), cv2.COLORMAP_JET)
    coded[~np.asarray(mask, dtype=bool)] = 0
    _imwrite(path, coded)


def _imwrite(path: PathLike, image: np.ndarray) -> None:
    path = Path(path)
    with io_errors(path):
        path.parent.mkdir(parents=True, exist_ok=True)
        ok, buffer = cv2.imencode(".png", image)
        if not ok:
            raise ReliefError(f"PNG encoding failed for {path}")
        path.write_bytes(buffer.tobytes())


# ---------------------------------------------------------------------------
# Binary container
# ---------------------------------------------------------------------------


def encode_container(arrays: dict[str, np.ndarray], meta: Optional[dict] = None) -> bytes:
    """Magic, u64 header length, JSON header, then raw little-endian payloads."""
    entries = []
    payloads = []
    offset = 0
    for name, array in arrays.items():
        array = np.asarray(array)
        dtype = "<i8" if np.issubdtype(array.dtype, np.integer) or array.dtype == bool else "<f8"
        blob = np.ascontiguousarray(array.astype(dtype)).tobytes()
        entries.append({"name": name, "shape": list(array.shape), "dtype": dtype, "offset": offset})
        payloads.append(blob)
        offset += len(blob)
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    return CONTAINER_MAGIC + struct.pack("<Q", len(header)) + header + b"".join(payloads)


def decode_container(raw: bytes, source: str = "<bytes>") -> tuple[dict[str, np.ndarray], dict]:
    if not raw.startswith(CONTAINER_MAGIC):
        raise InputError(f"{source} is not a face-relief container")
    start = len(CONTAINER_MAGIC)
    (header_len,) = struct.unpack("<Q", raw[start : start + 8])
    header = json.loads(raw[start + 8 : start + 8 + header_len].decode("utf-8"))
    body = raw[start + 8 + header_len :]
    arrays = {}
    for entry in header["arrays"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise InputError(f"{source}: unsupported dtype {entry['dtype']}")
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype=entry["dtype"], count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(dtype)
    return arrays, header.get("meta", {})


def write_container(path: PathLike, arrays: dict[str, np.ndarray], meta: Optional[dict] = None) -> None:
    _write_bytes(path, encode_container(arrays, meta))


def read_container(path: PathLike) -> tuple[dict[str, np.ndarray], dict]:
    return decode_container(_read_bytes(path), str(path))


_MODEL_FIELDS = ("mean_shape", "mean_albedo", "basis_id", "basis_exp", "basis_albedo", "triangles")


def write_model(path: PathLike, model: LinearFaceModel) -> None:
    write_container(
        path,
        {name: getattr(model, name) for name in _MODEL_FIELDS},
        {"kind": "linear_face_model", "n_vertices": model.n_vertices},
    )


def read_model(path: PathLike) -> LinearFaceModel:
    arrays, _meta = read_container(path)
    missing = [name for name in _MODEL_FIELDS if name not in arrays]
    if missing:
        raise InputError(f"{path} is missing model arrays: {', '.join(missing)}")
    return LinearFaceModel(**{name: arrays[name] for name in _MODEL_FIELDS})


def write_refinement_state(path: PathLike, state: RefinementState) -> None:
    write_container(
        path,
        {
            "normals": state.normals_hat,
            "albedos": state.albedo_hat,
            "visible": state.visible_set,
        },
        {
            "kind": "refinement_state",
            "photometric_scale": state.photometric_scale,
            "albedo_scale": state.albedo_scale,
            "objective_history": list(state.objective_history),
        },
    )


def read_refinement_arrays(path: PathLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(normals, albedos, visible)`` arrays of a persisted refinement state."""
    arrays, _meta = read_container(path)
    return arrays["normals"], arrays["albedos"], arrays["visible"]


# ---------------------------------------------------------------------------
# Lights
# ---------------------------------------------------------------------------


def write_lights(path: PathLike, lights: Sequence[PointLight]) -> None:
    write_json(path, {"lights": [light.to_dict() for light in lights]})


def read_lights(path: PathLike) -> list[PointLight]:
    payload = read_json(path)
    try:
        return [PointLight.from_dict(d) for d in payload["lights"]]
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path} is not a lights document: {exc}") from exc
