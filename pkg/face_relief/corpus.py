"""Benchmark corpus on disk: generation, manifest checksums, record loading.

Layout::

    <out>/manifest.json
    <out>/record-0000/img_0.pfm ... gt_mesh.obj proxy_mesh.obj
                      gt_normals.pfm gt_depth.pfm meta.json

The manifest stores each file's SHA-256. A rerun skips records whose spec,
model and files all still match, and otherwise only rewrites files whose
bytes changed.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from face_relief.errors import InputError, UnknownRecordError
from face_relief.formats import (
    dumps_json,
    encode_obj,
    encode_pfm,
    io_errors,
    read_json,
    read_obj,
    read_pfm,
)
from face_relief.models import (
    CameraIntrinsics,
    DatasetRecord,
    HeightField,
    LinearFaceModel,
    NormalMap,
    PointLight,
    Pose,
    RadianceImage,
)
from face_relief.synth import SampleSpec, sample_record

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _checksum(data: bytes) -> str:
    """Return the hex SHA-256 digest of *data*."""
    return hashlib.sha256(data).hexdigest()


def model_digest(model: LinearFaceModel) -> str:
    digest = hashlib.sha256()
    for name in ("mean_shape", "mean_albedo", "basis_id", "basis_exp", "basis_albedo", "triangles"):
        digest.update(np.ascontiguousarray(getattr(model, name)).tobytes())
    return digest.hexdigest()


def record_id(index: int) -> str:
    return f"record-{index:04d}"


def plan_specs(seed: int, count: int, overrides: Optional[dict] = None) -> list[SampleSpec]:
    """One spec per record; seeds come from ``SeedSequence(seed).spawn(count)``."""
    if count < 0:
        raise InputError(f"record count must be >= 0, got {count}")
    overrides = dict(overrides or {})
    overrides.pop("seed", None)
    children = np.random.SeedSequence(seed).spawn(count)
    return [
        SampleSpec.from_dict({**overrides, "seed": int(child.generate_state(1, dtype=np.uint64)[0])})
        for child in children
    ]


def _write_if_changed(path: Path, data: bytes) -> bool:
    """Write *data* unless *path* already holds exactly these bytes."""
    with io_errors(path):
        if path.exists() and path.read_bytes() == data:
            return False
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    return True


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------


def encode_record(record: DatasetRecord, rid: str, spec: SampleSpec) -> dict[str, bytes]:
    """File name -> payload bytes for one record directory."""
    files = {f"img_{j}.pfm": encode_pfm(image.pixels) for j, image in enumerate(record.images)}
    files["gt_mesh.obj"] = encode_obj(record.gt_mesh.vertices, record.gt_mesh.triangles, record.gt_mesh.albedo)
    files["proxy_mesh.obj"] = encode_obj(record.proxy.vertices, record.proxy.triangles, record.proxy.albedo)
    files["gt_normals.pfm"] = encode_pfm(record.gt_normals.normals)
    files["gt_depth.pfm"] = encode_pfm(record.gt_depth.depth)
    meta = record.metadata()
    meta.update(
        {
            "record_id": rid,
            "spec": spec.to_dict(),
            "coefficients": record.coefficients,
            "image_status": [image.status for image in record.images],
        }
    )
    files["meta.json"] = dumps_json(meta)
    return files


def _render_files(args: tuple[LinearFaceModel, SampleSpec, str]) -> tuple[str, dict[str, bytes]]:
    model, spec, rid = args
    return rid, encode_record(sample_record(model, spec), rid, spec)


def load_record(corpus_dir: PathLike, rid: str) -> DatasetRecord:
    """Read a record back; image masks are the pixels with positive ground-truth depth."""
    root = Path(corpus_dir) / rid
    if not (root / "meta.json").exists():
        raise UnknownRecordError(rid)
    meta = read_json(root / "meta.json")
    try:
        camera = CameraIntrinsics.from_dict(meta["camera"])
        pose = Pose.from_dict(meta["pose"])
        lights = [PointLight.from_dict(d) for d in meta["lights"]]
        n_images = int(meta["n_images"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{root / 'meta.json'} is malformed: {exc}") from exc

    depth = read_pfm(root / "gt_depth.pfm")
    mask = depth > 0.0
    statuses = meta.get("image_status", ["ok"] * n_images)
    images = [
        RadianceImage(np.maximum(read_pfm(root / f"img_{j}.pfm"), 0.0), mask, statuses[j])
        for j in range(n_images)
    ]
    normals = read_pfm(root / "gt_normals.pfm")
    lengths = np.linalg.norm(normals, axis=2, keepdims=True)
    normals = np.where(mask[:, :, None], normals / np.where(lengths > 0.0, lengths, 1.0), 0.0)
    return DatasetRecord(
        images=images,
        lights=lights,
        camera=camera,
        pose=pose,
        gt_mesh=read_obj(root / "gt_mesh.obj"),
        gt_normals=NormalMap(normals, mask),
        gt_depth=HeightField(depth, mask, camera),
        proxy=read_obj(root / "proxy_mesh.obj"),
        seed=int(meta.get("seed", 0)),
        spec_hash=str(meta.get("spec_hash", "")),
        coefficients=meta.get("coefficients", {}),
    )


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def read_manifest(corpus_dir: PathLike) -> dict:
    path = Path(corpus_dir) / MANIFEST_NAME
    if not path.exists():
        return {"version": MANIFEST_VERSION, "model_hash": None, "records": []}
    return read_json(path)


def list_records(corpus_dir: PathLike) -> list[str]:
    return [entry["record_id"] for entry in read_manifest(corpus_dir).get("records", [])]


def _entry_intact(root: Path, entry: dict) -> bool:
    for name, expected in entry.get("files", {}).items():
        path = root / entry["record_id"] / name
        if not path.exists():
            return False
        with io_errors(path):
            if _checksum(path.read_bytes()) != expected:
                return False
    return bool(entry.get("files"))


def verify_corpus(corpus_dir: PathLike) -> list[str]:
    """Problems found against the manifest checksums (empty when intact)."""
    root = Path(corpus_dir)
    problems = []
    for entry in read_manifest(root).get("records", []):
        for name, expected in sorted(entry.get("files", {}).items()):
            path = root / entry["record_id"] / name
            if not path.exists():
                problems.append(f"{entry['record_id']}/{name}: missing")
                continue
            with io_errors(path):
                actual = _checksum(path.read_bytes())
            if actual != expected:
                problems.append(
                    f"{entry['record_id']}/{name}: checksum mismatch "
                    f"(expected {expected[:16]}..., got {actual[:16]}...)"
                )
    return problems


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def generate_corpus(
    model: LinearFaceModel,
    specs: Sequence[SampleSpec],
    out_dir: PathLike,
    jobs: int = 1,
) -> dict:
    """Render every spec into ``out_dir`` and return the written manifest."""
    root = Path(out_dir)
    with io_errors(root):
        root.mkdir(parents=True, exist_ok=True)
    model_hash = model_digest(model)
    previous = read_manifest(root)
    known = {}
    if previous.get("model_hash") == model_hash:
        known = {entry["record_id"]: entry for entry in previous.get("records", [])}

    entries: dict[str, dict] = {}
    todo = []
    for index, spec in enumerate(specs):
        rid = record_id(index)
        old = known.get(rid)
        if old and old.get("spec_hash") == spec.digest() and _entry_intact(root, old):
            entries[rid] = old
            logger.info("Skipping %s: already complete", rid)
        else:
            todo.append((model, spec, rid))

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_render_files, todo))
    else:
        results = [_render_files(args) for args in todo]

    spec_by_id = {rid: spec for _, spec, rid in todo}
    for rid, files in results:
        written = 0
        for name, data in files.items():
            written += _write_if_changed(root / rid / name, data)
        spec = spec_by_id[rid]
        entries[rid] = {
            "record_id": rid,
            "seed": spec.seed,
            "spec_hash": spec.digest(),
            "files": {name: _checksum(data) for name, data in sorted(files.items())},
        }
        logger.info("Generated %s (seed=%d, %d file(s) written)", rid, spec.seed, written)

    manifest = {
        "version": MANIFEST_VERSION,
        "model_hash": model_hash,
        "records": [entries[record_id(i)] for i in range(len(specs))],
    }
    _write_if_changed(root / MANIFEST_NAME, dumps_json(manifest))
    logger.info("Corpus at %s: %d record(s), %d generated", root, len(specs), len(results))
    return manifest


def regenerate_files(model: LinearFaceModel, corpus_dir: PathLike, rid: str) -> dict[str, bytes]:
    """Re-render one record from the spec stored in its metadata (no writes)."""
    meta = read_json(Path(corpus_dir) / rid / "meta.json")
    spec = SampleSpec.from_dict(meta["spec"])
    return encode_record(sample_record(model, spec), rid, spec)


