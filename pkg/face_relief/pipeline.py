"""Stage orchestration: calibrate -> refine -> target normals -> integrate -> mesh, and evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from face_relief.calibration import calibrate_lights
from face_relief.config import PipelineConfig, parse_light_subset
from face_relief.corpus import load_record
from face_relief.errors import InputError, MissingPathError, ReliefError, StageError
from face_relief.evaluation import (
    aggregate,
    angular_error,
    cosine_normal_error,
    point_to_point_error,
    validate_report,
)
from face_relief.face_model import build_toy_model
from face_relief.formats import (
    read_json,
    read_model,
    read_obj,
    read_pfm,
    write_colormap_png,
    write_json,
    write_lights,
    write_obj,
    write_pfm,
    write_refinement_state,
)
from face_relief.geometry import posed_mesh
from face_relief.integration import (
    back_project_heights,
    heightfield_normals,
    heightfield_to_mesh,
    integrate,
    proxy_depth,
    rasterize_target_normals,
    restrict,
)
from face_relief.models import (
    CalibrationProblem,
    CalibrationReport,
    DatasetRecord,
    FaceMesh,
    HeightField,
    IntegrationResult,
    LinearFaceModel,
    NormalMap,
    PointLight,
    RadianceImage,
    RefinementState,
)
from face_relief.objective_log import ObjectiveLog
from face_relief.refinement import refine
from face_relief.synth import SampleSpec, base_light_directions

logger = logging.getLogger(__name__)

SELF_CHECK_LABEL = "truth"


def load_model(config: PipelineConfig) -> LinearFaceModel:
    """The configured model container, or the bundled procedural model."""
    if config.model_path is None:
        return build_toy_model(seed=0)
    if not Path(config.model_path).exists():
        raise MissingPathError(config.model_path, "model file")
    return read_model(config.model_path)


def output_dir(config: PipelineConfig, rid: str, subset: str) -> Path:
    base = Path(config.output_dir) if config.output_dir else Path(config.corpus_dir)
    return base / rid / f"recon_{subset.upper()}"


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


@dataclass
class Reconstruction:
    """Mutable bag the stages read from and write to."""

    record: DatasetRecord
    images: list[RadianceImage]
    lights: list[PointLight]
    lights_known: bool
    out_dir: Path
    log: ObjectiveLog
    calibration: Optional[CalibrationReport] = None
    state: Optional[RefinementState] = None
    target: Optional[NormalMap] = None
    result: Optional[IntegrationResult] = None
    mesh: Optional[FaceMesh] = None
    timings: dict[str, float] = field(default_factory=dict)


StageFn = Callable[[Reconstruction, PipelineConfig], None]


@dataclass(frozen=True)
class StageSpec:
    """Describes one pipeline stage."""

    name: str
    run: StageFn
    enabled: bool = True


def _stage_calibrate(ctx: Reconstruction, config: PipelineConfig) -> None:
    record = ctx.record
    problem = CalibrationProblem(record.proxy, record.pose, record.camera, ctx.images, ctx.lights)
    ctx.lights, ctx.calibration = calibrate_lights(problem, config.calibration, ctx.log)


def _stage_refine(ctx: Reconstruction, config: PipelineConfig) -> None:
    record = ctx.record
    ctx.state = refine(
        record.proxy, record.pose, record.camera, ctx.images, ctx.lights, config.refinement, ctx.log
    )


def _stage_target(ctx: Reconstruction, config: PipelineConfig) -> None:
    record = ctx.record
    ctx.target = rasterize_target_normals(ctx.state, record.proxy, record.pose, record.camera)


def _stage_integrate(ctx: Reconstruction, config: PipelineConfig) -> None:
    record = ctx.record
    z0 = proxy_depth(record.proxy, record.pose, record.camera)
    if not np.array_equal(z0.mask, ctx.target.mask):
        z0 = HeightField(np.where(ctx.target.mask, z0.depth, 0.0), ctx.target.mask, record.camera)
    ctx.result = integrate(ctx.target, z0, config.w1, config.w2, config.integration, ctx.log)


def _stage_mesh(ctx: Reconstruction, config: PipelineConfig) -> None:
    ctx.mesh = heightfield_to_mesh(ctx.result.height)


def _stage_write(ctx: Reconstruction, config: PipelineConfig) -> None:
    out = ctx.out_dir
    height = ctx.result.height
    write_pfm(out / "normals.pfm", restrict(ctx.target, height.mask).normals)
    write_pfm(out / "depth.pfm", height.depth)
    write_pfm(out / "mask.pfm", height.mask.astype(np.float64))
    write_obj(out / "mesh.obj", ctx.mesh)
    write_lights(out / "lights.json", ctx.lights)
    write_refinement_state(out / "refinement.bin", ctx.state)
    if ctx.calibration is not None:
        write_json(out / "calibration.json", ctx.calibration.to_dict())
    else:
        write_json(out / "calibration.json", {"lights_known": True})


def _stage_write_lights(ctx: Reconstruction, config: PipelineConfig) -> None:
    write_lights(ctx.out_dir / "lights.json", ctx.lights)
    if ctx.calibration is not None:
        write_json(ctx.out_dir / "calibration.json", ctx.calibration.to_dict())


def calibration_stages() -> list[StageSpec]:
    return [StageSpec("calibrate", _stage_calibrate), StageSpec("write", _stage_write_lights)]


def reconstruction_stages(lights_known: bool) -> list[StageSpec]:
    return [
        StageSpec("calibrate", _stage_calibrate, enabled=not lights_known),
        StageSpec("refine", _stage_refine),
        StageSpec("target_normals", _stage_target),
        StageSpec("integrate", _stage_integrate),
        StageSpec("mesh", _stage_mesh),
        StageSpec("write", _stage_write),
    ]


def run_stages(specs: list[StageSpec], ctx: Reconstruction, config: PipelineConfig) -> None:
    """Run enabled stages in order; any exception is re-raised as ``StageError``."""
    for spec in specs:
        if not spec.enabled:
            logger.info("Stage %s skipped", spec.name)
            continue
        started = time.perf_counter()
        try:
            spec.run(ctx, config)
        except ReliefError as exc:
            logger.error("Stage %s failed: %s", spec.name, exc)
            raise StageError(spec.name, exc) from exc
        except Exception as exc:
            logger.exception("Stage %s raised an unexpected %s", spec.name, type(exc).__name__)
            raise StageError(spec.name, exc) from exc
        ctx.timings[spec.name] = time.perf_counter() - started
        logger.info("Stage %s finished in %.2fs", spec.name, ctx.timings[spec.name])


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------


def select_subset(record: DatasetRecord, subset: str) -> list[int]:
    indices = parse_light_subset(subset)
    if indices[-1] >= len(record.images):
        raise InputError(
            f"light subset {subset} needs {indices[-1] + 1} image(s); record has {len(record.images)}"
        )
    return indices


def nominal_lights(record: DatasetRecord, spec: SampleSpec, indices: list[int]) -> list[PointLight]:
    """Un-jittered rig positions around the posed proxy: the calibration starting point."""
    center = posed_mesh(record.proxy, record.pose).vertices.mean(axis=0)
    directions = base_light_directions(len(record.images))
    beta = spec.light_distance_mm**2
    return [PointLight(center + spec.light_distance_mm * directions[j], beta) for j in indices]


def reconstruct_record(
    config: PipelineConfig,
    rid: str,
    subset: Optional[str] = None,
    lights_known: bool = False,
    initial_lights: Optional[list[PointLight]] = None,
    stages: Optional[list[StageSpec]] = None,
) -> Reconstruction:
    """Run the reconstruction stages for one record and write its outputs."""
    subset = (subset or config.light_subset).upper()
    record = load_record(config.corpus_dir, rid)
    indices = select_subset(record, subset)
    if lights_known:
        lights = [record.lights[j] for j in indices]
    elif initial_lights is not None:
        lights = list(initial_lights)
    else:
        meta = read_json(Path(config.corpus_dir) / rid / "meta.json")
        lights = nominal_lights(record, SampleSpec.from_dict(meta.get("spec", {"seed": record.seed})), indices)

    out = output_dir(config, rid, subset)
    ctx = Reconstruction(
        record=record,
        images=[record.images[j] for j in indices],
        lights=lights,
        lights_known=lights_known,
        out_dir=out,
        log=ObjectiveLog(out / "objectives.jsonl"),
    )
    logger.info("Reconstructing %s with subset %s (lights known: %s)", rid, subset, lights_known)
    run_stages(stages if stages is not None else reconstruction_stages(lights_known), ctx, config)
    return ctx


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def fully_lit_mask(record: DatasetRecord, indices: list[int]) -> np.ndarray:
    """Ground-truth pixels that every selected light reaches from the front."""
    mask = record.gt_normals.mask.copy()
    points = back_project_heights(record.gt_depth)
    for j in indices:
        offsets = record.lights[j].position[None, None, :] - points
        mask &= np.einsum("hwk,hwk->hw", record.gt_normals.normals, offsets) > 0.0
    return mask


def _lit_error(surface: NormalMap, truth: NormalMap, lit: np.ndarray, overall) -> dict:
    if not (lit & surface.mask & truth.mask).any():
        logger.warning("No fully lit pixel; reporting the overall angular error")
        return overall.to_dict()
    return angular_error(restrict(surface, lit), truth).to_dict()


def _read_reconstruction(out: Path, record: DatasetRecord) -> tuple[HeightField, NormalMap, FaceMesh]:
    for name in ("depth.pfm", "mask.pfm", "normals.pfm", "mesh.obj"):
        if not (out / name).exists():
            raise MissingPathError(out / name, "reconstruction output")
    mask = read_pfm(out / "mask.pfm") > 0.5
    height = HeightField(np.where(mask, read_pfm(out / "depth.pfm"), 0.0), mask, record.camera)
    refined = read_pfm(out / "normals.pfm")
    lengths = np.linalg.norm(refined, axis=2, keepdims=True)
    refined_mask = mask & (lengths[:, :, 0] > 0.0)
    refined = np.where(refined_mask[:, :, None], refined / np.where(lengths > 0.0, lengths, 1.0), 0.0)
    return height, NormalMap(refined, refined_mask), read_obj(out / "mesh.obj")


def evaluate_record(
    config: PipelineConfig,
    rid: str,
    subset: Optional[str] = None,
    self_check: bool = False,
) -> dict:
    """Compute the metric report for one reconstruction and write report and error maps."""
    record = load_record(config.corpus_dir, rid)
    truth_mesh = posed_mesh(record.gt_mesh, record.pose)
    if self_check:
        label = SELF_CHECK_LABEL
        indices = list(range(len(record.images)))
        surface = record.gt_normals
        refined = record.gt_normals
        proxy_normals = record.gt_normals
        mesh = truth_mesh
    else:
        label = (subset or config.light_subset).upper()
        indices = select_subset(record, label)
        height, refined, mesh = _read_reconstruction(output_dir(config, rid, label), record)
        surface = heightfield_normals(height)
        proxy_normals = heightfield_normals(proxy_depth(record.proxy, record.pose, record.camera))

    angular = angular_error(surface, record.gt_normals)
    proxy_angular = angular_error(proxy_normals, record.gt_normals)
    lit = fully_lit_mask(record, indices)
    report = {
        "record_id": rid,
        "subset": label,
        "angular_error": angular.to_dict(),
        "angular_error_lit": _lit_error(surface, record.gt_normals, lit, angular),
        "refined_angular_error": angular_error(refined, record.gt_normals).to_dict(),
        "cosine_error": cosine_normal_error(surface, record.gt_normals),
        "point_to_point": point_to_point_error(mesh, truth_mesh, align=True).to_dict(),
        "proxy_angular_error": proxy_angular.to_dict(),
        "proxy_angular_error_lit": _lit_error(proxy_normals, record.gt_normals, lit, proxy_angular),
    }
    validate_report(report)

    out = output_dir(config, rid, label)
    write_json(out / "report.json", report)
    write_pfm(out / "angular_error.pfm", angular.error_map)
    write_colormap_png(out / "angular_error.png", angular.error_map, surface.mask & record.gt_normals.mask)
    logger.info(
        "Evaluated %s/%s: angular mean=%.3f deg, point-to-point mean=%.3f mm",
        rid,
        label,
        report["angular_error"]["mean"],
        report["point_to_point"]["mean"],
    )
    return report


def evaluated_subsets(config: PipelineConfig, rid: str) -> list[str]:
    """Subsets with reconstruction outputs on disk for *rid*."""
    base = Path(config.output_dir) if config.output_dir else Path(config.corpus_dir)
    found = sorted(p.name[len("recon_") :] for p in (base / rid).glob("recon_S*") if p.is_dir())
    return [s for s in found if (base / rid / f"recon_{s}" / "mesh.obj").exists()]


def summarize(config: PipelineConfig, reports: list[dict]) -> Path:
    """Write ``summary.json`` aggregating per-record means by subset."""
    path = Path(config.corpus_dir) / "summary.json"
    write_json(path, aggregate(reports))
    logger.info("Summary of %d report(s) written to %s", len(reports), path)
    return path
