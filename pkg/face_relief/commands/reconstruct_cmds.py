"""Reconstruction commands: reconstruct, calibrate, render."""

from __future__ import annotations

import argparse
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from face_relief.config import PipelineConfig
from face_relief.corpus import list_records, load_record
from face_relief.decorators import exit_on_error
from face_relief.errors import InputError, ReliefError
from face_relief.formats import read_lights, read_obj, write_pfm, write_preview_png
from face_relief.models import Pose
from face_relief.pipeline import calibration_stages, output_dir, reconstruct_record, select_subset
from face_relief.renderer import RenderOptions, render_lights

logger = logging.getLogger(__name__)


def _record_ids(args: argparse.Namespace, config: PipelineConfig) -> list[str]:
    if getattr(args, "all", False):
        return list_records(config.corpus_dir)
    if not args.record_id:
        raise InputError("a record id (or --all) is required")
    return [args.record_id]


def _reconstruct_one(payload: tuple[PipelineConfig, str, str, bool]) -> tuple[str, int, str]:
    config, rid, subset, lights_known = payload
    try:
        reconstruct_record(config, rid, subset, lights_known=lights_known)
    except ReliefError as exc:
        return rid, exc.exit_code, str(exc)
    return rid, 0, ""


# ------------------------------------------------------------------
# reconstruct
# ------------------------------------------------------------------

@exit_on_error
def cmd_reconstruct(args: argparse.Namespace, config: PipelineConfig) -> int:
    """Calibrate (unless lights are known), refine, integrate and mesh one or all records."""
    config.validate(require_corpus=True)
    subset = (args.subset or config.light_subset).upper()
    rids = _record_ids(args, config)
    if args.dry_run:
        print(f"Would reconstruct {len(rids)} record(s) with subset {subset}")
        return 0
    if len(rids) == 1:
        ctx = reconstruct_record(config, rids[0], subset, lights_known=args.lights_known)
        print(f"Outputs: {ctx.out_dir}")
        return 0

    payloads = [(config, rid, subset, args.lights_known) for rid in rids]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_reconstruct_one, payloads))
    else:
        results = [_reconstruct_one(p) for p in payloads]
    worst = 0
    for rid, code, message in results:
        if code:
            logger.error("Reconstruction of %s failed: %s", rid, message)
            print(f"{rid}: error: {message}")
        else:
            print(f"{rid}: {output_dir(config, rid, subset)}")
        worst = max(worst, code)
    return worst


# ------------------------------------------------------------------
# calibrate
# ------------------------------------------------------------------

@exit_on_error
def cmd_calibrate(args: argparse.Namespace, config: PipelineConfig) -> int:
    """Estimate the selected lights of one record from its proxy and images."""
    config.validate(require_corpus=True)
    subset = (args.subset or config.light_subset).upper()
    if args.dry_run:
        print(f"Would calibrate {args.record_id} with subset {subset}")
        return 0
    ctx = reconstruct_record(config, args.record_id, subset, stages=calibration_stages())
    truth = [ctx.record.lights[j] for j in select_subset(ctx.record, subset)]
    for j, (est, ref) in enumerate(zip(ctx.lights, truth)):
        error_mm = float(np.linalg.norm(est.position - ref.position))
        beta_rel = abs(est.illumination - ref.illumination) / ref.illumination
        print(
            f"light {j}: position {np.round(est.position, 3).tolist()} "
            f"(error {error_mm:.3f} mm), beta {est.illumination:.6g} (error {beta_rel:.2%})"
        )
    print(f"Outputs: {ctx.out_dir}")
    return 0


# ------------------------------------------------------------------
# render
# ------------------------------------------------------------------

@exit_on_error
def cmd_render(args: argparse.Namespace, config: PipelineConfig) -> int:
    """Render PNG/PFM previews of a record's truth or of its reconstruction."""
    config.validate(require_corpus=True)
    record = load_record(config.corpus_dir, args.record_id)
    if args.source == "recon":
        subset = (args.subset or config.light_subset).upper()
        recon = output_dir(config, args.record_id, subset)
        mesh = read_obj(recon / "mesh.obj")
        lights = read_lights(recon / "lights.json")
        pose = Pose()
        out = recon / "renders"
    else:
        mesh, lights, pose = record.gt_mesh, record.lights, record.pose
        out = Path(config.corpus_dir) / args.record_id / "renders"
    if args.dry_run:
        print(f"Would render {len(lights)} image(s) of {args.source} into {out}")
        return 0
    images = render_lights(mesh, pose, record.camera, lights, RenderOptions(cast_shadows=args.shadows))
    peak = max((float(img.pixels.max()) for img in images), default=0.0) or 1.0
    for j, image in enumerate(images):
        write_pfm(out / f"{args.source}_{j}.pfm", image.pixels)
        write_preview_png(out / f"{args.source}_{j}.png", image.pixels, peak=peak)
    print(f"Renders: {out} ({len(images)} image(s))")
    return 0
