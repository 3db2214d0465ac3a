"""Corpus commands: generate, make-model, verify."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from face_relief.config import PipelineConfig
from face_relief.corpus import MANIFEST_NAME, generate_corpus, plan_specs, verify_corpus
from face_relief.decorators import exit_on_error
from face_relief.errors import MissingPathError
from face_relief.face_model import DEFAULT_GRID, build_toy_model
from face_relief.formats import write_model
from face_relief.pipeline import load_model

logger = logging.getLogger(__name__)


# ------------------------------------------------------------------
# generate
# ------------------------------------------------------------------

@exit_on_error
def cmd_generate(args: argparse.Namespace, config: PipelineConfig) -> int:
    """Render ``config.count`` records into the corpus directory."""
    config.validate(require_model=config.model_path is not None)
    overrides = {"resolution": config.resolution, **config.sample}
    specs = plan_specs(config.seed, config.count, overrides)
    if args.dry_run:
        print(f"Would generate {len(specs)} record(s) into {config.corpus_dir} (seed {config.seed})")
        return 0
    model = load_model(config)
    manifest = generate_corpus(model, specs, config.corpus_dir, jobs=config.jobs)
    path = Path(config.corpus_dir) / MANIFEST_NAME
    print(f"Manifest: {path} ({len(manifest['records'])} record(s))")
    return 0


# ------------------------------------------------------------------
# make-model
# ------------------------------------------------------------------

@exit_on_error
def cmd_make_model(args: argparse.Namespace, config: PipelineConfig) -> int:
    """Write the procedural face model as a binary container."""
    grid = args.grid or DEFAULT_GRID
    out = Path(args.out)
    if args.dry_run:
        print(f"Would write a {grid}x{grid} toy model (seed {config.seed}) to {out}")
        return 0
    write_model(out, build_toy_model(grid=grid, seed=config.seed))
    print(f"Model: {out}")
    return 0


# ------------------------------------------------------------------
# verify
# ------------------------------------------------------------------

@exit_on_error
def cmd_verify(args: argparse.Namespace, config: PipelineConfig) -> int:
    """Check every record file against the manifest checksums."""
    manifest = Path(config.corpus_dir) / MANIFEST_NAME
    if not manifest.exists():
        raise MissingPathError(manifest, "corpus manifest")
    problems = verify_corpus(config.corpus_dir)
    for problem in problems:
        print(problem)
    if problems:
        logger.warning("Corpus %s FAILED integrity check: %d problem(s)", config.corpus_dir, len(problems))
        return 1
    print(f"{config.corpus_dir} integrity OK (SHA-256 matches)")
    return 0
