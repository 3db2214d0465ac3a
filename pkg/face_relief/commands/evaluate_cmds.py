"""Evaluation command: per-record reports, self-check, corpus summary."""

from __future__ import annotations

import argparse
import json
import logging

from face_relief.config import PipelineConfig
from face_relief.corpus import list_records
from face_relief.decorators import exit_on_error
from face_relief.errors import InputError
from face_relief.pipeline import evaluate_record, evaluated_subsets, summarize

logger = logging.getLogger(__name__)


@exit_on_error
def cmd_evaluate(args: argparse.Namespace, config: PipelineConfig) -> int:
    """Report angular, cosine and point-to-point errors; ``--all`` also writes summary.json."""
    config.validate(require_corpus=True)
    if args.dry_run:
        target = "every record" if args.all else args.record_id
        print(f"Would evaluate {target} under {config.corpus_dir}")
        return 0
    if args.all:
        reports = []
        for rid in list_records(config.corpus_dir):
            subsets = [args.subset.upper()] if args.subset else evaluated_subsets(config, rid)
            for subset in subsets:
                reports.append(evaluate_record(config, rid, subset))
        if not reports:
            raise InputError(f"no reconstructions to evaluate under {config.corpus_dir}")
        path = summarize(config, reports)
        print(f"Summary: {path} ({len(reports)} report(s))")
        return 0

    if not args.record_id:
        raise InputError("a record id (or --all) is required")
    report = evaluate_record(config, args.record_id, args.subset, self_check=args.self_check)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0
