"""Face Relief - thin entry point.

All logic lives in the ``face_relief`` package. This file configures logging
and hands the command line to ``face_relief.cli.main``.
"""

from __future__ import annotations

import logging
import sys

from face_relief.cli import main

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


if __name__ == "__main__":
    sys.exit(main())
