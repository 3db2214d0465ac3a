"""Reusable command decorators."""

from __future__ import annotations

import functools
import logging
import sys
from typing import Any, Callable

from face_relief.errors import ReliefError, StageError

logger = logging.getLogger(__name__)


def exit_on_error(command: Callable[..., int]) -> Callable[..., int]:
    """Decorator that turns a command's exceptions into its process exit code.

    ``ReliefError`` subclasses report their own ``exit_code`` (2 for input
    errors, 1 otherwise); anything unexpected is logged with a traceback and
    exits with 1.
    """

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> int:
        try:
            result = command(*args, **kwargs)
        except StageError as exc:
            logger.error("%s", exc)
            if getattr(exc.cause, "diagnostics", None):
                logger.error("Diagnostics: %s", exc.cause.diagnostics)
            print(f"error: {exc}", file=sys.stderr)
            return exc.exit_code
        except ReliefError as exc:
            logger.error("%s failed: %s", command.__name__, exc)
            print(f"error: {exc}", file=sys.stderr)
            return exc.exit_code
        except Exception as exc:
            logger.exception("%s crashed: %s", command.__name__, exc)
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 1
        return 0 if result is None else int(result)

    return wrapper
