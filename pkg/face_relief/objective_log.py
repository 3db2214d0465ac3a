"""JSON-lines log of solver objective values."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Optional, Union

logger = logging.getLogger(__name__)


class ObjectiveLog:
    """Collects ``{"stage", "iteration", "objective", ...}`` entries.

    Entries are kept in memory (at most *max_entries*; the oldest are dropped)
    and, when *path* is given, appended to that file as one JSON object per line.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None, max_entries: int = 100_000) -> None:
        self.path = Path(path) if path is not None else None
        self.max_entries = max_entries
        self.entries: list[dict[str, Any]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def record(self, stage: str, iteration: int, objective: float, **extra: Any) -> None:
        entry = {"stage": stage, "iteration": int(iteration), "objective": float(objective)}
        entry.update(extra)
        self.entries.append(entry)
        if len(self.entries) > self.max_entries:
            del self.entries[: len(self.entries) - self.max_entries]
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def values(self, stage: str) -> list[float]:
        return [e["objective"] for e in self.entries if e["stage"] == stage]

    def stages(self) -> list[str]:
        seen: list[str] = []
        for entry in self.entries:
            if entry["stage"] not in seen:
                seen.append(entry["stage"])
        return seen


def read_objective_log(path: Union[str, Path]) -> list[dict[str, Any]]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def is_non_increasing(values: list[float], rel_tol: float = 1e-12) -> bool:
    """True when every value is at most its predecessor (up to *rel_tol*)."""
    return all(b <= a + rel_tol * max(abs(a), 1.0) for a, b in zip(values, values[1:]))
