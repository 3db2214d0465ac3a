"""Centralised configuration: JSON pipeline config, env overrides, solver settings."""

from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

from face_relief.errors import ConfigError, MissingPathError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

DEFAULT_W1 = 1e-4
DEFAULT_W2 = 1e-3
DEFAULT_MU1 = 0.01
DEFAULT_MU2 = 0.1
DEFAULT_RESOLUTION = 128
DEFAULT_LIGHT_SUBSET = "S123"

_SUBSET_RE = re.compile(r"^S([1-9]+)$")


# ---------------------------------------------------------------------------
# Solver settings
# ---------------------------------------------------------------------------


@dataclass
class RefinementConfig:
    """Weights and stopping rule of the alternating normal/albedo refinement."""

    mu1: float = DEFAULT_MU1
    mu2: float = DEFAULT_MU2
    max_outer_iters: int = 20
    convergence_tol: float = 1e-6

    def __post_init__(self) -> None:
        if not (_finite_nonneg(self.mu1) and _finite_nonneg(self.mu2)):
            raise ConfigError(f"mu1/mu2 must be finite and >= 0, got {self.mu1}, {self.mu2}")
        if self.max_outer_iters < 1:
            raise ConfigError("max_outer_iters must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RefinementConfig":
        return cls(**{k: d[k] for k in ("mu1", "mu2", "max_outer_iters", "convergence_tol") if k in d})


@dataclass
class CalibrationSettings:
    """Levenberg-Marquardt schedule for light calibration."""

    outer_iters: int = 5
    max_inner_iters: int = 200
    lambda_init: float = 1e-3
    lambda_factor: float = 10.0
    lambda_max: float = 1e16
    rel_tol: float = 1e-10
    min_triangles: int = 50
    min_front_fraction: float = 0.3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationSettings":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class IntegrationSettings:
    """Gauss-Newton schedule for height-field integration."""

    max_iters: int = 50
    rel_tol: float = 1e-8
    max_halvings: int = 20
    cg_rtol: float = 1e-10
    cg_max_iter: int = 5000

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "IntegrationSettings":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


def _finite_nonneg(value: float) -> bool:
    return isinstance(value, (int, float)) and math.isfinite(value) and value >= 0


# ---------------------------------------------------------------------------
# Light subsets
# ---------------------------------------------------------------------------


def parse_light_subset(subset: str) -> list[int]:
    """Map ``"S13"`` to ``[0, 2]``; digits name 1-based light slots."""
    match = _SUBSET_RE.match(subset.strip().upper())
    if not match:
        raise ConfigError(f"Invalid light subset '{subset}' (expected e.g. S1, S23, S123)")
    digits = match.group(1)
    if len(set(digits)) != len(digits):
        raise ConfigError(f"Light subset '{subset}' repeats a light")
    return sorted(int(d) - 1 for d in digits)


# ---------------------------------------------------------------------------
# Pipeline configuration
# ---------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    """Read-once configuration bag populated from a JSON document and env vars."""

    model_path: Optional[Path] = None
    corpus_dir: Path = Path("corpus")
    output_dir: Optional[Path] = None
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    integration: IntegrationSettings = field(default_factory=IntegrationSettings)
    w1: float = DEFAULT_W1
    w2: float = DEFAULT_W2
    light_subset: str = DEFAULT_LIGHT_SUBSET
    jobs: int = 1
    seed: int = 0
    count: int = 20
    resolution: int = DEFAULT_RESOLUTION
    sample: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    _parse_errors: list[tuple[str, str]] = field(default_factory=list, repr=False)

    # ------------------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        paths = d.get("paths", {})
        integration = d.get("integration", {})
        return cls(
            model_path=_opt_path(paths.get("model", d.get("model_path"))),
            corpus_dir=Path(paths.get("corpus", d.get("corpus_dir", "corpus"))),
            output_dir=_opt_path(paths.get("output", d.get("output_dir"))),
            refinement=RefinementConfig.from_dict(d.get("refinement", {})),
            calibration=CalibrationSettings.from_dict(d.get("calibration", {})),
            integration=IntegrationSettings.from_dict(integration.get("settings", {})),
            w1=float(integration.get("w1", d.get("w1", DEFAULT_W1))),
            w2=float(integration.get("w2", d.get("w2", DEFAULT_W2))),
            light_subset=str(d.get("light_subset", DEFAULT_LIGHT_SUBSET)),
            jobs=int(d.get("jobs", 1)),
            seed=int(d.get("seed", 0)),
            count=int(d.get("count", 20)),
            resolution=int(d.get("resolution", DEFAULT_RESOLUTION)),
            sample=dict(d.get("sample", {})),
            schema_version=int(d.get("schema_version", SCHEMA_VERSION)),
        )

    @classmethod
    def load(cls, path: Optional[Path] = None) -> "PipelineConfig":
        """Load *path* (if given) then apply ``RELIEF_*`` environment overrides."""
        if path is None:
            config = cls()
        else:
            path = Path(path)
            if not path.exists():
                raise MissingPathError(path, "config file")
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"Config {path} is not valid JSON: {exc}") from exc
            try:
                config = cls.from_dict(data)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"Config {path} has an invalid field: {exc}") from exc
        config.apply_env()
        return config

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "paths": {
                "model": str(self.model_path) if self.model_path else None,
                "corpus": str(self.corpus_dir),
                "output": str(self.output_dir) if self.output_dir else None,
            },
            "refinement": self.refinement.to_dict(),
            "calibration": self.calibration.to_dict(),
            "integration": {"w1": self.w1, "w2": self.w2, "settings": self.integration.to_dict()},
            "light_subset": self.light_subset,
            "jobs": self.jobs,
            "seed": self.seed,
            "count": self.count,
            "resolution": self.resolution,
            "sample": dict(self.sample),
        }

    # ------------------------------------------------------------------
    def apply_env(self) -> None:
        if os.environ.get("RELIEF_MODEL_PATH"):
            self.model_path = Path(os.environ["RELIEF_MODEL_PATH"])
        if os.environ.get("RELIEF_CORPUS_DIR"):
            self.corpus_dir = Path(os.environ["RELIEF_CORPUS_DIR"])
        if os.environ.get("RELIEF_OUTPUT_DIR"):
            self.output_dir = Path(os.environ["RELIEF_OUTPUT_DIR"])
        if os.environ.get("RELIEF_LIGHT_SUBSET"):
            self.light_subset = os.environ["RELIEF_LIGHT_SUBSET"]
        self.w1 = self._parse_float_env("RELIEF_W1", self.w1)
        self.w2 = self._parse_float_env("RELIEF_W2", self.w2)
        mu1 = self._parse_float_env("RELIEF_MU1", self.refinement.mu1)
        mu2 = self._parse_float_env("RELIEF_MU2", self.refinement.mu2)
        if (mu1, mu2) != (self.refinement.mu1, self.refinement.mu2):
            try:
                self.refinement = RefinementConfig(
                    mu1=mu1,
                    mu2=mu2,
                    max_outer_iters=self.refinement.max_outer_iters,
                    convergence_tol=self.refinement.convergence_tol,
                )
            except ConfigError:
                self._parse_errors.append(("RELIEF_MU1/RELIEF_MU2", f"{mu1}/{mu2}"))
        self.jobs = self._parse_int_env("RELIEF_JOBS", self.jobs)

    def _parse_float_env(self, key: str, default: float) -> float:
        raw_value = os.environ.get(key)
        if raw_value is None:
            return default
        try:
            return float(raw_value)
        except ValueError:
            self._parse_errors.append((key, raw_value))
            return default

    def _parse_int_env(self, key: str, default: int) -> int:
        raw_value = os.environ.get(key)
        if raw_value is None:
            return default
        try:
            return int(raw_value)
        except ValueError:
            self._parse_errors.append((key, raw_value))
            return default

    # ------------------------------------------------------------------
    def validate(self, *, require_model: bool = False, require_corpus: bool = False) -> None:
        """Raise *ConfigError* / *MissingPathError* when settings are unusable."""
        if self._parse_errors:
            errors = ", ".join(f"{name}='{value}'" for name, value in self._parse_errors)
            raise ConfigError(f"Invalid numeric environment variable value(s): {errors}")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"Unsupported config schema_version {self.schema_version} "
                f"(this build reads {SCHEMA_VERSION})"
            )
        for name in ("w1", "w2"):
            if not _finite_nonneg(getattr(self, name)):
                raise ConfigError(f"{name} must be finite and >= 0, got {getattr(self, name)}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.count < 0:
            raise ConfigError(f"count must be >= 0, got {self.count}")
        if self.resolution < 8:
            raise ConfigError(f"resolution must be >= 8, got {self.resolution}")
        parse_light_subset(self.light_subset)
        if require_model:
            if self.model_path is None:
                raise ConfigError("No model path configured (paths.model or --model)")
            if not Path(self.model_path).exists():
                raise MissingPathError(self.model_path, "model file")
        if require_corpus and not Path(self.corpus_dir).exists():
            raise MissingPathError(self.corpus_dir, "corpus directory")

    def log_summary(self) -> None:
        logger.info(
            "Config: corpus=%s model=%s subset=%s w1=%g w2=%g mu1=%g mu2=%g jobs=%d",
            self.corpus_dir,
            self.model_path,
            self.light_subset,
            self.w1,
            self.w2,
            self.refinement.mu1,
            self.refinement.mu2,
            self.jobs,
        )


def _opt_path(value: Any) -> Optional[Path]:
    return Path(value) if value else None
