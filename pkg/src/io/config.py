"""Run configuration and environment for atomtf.

Two sources, merged in this order (later wins):
  RunConfig JSON   checked-in document, validated against schemas/run_config.schema.json
  CLI flags        per-run overrides (--Z, --N, --kappa, ...)

Environment (.env at the repo root is loaded when present):
  ATOMTF_LOG   error | info | debug   diagnostic verbosity on stderr (default: error)

Usage:
    from src.io.config import configure_logging, load_run_config

    configure_logging()
    config = load_run_config(Path("demo_inputs/run_config.json"))
    config = config.with_overrides({"params.Z": [10.0]})
"""

from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from jsonschema import Draft7Validator
from referencing import Registry, Resource

from src.core.radial_core import DEFAULT_N, RadialGrid, build_grid, default_grid, tf_grid
from src.core.tf_solver import ModelConstants
from src.core.tfdw_solver import FlowConfig

try:
    from dotenv import load_dotenv
    _dotenv_available = True
except ImportError:
    _dotenv_available = False

logger = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parents[2]
SCHEMA_DIR = ROOT / "schemas"
RUN_CONFIG_SCHEMA = "run_config.schema.json"

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class ConfigError(RuntimeError):
    """Raised for a missing, malformed or schema-invalid run configuration."""


def _load_env() -> None:
    """Load .env from repo root (silently skips if file absent or dotenv not installed)."""
    if not _dotenv_available:
        return
    env_path = ROOT / ".env"
    if env_path.exists():
        load_dotenv(env_path, override=False)


_load_env()


def configure_logging() -> int:
    """basicConfig on stderr at the level named by ATOMTF_LOG."""
    name = os.environ.get("ATOMTF_LOG", "error").strip().lower() or "error"
    level = LOG_LEVELS.get(name)
    logging.basicConfig(
        level=level or logging.ERROR,
        format="%(levelname)s: %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if level is None:
        logger.warning("ATOMTF_LOG=%r is not one of %s; using error", name, sorted(LOG_LEVELS))
        level = logging.ERROR
    return level


# ---------------------------------------------------------------------------
# Schemas
# ---------------------------------------------------------------------------

def load_schema(name: str) -> dict:
    return json.loads((SCHEMA_DIR / name).read_text())


def build_registry() -> Registry:
    resources = []
    for path in SCHEMA_DIR.glob("*.json"):
        resources.append((path.name, Resource.from_contents(json.loads(path.read_text()))))
    return Registry().with_resources(resources)


def validate_document(instance: Any, schema_name: str, label: str) -> None:
    """Raise ConfigError naming the first offending key path."""
    validator = Draft7Validator(load_schema(schema_name), registry=build_registry())
    errors = sorted(validator.iter_errors(instance), key=lambda e: list(e.path))
    if errors:
        first = errors[0]
        path = ".".join(str(p) for p in first.path) or "(root)"
        raise ConfigError(f"Validation failed for {label}: {path} - {first.message}")


# ---------------------------------------------------------------------------
# RunConfig
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantsSection:
    c_tf: Optional[float] = None
    c_w: Optional[float] = None
    c_d: Optional[float] = None


@dataclass(frozen=True)
class GridSection:
    r_min: Optional[float] = None
    r_max: Optional[float] = None
    n: Optional[int] = None


@dataclass(frozen=True)
class FlowSection:
    step: Optional[float] = None
    max_iter: Optional[int] = None
    tol_residual: Optional[float] = None
    tol_energy: Optional[float] = None
    backtrack: Optional[float] = None
    r_box: Optional[float] = None
    delta_bound: Optional[float] = None
    continuation_steps: Optional[int] = None


@dataclass(frozen=True)
class ParamsSection:
    Z: List[float] = field(default_factory=lambda: [1.0])
    N: Optional[List[float]] = None
    kappa: List[float] = field(default_factory=lambda: [1.0])
    r: Optional[List[float]] = None
    scan_step: float = 0.25
    split_family: str = "scanned"
    fit_window: Optional[List[float]] = None


@dataclass(frozen=True)
class OutputSection:
    path: Optional[str] = None
    format: str = "csv"


_SECTIONS = {
    "constants": ConstantsSection,
    "grid": GridSection,
    "flow": FlowSection,
    "params": ParamsSection,
    "output": OutputSection,
}


def _compact(d: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in d.items() if v is not None}


@dataclass(frozen=True)
class RunConfig:
    constants: ConstantsSection = field(default_factory=ConstantsSection)
    grid: GridSection = field(default_factory=GridSection)
    flow: FlowSection = field(default_factory=FlowSection)
    params: ParamsSection = field(default_factory=ParamsSection)
    output: OutputSection = field(default_factory=OutputSection)
    jobs: int = 1
    seed: int = 0

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        validate_document(data, RUN_CONFIG_SCHEMA, "run config")
        kwargs: Dict[str, Any] = {}
        for name, section_cls in _SECTIONS.items():
            kwargs[name] = section_cls(**data.get(name, {}))
        for name in ("jobs", "seed"):
            if name in data:
                kwargs[name] = data[name]
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for name in _SECTIONS:
            section = _compact(asdict(getattr(self, name)))
            if section:
                out[name] = section
        out["jobs"] = self.jobs
        out["seed"] = self.seed
        return out

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Apply dotted-path overrides ("params.Z", "output.format", "jobs"); None values are skipped."""
        config = self
        for key, value in overrides.items():
            if value is None:
                continue
            if "." in key:
                section_name, attr = key.split(".", 1)
                section = getattr(config, section_name, None)
                if section is None or attr not in {f.name for f in fields(section)}:
                    raise ConfigError(f"Unknown override key {key!r}")
                config = replace(config, **{section_name: replace(section, **{attr: value})})
            else:
                if key not in {f.name for f in fields(config)}:
                    raise ConfigError(f"Unknown override key {key!r}")
                config = replace(config, **{key: value})
        RunConfig.from_dict(config.to_dict())
        return config

    # -- core objects -------------------------------------------------------

    def model_constants(self, Z: float, N: Optional[float] = None) -> ModelConstants:
        return ModelConstants(Z=Z, N=N, **_compact(asdict(self.constants)))

    def flow_config(self) -> FlowConfig:
        return FlowConfig(**_compact(asdict(self.flow)))

    def grid_for(self, Z: float, N: float) -> RadialGrid:
        """Grid from the config, falling back to the defaults for Z and N per missing field."""
        g = self.grid
        if g.r_min is None and g.r_max is None and g.n is None:
            return default_grid(Z, N)
        base = default_grid(Z, N, n=g.n or DEFAULT_N)
        return build_grid(g.r_min or base.r_min, g.r_max or base.r_max, g.n or base.n)

    def tf_grid_for(self, Z: float) -> RadialGrid:
        """TF grid with the configured grid fields applied over the tf_grid defaults."""
        g = self.grid
        base = tf_grid(Z, n=g.n or DEFAULT_N)
        return build_grid(g.r_min or base.r_min, g.r_max or base.r_max, base.n)


def load_run_config(path: Optional[Path]) -> RunConfig:
    """Read and validate a RunConfig file; None gives the all-defaults config."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    config = RunConfig.from_dict(data)
    logger.info("loaded run config path=%s", path)
    return config
