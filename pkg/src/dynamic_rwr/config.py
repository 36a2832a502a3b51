"""
Configuration models for the dynamic RWR engine.

Numerical parameters live in ``PropagationConfig``; command-line runs are
described by ``RunConfig``. Defaults can be supplied through environment
variables (optionally loaded from a ``.env`` file).
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional
import logging
import math
import os

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

DEFAULT_RESTART_PROB = 0.15
DEFAULT_EPSILON = 1e-9
MIN_MAX_ITERATIONS = 1000


class DeadEndMode(str, Enum):
    """How leaked mass from dead-end nodes is handled at read-out."""

    RESCALE = "rescale"
    NONE = "none"


def iteration_bound(c: float, epsilon: float) -> int:
    """
    Iterations needed for ``2 * (1 - c) ** i`` to fall under ``epsilon``.

    Args:
        c: Restart probability in (0, 1)
        epsilon: Error tolerance (> 0)

    Returns:
        ``ceil(log_{1-c}(epsilon / 2))``, never negative
    """
    ratio = epsilon / 2.0
    if ratio >= 1.0:
        return 0
    return max(0, math.ceil(math.log(ratio) / math.log(1.0 - c)))


class PropagationConfig(BaseModel):
    """
    Parameters shared by every propagation run.

    ``max_iterations`` defaults to ten times the theoretical iteration bound,
    with a floor of 1000.
    """

    model_config = ConfigDict(frozen=True)

    c: float = Field(DEFAULT_RESTART_PROB, gt=0.0, lt=1.0)
    epsilon: float = Field(DEFAULT_EPSILON, gt=0.0)
    max_iterations: int = Field(MIN_MAX_ITERATIONS, ge=1)
    dead_end_mode: DeadEndMode = DeadEndMode.RESCALE

    @model_validator(mode="before")
    @classmethod
    def _default_max_iterations(cls, data: Any) -> Any:
        if not isinstance(data, dict) or data.get("max_iterations") is not None:
            return data
        data = dict(data)
        c = data.get("c", DEFAULT_RESTART_PROB)
        epsilon = data.get("epsilon", DEFAULT_EPSILON)
        try:
            bound = iteration_bound(float(c), float(epsilon))
        except (TypeError, ValueError, ZeroDivisionError):
            # field validation reports the bad value
            bound = 0
        data["max_iterations"] = max(MIN_MAX_ITERATIONS, 10 * bound)
        return data

    def with_epsilon(self, epsilon: float) -> "PropagationConfig":
        """Return a copy with a different tolerance and a recomputed cap."""
        return PropagationConfig(c=self.c, epsilon=epsilon, dead_end_mode=self.dead_end_mode)


class TrackerOptions(BaseModel):
    """Lifecycle knobs for a tracker."""

    refresh_every: Optional[int] = Field(None, ge=1)


class RunConfig(BaseModel):
    """
    Full description of one command-line run.

    Mirrors the CLI flags; ``propagation_config`` derives the numerical
    parameters.
    """

    command: Literal["static", "track", "bench", "metrics"]
    graph_path: Optional[Path] = None
    updates_path: Optional[Path] = None
    output_path: Optional[Path] = None
    checkpoint_path: Optional[Path] = None
    score_files: List[Path] = Field(default_factory=list)

    c: float = Field(DEFAULT_RESTART_PROB, gt=0.0, lt=1.0)
    epsilon: float = Field(DEFAULT_EPSILON, gt=0.0)
    dead_end_mode: DeadEndMode = DeadEndMode.RESCALE

    seed_node: Optional[int] = Field(None, ge=0)
    random_seeds: Optional[int] = Field(None, ge=1)
    rng_seed: int = 0
    snapshot_count: int = Field(10, ge=1)
    initial_fraction: float = Field(0.5, gt=0.0, lt=1.0)
    shrink: bool = False

    undirected: bool = False
    lenient: bool = False
    verify: bool = False
    workers: int = Field(1, ge=1)
    refresh_every: Optional[int] = Field(None, ge=1)

    sweep: Literal["size", "epsilon", "location", "scalability"] = "size"
    sweep_values: List[float] = Field(default_factory=list)
    trials: int = Field(30, ge=1)
    synthetic_nodes: int = Field(10_000, ge=2)
    synthetic_degree: float = Field(10.0, gt=0.0)

    @field_validator("sweep_values")
    @classmethod
    def _positive_sweep_values(cls, values: List[float]) -> List[float]:
        if any(v <= 0 for v in values):
            raise ValueError("sweep values must be positive")
        return values

    def propagation_config(self) -> PropagationConfig:
        """Build the numerical configuration for this run."""
        return PropagationConfig(
            c=self.c, epsilon=self.epsilon, dead_end_mode=self.dead_end_mode
        )


def load_environment(dotenv_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load ``.env`` (if present) and read engine defaults from the environment.

    Recognized variables: ``RWR_RESTART_PROB``, ``RWR_EPSILON``,
    ``RWR_WORKERS``. Unparseable values are ignored with a warning.

    Args:
        dotenv_path: Optional explicit path to a dotenv file

    Returns:
        Mapping of ``RunConfig`` field names to environment values
    """
    load_dotenv(dotenv_path)

    defaults: Dict[str, Any] = {}
    for env_name, field_name, cast in (
        ("RWR_RESTART_PROB", "c", float),
        ("RWR_EPSILON", "epsilon", float),
        ("RWR_WORKERS", "workers", int),
    ):
        raw = os.getenv(env_name)
        if raw is None or raw == "":
            continue
        try:
            defaults[field_name] = cast(raw)
        except ValueError:
            logger.warning(f"Ignoring {env_name}={raw!r}: not a valid {cast.__name__}")
    return defaults
