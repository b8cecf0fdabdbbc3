"""
Experiment configuration documents.

An experiment is a YAML document with an explicit schema version. Unknown keys
are rejected and validation failures name the field and its line in the text.
"""
from enum import Enum
from typing import List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from chemostat.common.config import SETTINGS
from chemostat.entity.sweep import SweepAxis
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.enums import DensityScheme, OuterBoundary, Scheme
from chemostat.protocol.schemas import ChemostatParams, OdeControls

SCHEMA_VERSION = 1


class InitialPolicy(str, Enum):
    ON_LINE_SPLIT = "on-line-split"  # x = z_f/2 - 1, y = z_f/2, z = 1
    EXPLICIT = "explicit"
    REDUCED = "reduced"


class InitialCondition(BaseModel):
    model_config = ConfigDict(extra="forbid")

    policy: InitialPolicy = InitialPolicy.ON_LINE_SPLIT
    state: Optional[Tuple[float, float, float]] = Field(None, description="(x, y, z) for the explicit policy")
    reduced: Optional[Tuple[float, float]] = Field(None, description="(x_bar, y_bar) for the reduced policy")

    @model_validator(mode="after")
    def check_policy_fields(self) -> "InitialCondition":
        if self.policy == InitialPolicy.EXPLICIT and self.state is None:
            raise ValueError("explicit policy requires 'state'")
        if self.policy == InitialPolicy.REDUCED and self.reduced is None:
            raise ValueError("reduced policy requires 'reduced'")
        if self.state is not None and min(self.state) < 0:
            raise ValueError("initial state must be non-negative")
        if self.reduced is not None and min(self.reduced) < 0:
            raise ValueError("reduced state must be non-negative")
        return self

    def full_state(self, params: ChemostatParams) -> Tuple[float, float, float]:
        """Initial (x, y, z) of the full system."""
        if self.policy == InitialPolicy.EXPLICIT:
            return self.state
        if self.policy == InitialPolicy.REDUCED:
            x_bar, y_bar = self.reduced
            x, y = x_bar * params.z_f, y_bar * params.z_f
            return x, y, max(params.z_f - x - y, 0.0)
        return params.z_f / 2 - 1.0, params.z_f / 2, 1.0

    def reduced_state(self, params: ChemostatParams) -> Tuple[float, float]:
        if self.policy == InitialPolicy.REDUCED:
            return self.reduced
        x, y, _ = self.full_state(params)
        return x / params.z_f, y / params.z_f


class RunControls(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dt: float = Field(default_factory=lambda: SETTINGS.SDE_DT, gt=0)
    t_end: float = Field(300.0, gt=0)
    n_paths: int = Field(10, ge=1)
    scheme: Scheme = Scheme.EULER_MARUYAMA
    seed: int = Field(0, ge=0, lt=1 << 64)
    record_every: int = Field(100, ge=1)
    ode: OdeControls = Field(default_factory=OdeControls)


class FokkerPlanckControls(BaseModel):
    model_config = ConfigDict(extra="forbid")

    h: float = Field(default_factory=lambda: SETTINGS.FP_GRID_H, gt=0)
    dt: float = Field(default_factory=lambda: SETTINGS.FP_DT, gt=0)
    horizon: float = Field(default_factory=lambda: SETTINGS.FP_CI_HORIZON, gt=0)
    scheme: DensityScheme = DensityScheme.IMPLICIT_EULER
    outer: OuterBoundary = OuterBoundary.REFLECTING
    x_max: float = Field(3.0, gt=0)
    y_max: float = Field(3.0, gt=0)
    cut_offset: float = Field(1e-2, gt=0)
    means: Tuple[float, float] = (0.5, 0.5)
    sds: Tuple[float, float] = (0.05, 0.05)
    snapshots: List[float] = Field(default_factory=list, description="Times of density snapshots")


class SweepControls(BaseModel):
    model_config = ConfigDict(extra="forbid")

    axis1: SweepAxis
    axis2: Optional[SweepAxis] = None
    t_end: float = Field(3000.0, gt=0)
    population: float = Field(1.0, gt=0, description="Equal initial level of both populations")


class AsymptoticControls(BaseModel):
    model_config = ConfigDict(extra="forbid")

    M1: float = Field(1.0, gt=0)
    M2: float = Field(1.0, gt=0)
    C3: float = Field(0.0, ge=0)
    z_f_ladder: List[float] = Field(default_factory=lambda: [1e3, 1e4, 1e5], min_length=1)
    stage5_horizon: float = Field(20.0, gt=0)


class ConvergenceControls(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dt_ladder: List[float] = Field(default_factory=lambda: [1 / 32, 1 / 64, 1 / 128, 1 / 256], min_length=3)
    n_paths: int = Field(200, ge=1)
    t_end: float = Field(1.0, gt=0)
    reference_refinement: int = Field(8, ge=2)


class ExperimentConfig(BaseModel):
    """One experiment: model, initial condition, stochastic and density controls"""
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1]
    recipe: Optional[str] = None
    model: ChemostatParams
    initial: InitialCondition = Field(default_factory=InitialCondition)
    run: RunControls = Field(default_factory=RunControls)
    fokker_planck: FokkerPlanckControls = Field(default_factory=FokkerPlanckControls)
    sweep: Optional[SweepControls] = None
    asymptotic: AsymptoticControls = Field(default_factory=AsymptoticControls)
    convergence: ConvergenceControls = Field(default_factory=ConvergenceControls)
    output_dir: str = Field(default_factory=lambda: SETTINGS.OUTPUT_DIR)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return parse_config(text)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        """Load an experiment from a YAML file."""
        try:
            with open(path, "r", encoding="utf-8") as f:
                return parse_config(f.read())
        except OSError as e:
            raise ChemostatException(ErrorCode.CONFIG_ERROR, f"cannot read {path}: {e}")

    def canonical(self) -> dict:
        return self.model_dump(mode="json")


def _line_of(node: Optional[yaml.Node], loc: Tuple) -> Optional[int]:
    """1-based line of the deepest YAML node along a validation error location."""
    line = None
    for part in loc:
        if node is None:
            break
        line = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            node = next((value for key, value in node.value if key.value == part), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
        else:
            node = None
    if node is not None:
        line = node.start_mark.line + 1
    return line


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse and validate an experiment document

    Raises:
        ChemostatException: CONFIG_ERROR naming every offending field with its line
    """
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        raise ChemostatException(ErrorCode.CONFIG_ERROR, f"malformed YAML: {e}")
    if not isinstance(data, dict):
        raise ChemostatException(ErrorCode.CONFIG_ERROR, "experiment document must be a mapping")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ChemostatException(
            ErrorCode.CONFIG_ERROR, f"schema_version must be {SCHEMA_VERSION}, got {data.get('schema_version')!r}"
        )

    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        problems = []
        for error in e.errors():
            # discriminated unions add the tag to the location
            loc = tuple(part for part in error["loc"] if part not in ("general", "dilution_rate", "none"))
            field = ".".join(str(part) for part in loc) or "<root>"
            line = _line_of(root, loc)
            where = f" (line {line})" if line else ""
            problems.append(f"{field}{where}: {error['msg']}")
        raise ChemostatException(ErrorCode.CONFIG_ERROR, "; ".join(problems))
