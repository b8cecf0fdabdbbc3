from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class StagePlan(BaseModel):
    """Constants linking the five asymptotic stages for one (params, M1, M2)"""
    M1: float = Field(..., gt=0, description="Order-unity initial population x")
    M2: float = Field(..., gt=0, description="Order-unity initial population y")
    L: float = Field(..., description="Stage-3 time offset")
    mu1: float = Field(..., description="Stage-3 coefficient of x")
    mu2: float = Field(..., description="Stage-3 coefficient of y")
    l_residual: float = Field(0.0, description="Mismatch of the two expressions for L when M2 is chosen freely")
    C3: float = Field(0.0, description="Stage-3 substrate constant")
    t0_prime: Optional[float] = Field(None, description="Stage-3 time at which z' reaches zero")
    x0_prime: Optional[float] = Field(None, description="Stage-4 frozen population x / z_f")
    y0_prime: Optional[float] = Field(None, description="Stage-4 frozen population y / z_f")
    Z_infinity: Optional[float] = Field(None, description="Stage-4 terminal substrate")


class ReducedState(BaseModel):
    model_config = ConfigDict(frozen=True)

    x_bar: float = Field(..., ge=0, description="x / z_f")
    y_bar: float = Field(..., ge=0, description="y / z_f")
    z_bar: Optional[float] = Field(None, description="Substrate from the algebraic constraint")


class ReducedTrajectory(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: np.ndarray
    states: np.ndarray = Field(..., description="Columns x_bar, y_bar, z_bar")
    aborted_at: Optional[float] = Field(None, description="Time the path reached the singularity guard")


class Stage4Result(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: np.ndarray
    Z: np.ndarray
    Z_infinity: float = Field(..., description="Root of the stage-4 balance")
    Z_integrated: float = Field(..., description="Last value of the integrated path")


class StageError(BaseModel):
    z_f: float
    stage: str
    sup_rel_err: float


class CompositeReport(BaseModel):
    errors: List[StageError] = Field(default_factory=list)
    slope_fit: List[StageError] = Field(default_factory=list, description="Fitted stage-2 exponents, relative error")

    def series(self, stage: str) -> List[float]:
        return [e.sup_rel_err for e in self.errors if e.stage == stage]


class ReducedEnsemble(BaseModel):
    """Paths of the reduced Langevin system, recorded on a shared grid"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: np.ndarray
    states: np.ndarray = Field(..., description="Shape (n_times, n_paths, 3), columns x_bar, y_bar, z_bar")
    failed: np.ndarray = Field(..., description="Boolean mask of paths stopped at the singularity guard")
    seed: int

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]
