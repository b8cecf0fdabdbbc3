from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from chemostat.protocol.enums import Population, Scheme, SurvivorLabel


class ExtinctionEvent(BaseModel):
    population: Population = Field(..., description="Population that fell below the extinction threshold")
    time: float = Field(..., description="First time the population was below the threshold")


class ClampEvent(BaseModel):
    component: str = Field(..., description="State component that was set to zero")
    time: float = Field(..., description="Time of the clamp")
    value: float = Field(..., description="Negative value before clamping")


class Trajectory(BaseModel):
    """Time-stamped (x, y, z) path with the metadata needed to reproduce it"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: np.ndarray = Field(..., description="Output times, strictly increasing")
    states: np.ndarray = Field(..., description="States at the output times, shape (n, 3)")
    seed: Optional[int] = Field(None, description="64-bit seed of the Wiener source, None for ODE paths")
    path: int = Field(0, description="Path index within the seed's stream family")
    scheme: Optional[Scheme] = Field(None, description="Stochastic scheme, None for ODE paths")
    dt: Optional[float] = Field(None, description="Fixed step of stochastic paths")
    record_every: int = Field(1, description="Steps between consecutive recorded states")
    events: List[ExtinctionEvent] = Field(default_factory=list)
    clamps: List[ClampEvent] = Field(default_factory=list)
    failure: Optional[str] = Field(None, description="Diagnostic of an aborted path")

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def extinction_time(self, population: Population) -> Optional[float]:
        for event in self.events:
            if event.population == population:
                return event.time
        return None


class EnsembleSummary(BaseModel):
    """Per-time mean and 5%/95% quantiles of x, y and z over the successful paths"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    times: np.ndarray
    mean: np.ndarray = Field(..., description="Shape (n_times, 3)")
    q05: np.ndarray = Field(..., description="Shape (n_times, 3)")
    q95: np.ndarray = Field(..., description="Shape (n_times, 3)")


class Ensemble(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    trajectories: List[Trajectory] = Field(default_factory=list)
    summary: Optional[EnsembleSummary] = None
    survivors: Dict[SurvivorLabel, int] = Field(default_factory=dict, description="Extinction-based survivor tally")
    leaders: Dict[Population, int] = Field(
        default_factory=dict, description="Which population is larger at the horizon, failed paths excluded"
    )
    failures: Dict[int, str] = Field(default_factory=dict, description="Path index -> failure diagnostic")

    @property
    def size(self) -> int:
        return len(self.trajectories)
