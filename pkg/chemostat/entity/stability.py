from typing import List, Optional, Tuple

from pydantic import BaseModel, Field

from chemostat.protocol.enums import Verdict


class SteadyStateStability(BaseModel):
    name: str = Field(..., description="washout, y-survivor, x-survivor or coexistence-line")
    state: Optional[Tuple[float, float, float]] = Field(None, description="Steady state (x, y, z), None when absent")
    eigenvalues: Optional[Tuple[float, float]] = Field(None, description="Eigenvalues of the mass-reduced system")
    verdict: Verdict
    conditions: List[str] = Field(default_factory=list, description="Conditions that produced the verdict")


class StabilityReport(BaseModel):
    """Stability of the four steady-state families for one parameter set"""
    theta: float
    z_f: float
    rows: List[SteadyStateStability] = Field(default_factory=list)

    def row(self, name: str) -> SteadyStateStability:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)
