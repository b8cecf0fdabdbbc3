from typing import List, Optional

from pydantic import BaseModel, Field

from chemostat.protocol.enums import SurvivorLabel


class SweepAxis(BaseModel):
    """One swept parameter: a ChemostatParams field, dotted for curve fields (e.g. 'curve_y.gamma')"""
    name: str
    values: List[float] = Field(..., min_length=1)


class SweepCell(BaseModel):
    param1: float
    param2: Optional[float] = None
    survivor_label: SurvivorLabel
    final_x: Optional[float] = None
    final_y: Optional[float] = None
    final_z: Optional[float] = None
    error: Optional[str] = None


class SurvivorMap(BaseModel):
    axis1: str
    axis2: Optional[str] = None
    cells: List[SweepCell] = Field(default_factory=list)

    def labels(self) -> List[SurvivorLabel]:
        return [cell.survivor_label for cell in self.cells]
