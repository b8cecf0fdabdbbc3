from typing import List

from pydantic import BaseModel, Field

from chemostat.protocol.enums import Scheme


class OrderLevel(BaseModel):
    dt: float
    strong_error: float = Field(..., description="Mean Euclidean error at the horizon against the reference")


class OrderStudy(BaseModel):
    scheme: Scheme
    levels: List[OrderLevel] = Field(default_factory=list)
    reference_dt: float
    n_paths: int
    slope: float = Field(..., description="Least-squares slope of log error against log dt")
