from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field


class OutputRecord(BaseModel):
    path: str = Field(..., description="File path relative to the output root")
    sha256: str


class RunManifest(BaseModel):
    recipe: str
    config_hash: str = Field(..., description="sha256 of the canonical experiment config")
    version: str = Field(..., description="Package version that produced the outputs")
    seed: int = 0
    outputs: List[OutputRecord] = Field(default_factory=list)
    wall_clock: float = Field(0.0, description="Seconds spent running the recipe")
    status: str = "complete"
    error: Optional[str] = None


class RecipeResult(BaseModel):
    """Tables and metadata sidecars produced by one recipe, in emission order"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    tables: List[Tuple[str, pd.DataFrame]] = Field(default_factory=list, description="(kind, frame) pairs")
    sidecars: List[Tuple[str, Dict[str, Any]]] = Field(default_factory=list, description="(kind, record) pairs")

    def add_table(self, kind: str, frame: pd.DataFrame) -> None:
        self.tables.append((kind, frame))

    def add_sidecar(self, kind: str, record: Dict[str, Any]) -> None:
        self.sidecars.append((kind, record))

    def extend(self, other: "RecipeResult") -> None:
        self.tables.extend(other.tables)
        self.sidecars.extend(other.sidecars)
