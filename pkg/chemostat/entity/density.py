from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class MassRecord(BaseModel):
    t: float
    mass: float
    clipped: float = Field(0.0, description="Negative mass removed by clipping in this step")
    leaked: float = Field(0.0, description="Cumulative outflow through absorbing faces")


class DensityField(BaseModel):
    """Nodal probability values on the active nodes of a polygon domain"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray = Field(..., description="p at active nodes, in domain order")
    time: float = 0.0
    ledger: List[MassRecord] = Field(default_factory=list)

    def copy_with(self, values: np.ndarray, time: float, record: Optional[MassRecord] = None) -> "DensityField":
        ledger = list(self.ledger)
        if record is not None:
            ledger.append(record)
        return DensityField(values=values, time=time, ledger=ledger)


class DensityDiagnostics(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    total_mass: float
    x_nodes: np.ndarray
    marginal_x: np.ndarray = Field(..., description="Density of x_bar, integrated over y_bar")
    y_nodes: np.ndarray
    marginal_y: np.ndarray


class CrosscheckReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    time: float
    tv_distance: float = Field(..., description="Total-variation distance of the binned distributions")
    n_paths: int
    n_failed: int = Field(0, description="Reduced paths that reached the singularity guard")
    fp_histogram: np.ndarray
    sde_histogram: np.ndarray
    bin_edges_x: np.ndarray
    bin_edges_y: np.ndarray


class PolygonDomain(BaseModel):
    """
    Masked vertex-centred grid on the box [0, x_max] x [0, y_max] with the corner
    below the cut line y = intercept - slope * x removed

    Arrays indexed [i, j] refer to the node (i * hx, j * hy). Active nodes are
    numbered in row-major order of the mask.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x_max: float
    y_max: float
    cut_offset: float
    slope: float = Field(..., description="Magnitude of the cut-line slope, (a1-g1)/(a2-g2)")
    intercept: float = Field(..., description="Cut-line intercept on the y_bar axis")
    hx: float
    hy: float
    mask: np.ndarray = Field(..., description="Active nodes, shape (nx, ny)")
    index: np.ndarray = Field(..., description="Unknown number of each node, -1 when inactive")
    tags: np.ndarray = Field(..., description="BoundaryTag value of each active node")

    @property
    def shape(self):
        return self.mask.shape

    @property
    def n_active(self) -> int:
        return int(self.mask.sum())

    @property
    def x_nodes(self) -> np.ndarray:
        return np.arange(self.shape[0]) * self.hx

    @property
    def y_nodes(self) -> np.ndarray:
        return np.arange(self.shape[1]) * self.hy

    @property
    def widths_x(self) -> np.ndarray:
        """Control-volume widths along x_bar, halved on the box edges."""
        w = np.full(self.shape[0], self.hx)
        w[[0, -1]] *= 0.5
        return w

    @property
    def widths_y(self) -> np.ndarray:
        w = np.full(self.shape[1], self.hy)
        w[[0, -1]] *= 0.5
        return w

    @property
    def x(self) -> np.ndarray:
        """x_bar of the active nodes."""
        return np.broadcast_to(self.x_nodes[:, None], self.shape)[self.mask]

    @property
    def y(self) -> np.ndarray:
        return np.broadcast_to(self.y_nodes[None, :], self.shape)[self.mask]

    @property
    def volumes(self) -> np.ndarray:
        return np.outer(self.widths_x, self.widths_y)[self.mask]

    @property
    def x_intercept(self) -> float:
        return self.intercept / self.slope

    def cut_line(self, x_bar):
        return self.intercept - self.slope * np.asarray(x_bar, dtype=float)

    def to_grid(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Scatter active-node values onto the full (nx, ny) grid."""
        grid = np.full(self.shape, fill, dtype=float)
        grid[self.mask] = values
        return grid
