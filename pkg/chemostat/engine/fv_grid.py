"""
Structured grid masked to the corner-cut polygon of the reduced state space.
"""
import logging

import numpy as np
from scipy import ndimage

from chemostat.entity.density import PolygonDomain
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.enums import BoundaryTag

logger = logging.getLogger(__name__)

GRID_FIT_TOLERANCE = 1e-9


def _node_count(extent: float, h: float, name: str) -> int:
    cells = extent / h
    n = int(round(cells))
    if n < 2 or abs(cells - n) > GRID_FIT_TOLERANCE * max(1.0, cells):
        raise ChemostatException(
            ErrorCode.INVALID_PARAMETERS, f"{name}={extent} is not a whole number (>= 2) of spacings {h}"
        )
    return n + 1


def _tag_nodes(mask: np.ndarray) -> np.ndarray:
    nx, ny = mask.shape
    padded = np.pad(mask, 1, constant_values=True)
    # box edges are padded active so only the cut line counts as a missing neighbour
    missing = ~(padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])

    tags = np.full(mask.shape, BoundaryTag.INTERIOR.value, dtype=object)
    tags[missing] = BoundaryTag.CUT_LINE.value
    tags[:, ny - 1] = BoundaryTag.OUTER_Y.value
    tags[nx - 1, :] = BoundaryTag.OUTER_X.value
    tags[:, 0] = BoundaryTag.AXIS_X.value
    tags[0, :] = BoundaryTag.AXIS_Y.value
    return tags[mask].astype(str)


def build_polygon_domain(theta: float, rate_x: float, rate_y: float, x_max: float, y_max: float,
                         cut_offset: float, hx: float, hy: float) -> PolygonDomain:
    """
    Mask the box grid to nodes strictly above y = theta/rate_y - (rate_x/rate_y) x + cut_offset

    Args:
        theta: Mean dilution rate
        rate_x: Asymptotic growth rate of x at large substrate
        rate_y: Asymptotic growth rate of y at large substrate
        x_max: Box extent along x_bar
        y_max: Box extent along y_bar
        cut_offset: Height of the cut line above the singularity line
        hx: Grid spacing along x_bar
        hy: Grid spacing along y_bar

    Returns:
        PolygonDomain with tagged boundary nodes
    """
    if hx <= 0 or hy <= 0:
        raise ChemostatException(ErrorCode.INVALID_PARAMETERS, f"grid spacings must be positive, got ({hx}, {hy})")
    if cut_offset <= 0:
        raise ChemostatException(
            ErrorCode.INVALID_PARAMETERS, f"cut_offset must be positive, got {cut_offset}; nodes would touch the singularity line"
        )
    if rate_x <= 0 or rate_y <= 0:
        raise ChemostatException(
            ErrorCode.DOMAIN_ERROR, f"asymptotic growth rates must be positive, got ({rate_x}, {rate_y})"
        )
    nx = _node_count(x_max, hx, "x_max")
    ny = _node_count(y_max, hy, "y_max")
    slope = rate_x / rate_y
    intercept = theta / rate_y + cut_offset

    x = np.arange(nx) * hx
    y = np.arange(ny) * hy
    mask = y[None, :] > intercept - slope * x[:, None]
    if not mask.any():
        raise ChemostatException(ErrorCode.EMPTY_DOMAIN, f"no node of the {nx}x{ny} grid lies above the cut line")

    _, n_components = ndimage.label(mask)
    if n_components != 1:
        raise ChemostatException(ErrorCode.DISCONNECTED_DOMAIN, f"active set splits into {n_components} components")

    index = np.full(mask.shape, -1, dtype=np.int64)
    index[mask] = np.arange(int(mask.sum()))

    domain = PolygonDomain(
        x_max=x_max, y_max=y_max, cut_offset=cut_offset, slope=slope, intercept=intercept,
        hx=hx, hy=hy, mask=mask, index=index, tags=_tag_nodes(mask),
    )
    logger.info(
        f"Polygon domain {nx}x{ny}, {domain.n_active} active nodes, cut line from (0, {intercept:.6g}) "
        f"to ({domain.x_intercept:.6g}, 0)"
    )
    return domain
