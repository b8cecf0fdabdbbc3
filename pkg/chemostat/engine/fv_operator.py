"""
Conservative finite-volume drift-diffusion operator on a PolygonDomain.

Fluxes are evaluated on the faces between neighbouring active nodes, so every
face moves probability from one control volume to the other and the
volume-weighted column sums of the assembled operator vanish. Faces towards
inactive nodes or out of the box carry no flux unless a boundary rule adds one.
"""
import logging
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, bicgstab, spilu

from chemostat.entity.density import PolygonDomain
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.enums import DensityScheme, OuterBoundary

logger = logging.getLogger(__name__)

Triplets = Tuple[np.ndarray, np.ndarray, np.ndarray]

ILU_DROP_TOL = 1e-5
ILU_FILL_FACTOR = 10.0
MAX_SOLVER_ITERATIONS = 2000


def _empty() -> Triplets:
    return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0)


def _concat(parts) -> Triplets:
    parts = [p for p in parts if p[0].size]
    if not parts:
        return _empty()
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(3))


def _face_triplets(index: np.ndarray, velocity: np.ndarray, weight: np.ndarray, diffusion: float,
                   h: float, widths_across: np.ndarray, volumes: np.ndarray) -> Triplets:
    """
    Advection-diffusion fluxes through the faces between [i, j] and [i + 1, j]

    F = max(v_L, 0) p_L + min(v_R, 0) p_R - D (G_R p_R - G_L p_L) / h
    """
    left, right = index[:-1], index[1:]
    valid = (left >= 0) & (right >= 0)
    L, R = left[valid], right[valid]
    w = np.broadcast_to(widths_across[None, :], valid.shape)[valid]
    vol_l, vol_r = volumes[:-1][valid], volumes[1:][valid]

    c_left = np.maximum(velocity[:-1][valid], 0.0) + diffusion * weight[:-1][valid] / h
    c_right = np.minimum(velocity[1:][valid], 0.0) - diffusion * weight[1:][valid] / h

    rows = np.concatenate([L, L, R, R])
    cols = np.concatenate([L, R, L, R])
    vals = np.concatenate([-c_left * w / vol_l, -c_right * w / vol_l, c_left * w / vol_r, c_right * w / vol_r])
    return rows, cols, vals


def _across_stencil(index: np.ndarray, q: np.ndarray, h: float):
    """
    Nodal derivative of q p along axis 1 as (columns, coefficients) for the slots below, self, above

    Centred when both neighbours are active, one-sided when only one is, zero otherwise.
    """
    idx = np.pad(index, ((0, 0), (1, 1)), constant_values=-1)
    qp = np.pad(q, ((0, 0), (1, 1)))
    below, above = idx[:, :-2], idx[:, 2:]
    q_below, q_above = qp[:, :-2], qp[:, 2:]
    has_b, has_a = below >= 0, above >= 0
    both = has_b & has_a
    only_a = has_a & ~has_b
    only_b = has_b & ~has_a

    coef_above = np.where(both, q_above / (2 * h), np.where(only_a, q_above / h, 0.0))
    coef_below = np.where(both, -q_below / (2 * h), np.where(only_b, -q_below / h, 0.0))
    coef_self = np.where(only_a, -q / h, np.where(only_b, q / h, 0.0))
    return (below, index, above), (coef_below, coef_self, coef_above)


def _cross_triplets(index: np.ndarray, q: np.ndarray, coefficient: float, h_across: float,
                    widths_across: np.ndarray, volumes: np.ndarray) -> Triplets:
    """Mixed flux -coefficient * d(q p)/d(across) on the faces between [i, j] and [i + 1, j]."""
    left, right = index[:-1], index[1:]
    valid = (left >= 0) & (right >= 0)
    L, R = left[valid], right[valid]
    w = np.broadcast_to(widths_across[None, :], valid.shape)[valid]
    vol_l, vol_r = volumes[:-1][valid], volumes[1:][valid]
    cols, coefs = _across_stencil(index, q, h_across)

    parts = []
    for side in (slice(None, -1), slice(1, None)):
        for col, coef in zip(cols, coefs):
            c = col[side][valid]
            # face derivative is the mean of the two nodal derivatives
            flux = -coefficient * 0.5 * coef[side][valid]
            keep = flux != 0.0
            parts.append((L[keep], c[keep], -flux[keep] * w[keep] / vol_l[keep]))
            parts.append((R[keep], c[keep], flux[keep] * w[keep] / vol_r[keep]))
    return _concat(parts)


def _missing_neighbour(mask: np.ndarray, axis: int, sign: int) -> np.ndarray:
    """Active nodes whose in-grid neighbour in direction sign along axis is inactive."""
    m = np.moveaxis(mask, axis, 0)
    out = np.zeros_like(m)
    if sign > 0:
        out[:-1] = m[:-1] & ~m[1:]
    else:
        out[1:] = m[1:] & ~m[:-1]
    return np.moveaxis(out, 0, axis)


def _box_edge(mask: np.ndarray, axis: int) -> np.ndarray:
    edge = np.zeros_like(mask)
    if axis == 0:
        edge[-1, :] = True
    else:
        edge[:, -1] = True
    return edge & mask


def _to_matrix(triplets: Triplets, n: int) -> sparse.csr_matrix:
    rows, cols, vals = triplets
    if rows.size and (rows.min() < 0 or cols.min() < 0):
        raise ChemostatException(ErrorCode.ASSEMBLY_ERROR, "stencil references an inactive node")
    if not np.all(np.isfinite(vals)):
        raise ChemostatException(ErrorCode.ASSEMBLY_ERROR, "non-finite operator coefficient")
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


class FvOperator:
    """
    Assembled generator L of dp/dt = L p on the active nodes

    ``base`` holds the advection-diffusion part and ``cross`` the mixed-derivative
    part; ``matrix`` becomes available once boundary rules have been applied.
    """

    def __init__(self, domain: PolygonDomain, base: sparse.csr_matrix, cross: sparse.csr_matrix,
                 velocity: Tuple[np.ndarray, np.ndarray], diffusion: Tuple[float, float],
                 weight: Tuple[np.ndarray, np.ndarray]):
        self.domain = domain
        self.base = base
        self.cross = cross
        self.velocity = velocity
        self.diffusion = diffusion
        self.weight = weight
        self.volumes = domain.volumes
        self.outer: Optional[OuterBoundary] = None
        self.cut_line_flux: Optional[bool] = None
        self.outflow = np.zeros(domain.n_active)
        self._boundary: Optional[sparse.csr_matrix] = None
        self._matrix: Optional[sparse.csr_matrix] = None
        self._solvers: Dict[Tuple[float, DensityScheme], tuple] = {}

    @property
    def size(self) -> int:
        return self.domain.n_active

    @property
    def has_boundaries(self) -> bool:
        return self._boundary is not None

    @property
    def matrix(self) -> sparse.csr_matrix:
        if self._boundary is None:
            raise ChemostatException(ErrorCode.ASSEMBLY_ERROR, "boundary rules have not been applied")
        if self._matrix is None:
            self._matrix = (self.base + self.cross + self._boundary).tocsr()
        return self._matrix

    def column_balance(self) -> np.ndarray:
        """Volume-weighted column sums V^T L, the rate of total-mass change per unit of p_j."""
        return self.matrix.T @ self.volumes

    def leak_rate(self, values: np.ndarray) -> float:
        return float(self.outflow @ values)

    def _outflow_grid(self, faces: np.ndarray, axis: int, sign: int) -> np.ndarray:
        """Per-node coefficient of the flux leaving through faces towards a zero ghost value."""
        d = self.domain
        h = d.hx if axis == 0 else d.hy
        across = d.widths_y[None, :] if axis == 0 else d.widths_x[:, None]
        c = np.maximum(sign * self.velocity[axis], 0.0) + self.diffusion[axis] * self.weight[axis] / h
        return np.where(faces, c * across, 0.0)

    def with_boundaries(self, outer: OuterBoundary = OuterBoundary.REFLECTING,
                        cut_line_flux: bool = True) -> "FvOperator":
        """
        Copy of the operator with boundary rules applied

        Cut-line faces carry zero normal flux unless ``cut_line_flux`` is False, in
        which case the inactive side acts as a zero-density sink. Reflecting outer
        faces carry no flux; absorbing ones see a zero ghost value and their outflow
        is recorded as leakage.
        """
        d = self.domain
        outflow = np.zeros(d.shape)
        if outer == OuterBoundary.ABSORBING:
            for axis in (0, 1):
                outflow += self._outflow_grid(_box_edge(d.mask, axis), axis, +1)
        if not cut_line_flux:
            for axis in (0, 1):
                for sign in (-1, +1):
                    outflow += self._outflow_grid(_missing_neighbour(d.mask, axis, sign), axis, sign)

        op = FvOperator(d, self.base, self.cross, self.velocity, self.diffusion, self.weight)
        op.outer = outer
        op.cut_line_flux = cut_line_flux
        op.outflow = outflow[d.mask]
        op._boundary = sparse.diags(-op.outflow / self.volumes, format="csr")
        logger.info(
            f"Boundary rules applied: outer={outer.value}, cut-line flux {'closed' if cut_line_flux else 'open'}, "
            f"{int(np.count_nonzero(op.outflow))} outflow nodes"
        )
        return op

    def _solver(self, dt: float, scheme: DensityScheme):
        key = (dt, scheme)
        if key not in self._solvers:
            identity = sparse.identity(self.size, format="csr")
            if scheme == DensityScheme.IMPLICIT_EULER:
                lhs, rhs = (identity - dt * self.matrix).tocsr(), None
            else:
                lhs = (identity - 0.5 * dt * self.matrix).tocsr()
                rhs = (identity + 0.5 * dt * self.matrix).tocsr()
            try:
                ilu = spilu(lhs.tocsc(), drop_tol=ILU_DROP_TOL, fill_factor=ILU_FILL_FACTOR)
                preconditioner = LinearOperator(lhs.shape, lambda x: ilu.solve(x))
            except RuntimeError as e:
                logger.warning(f"ILU factorisation failed ({e}); solving without a preconditioner")
                preconditioner = None
            self._solvers[key] = (lhs, rhs, preconditioner)
        return self._solvers[key]

    def step(self, values: np.ndarray, dt: float, scheme: DensityScheme, rtol: float) -> np.ndarray:
        """Advance nodal values by one implicit step."""
        lhs, rhs, preconditioner = self._solver(dt, scheme)
        b = values if rhs is None else rhs @ values
        solution, info = bicgstab(lhs, b, x0=values, rtol=rtol, atol=0.0, M=preconditioner,
                                  maxiter=MAX_SOLVER_ITERATIONS)
        if info != 0:
            residual = np.linalg.norm(lhs @ solution - b) / max(np.linalg.norm(b), np.finfo(float).tiny)
            raise ChemostatException(
                ErrorCode.SOLVER_NON_CONVERGENCE,
                f"bicgstab stopped with info={info}, relative residual {residual:.3e} (target {rtol:.1e})",
            )
        return solution


def assemble(domain: PolygonDomain, velocity_x: np.ndarray, velocity_y: np.ndarray,
             diffusion_x: float, diffusion_y: float, weight_x: np.ndarray, weight_y: np.ndarray,
             cross_coefficient: float = 0.0, cross_weight: Optional[np.ndarray] = None) -> FvOperator:
    """
    Assemble advection, diagonal diffusion and the optional mixed-derivative term

    Nodal arrays are full-grid shaped (nx, ny). The flux along x_bar is
    v_x p - D_x d(G_x p)/dx - c d(Q p)/dy and along y_bar
    v_y p - D_y d(G_y p)/dy - c d(Q p)/dx, with Q = ``cross_weight``.
    """
    n = domain.n_active
    vol = domain.to_grid(domain.volumes, fill=1.0)
    index = domain.index

    base = _concat([
        _face_triplets(index, velocity_x, weight_x, diffusion_x, domain.hx, domain.widths_y, vol),
        _face_triplets(index.T, velocity_y.T, weight_y.T, diffusion_y, domain.hy, domain.widths_x, vol.T),
    ])
    if cross_coefficient and cross_weight is not None:
        cross = _concat([
            _cross_triplets(index, cross_weight, cross_coefficient, domain.hy, domain.widths_y, vol),
            _cross_triplets(index.T, cross_weight.T, cross_coefficient, domain.hx, domain.widths_x, vol.T),
        ])
    else:
        cross = _empty()

    op = FvOperator(
        domain, _to_matrix(base, n), _to_matrix(cross, n),
        velocity=(velocity_x, velocity_y), diffusion=(diffusion_x, diffusion_y), weight=(weight_x, weight_y),
    )
    logger.info(f"Assembled operator on {n} nodes, {op.base.nnz} advection-diffusion and {op.cross.nnz} cross entries")
    return op
