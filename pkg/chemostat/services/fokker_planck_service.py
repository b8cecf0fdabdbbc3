"""
Fokker-Planck evolution of the stage-5 reduced system on the corner-cut domain.
"""
import logging
import warnings
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from chemostat.common.config import SETTINGS
from chemostat.engine.fv_grid import build_polygon_domain
from chemostat.engine.fv_operator import FvOperator, assemble
from chemostat.entity.density import CrosscheckReport, DensityDiagnostics, DensityField, MassRecord, PolygonDomain
from chemostat.entity.stages import ReducedState
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.enums import DensityScheme, OuterBoundary
from chemostat.protocol.schemas import ChemostatParams, DilutionRateNoise, GeneralNoise
from chemostat.services import asymptotic_service, sde_service
from chemostat.services.model_service import monod

logger = logging.getLogger(__name__)

MASS_OUTSIDE_LIMIT = 1e-6
DEFAULT_BOX = 3.0
DEFAULT_CUT_OFFSET = 1e-2
CROSSCHECK_SDE_DT = 1e-2
CROSSCHECK_BINS = 30


def build_domain(params: ChemostatParams, x_max: float = DEFAULT_BOX, y_max: float = DEFAULT_BOX,
                 cut_offset: float = DEFAULT_CUT_OFFSET, hx: Optional[float] = None,
                 hy: Optional[float] = None) -> PolygonDomain:
    """Grid of the reduced state space cut at ``cut_offset`` above the singularity line."""
    hx = SETTINGS.FP_GRID_H if hx is None else hx
    hy = hx if hy is None else hy
    return build_polygon_domain(
        params.theta, params.curve_x.asymptotic_rate, params.curve_y.asymptotic_rate,
        x_max, y_max, cut_offset, hx, hy,
    )


def _drift(params: ChemostatParams, domain: PolygonDomain) -> Tuple[np.ndarray, np.ndarray]:
    x, y = domain.x, domain.y
    zb = asymptotic_service.stage5_zbar_array(params, x, y)
    bad = ~np.isfinite(zb)
    if bad.any():
        k = int(np.argmax(bad))
        raise ChemostatException(
            ErrorCode.ASSEMBLY_ERROR, f"no algebraic substrate at active node ({x[k]:.6g}, {y[k]:.6g})"
        )
    vx = x * (monod(params.curve_x, zb) - params.theta)
    vy = y * (monod(params.curve_y, zb) - params.theta)
    return domain.to_grid(vx), domain.to_grid(vy)


def assemble_operator(params: ChemostatParams, domain: PolygonDomain, calibration: bool = False) -> FvOperator:
    """
    Finite-volume generator of the reduced Fokker-Planck equation for the noise in ``params``

    Drift comes from the stage-5 balance. General noise diffuses with
    (sigma1^2/2) x^2 and (sigma2^2/2) y^2; dilution-rate noise uses sigma^2/2 on both
    and adds the mixed term sigma^2 d2(x y p)/dx dy. The calibration variant drops
    the drift and the x, y factors of every diffusion coefficient.
    """
    try:
        noise = params.noise
        if isinstance(noise, GeneralNoise):
            dx, dy, cross = noise.sigma1 ** 2 / 2, noise.sigma2 ** 2 / 2, 0.0
        elif isinstance(noise, DilutionRateNoise):
            dx = dy = cross = noise.sigma ** 2 / 2
        else:
            dx = dy = cross = 0.0

        X, Y = np.meshgrid(domain.x_nodes, domain.y_nodes, indexing="ij")
        if calibration:
            zeros = np.zeros(domain.shape)
            ones = np.ones(domain.shape)
            return assemble(domain, zeros, zeros, dx, dy, ones, ones, cross, ones)
        vx, vy = _drift(params, domain)
        return assemble(domain, vx, vy, dx, dy, X ** 2, Y ** 2, cross, X * Y)
    except ChemostatException:
        raise
    except Exception as e:
        logger.error(f"Operator assembly failed: {e}", exc_info=True)
        raise ChemostatException(ErrorCode.ASSEMBLY_ERROR, str(e))


def apply_boundaries(operator: FvOperator, outer: OuterBoundary = OuterBoundary.REFLECTING,
                     cut_line_flux: bool = True) -> FvOperator:
    """
    Close the operator: zero normal flux on the cut line, reflecting or absorbing outer box

    The axes need no rule; their degenerate coefficients vanish there.
    ``cut_line_flux=False`` opens the cut line as a sink and exists for comparison runs.
    """
    return operator.with_boundaries(outer=outer, cut_line_flux=cut_line_flux)


def _gaussian_values(domain: PolygonDomain, means: Sequence[float], sds: Sequence[float]) -> np.ndarray:
    return norm.pdf(domain.x, means[0], sds[0]) * norm.pdf(domain.y, means[1], sds[1])


def gaussian_mass_outside(domain: PolygonDomain, means: Sequence[float], sds: Sequence[float]) -> float:
    """Upper bound on the Gaussian probability outside the polygon (box tails plus the cut half-plane)."""
    mx, my = means
    sx, sy = sds
    box = (norm.cdf(0.0, mx, sx) + norm.sf(domain.x_max, mx, sx)
           + norm.cdf(0.0, my, sy) + norm.sf(domain.y_max, my, sy))
    # below the cut line: slope x + y < intercept, a normal in one variable
    line_mean = domain.slope * mx + my
    line_sd = float(np.hypot(domain.slope * sx, sy))
    return float(box + norm.cdf(domain.intercept, line_mean, line_sd))


def gaussian_mass(domain: PolygonDomain, means: Sequence[float] = (0.5, 0.5),
                  sds: Sequence[float] = (0.05, 0.05)) -> float:
    """Midpoint-rule mass of the Gaussian on the active nodes before renormalisation."""
    return float(domain.volumes @ _gaussian_values(domain, means, sds))


def gaussian_initial(domain: PolygonDomain, means: Sequence[float] = (0.5, 0.5),
                     sds: Sequence[float] = (0.05, 0.05)) -> DensityField:
    """
    Product Gaussian sampled at the active nodes, renormalised to unit discrete mass

    Raises:
        ChemostatException: MASS_OUTSIDE_DOMAIN when more than 1e-6 of the Gaussian lies outside
    """
    if min(sds) <= 0:
        raise ChemostatException(ErrorCode.INVALID_PARAMETERS, f"standard deviations must be positive, got {sds}")
    outside = gaussian_mass_outside(domain, means, sds)
    if outside > MASS_OUTSIDE_LIMIT:
        raise ChemostatException(
            ErrorCode.MASS_OUTSIDE_DOMAIN, f"{outside:.3e} of the initial Gaussian lies outside the domain"
        )
    values = _gaussian_values(domain, means, sds)
    raw = float(domain.volumes @ values)
    if raw <= 0:
        raise ChemostatException(ErrorCode.MASS_OUTSIDE_DOMAIN, "initial Gaussian has no mass on the active nodes")
    logger.info(f"Initial Gaussian at {tuple(means)} with sds {tuple(sds)}: discrete mass {raw:.9f} before normalisation")
    values = values / raw
    return DensityField(values=values, time=0.0, ledger=[MassRecord(t=0.0, mass=float(domain.volumes @ values))])


def step_density(field: DensityField, operator: FvOperator, dt: float,
                 scheme: DensityScheme = DensityScheme.IMPLICIT_EULER) -> DensityField:
    """
    One implicit step with ledger bookkeeping

    Values below -FP_CLIP_TOLERANCE are clipped to zero; the removed mass is
    recorded with the step and logged.
    """
    if dt <= 0:
        raise ChemostatException(ErrorCode.INVALID_PARAMETERS, f"dt must be positive, got {dt}")
    old = field.values
    new = operator.step(old, dt, scheme, SETTINGS.FP_SOLVER_RTOL)

    clipped = 0.0
    negative = new < -SETTINGS.FP_CLIP_TOLERANCE
    if negative.any():
        clipped = float(-(operator.volumes[negative] @ new[negative]))
        new = np.where(negative, 0.0, new)
        logger.warning(f"Clipped {int(negative.sum())} negative nodes at t={field.time + dt:.6g}, mass {clipped:.3e}")

    if scheme == DensityScheme.IMPLICIT_EULER:
        leak = dt * operator.leak_rate(new)
    else:
        leak = 0.5 * dt * (operator.leak_rate(old) + operator.leak_rate(new))
    leaked = (field.ledger[-1].leaked if field.ledger else 0.0) + leak
    record = MassRecord(t=field.time + dt, mass=float(operator.volumes @ new), clipped=clipped, leaked=leaked)
    return field.copy_with(new, field.time + dt, record)


def evolve(field: DensityField, operator: FvOperator, t_end: float, dt: Optional[float] = None,
           scheme: DensityScheme = DensityScheme.IMPLICIT_EULER,
           snapshot_times: Sequence[float] = ()) -> Tuple[DensityField, Dict[float, DensityField]]:
    """
    Step from field.time to t_end with a fixed dt

    Returns the final field and the fields at the requested snapshot times, each
    taken at the first step reaching it.
    """
    dt = SETTINGS.FP_DT if dt is None else dt
    n_steps = int(np.ceil((t_end - field.time) / dt - 1e-9))
    pending = sorted(t for t in snapshot_times if t >= field.time)
    snapshots: Dict[float, DensityField] = {}
    while pending and pending[0] <= field.time:
        snapshots[pending.pop(0)] = field

    logger.info(f"Evolving density from t={field.time:.6g} to t={t_end:.6g} in {n_steps} {scheme.value} steps")
    for _ in range(n_steps):
        field = step_density(field, operator, dt, scheme)
        while pending and pending[0] <= field.time + 1e-9 * dt:
            snapshots[pending.pop(0)] = field
    last = field.ledger[-1] if field.ledger else None
    if last is not None:
        logger.info(f"t={field.time:.6g}: mass {last.mass:.12f}, leaked {last.leaked:.3e}")
    return field, snapshots


def diagnostics(field: DensityField, domain: PolygonDomain) -> DensityDiagnostics:
    """Total mass and the two marginal densities by the midpoint rule."""
    grid = domain.to_grid(field.values)
    marginal_x = grid @ domain.widths_y
    marginal_y = domain.widths_x @ grid
    return DensityDiagnostics(
        total_mass=float(domain.volumes @ field.values),
        x_nodes=domain.x_nodes, marginal_x=marginal_x,
        y_nodes=domain.y_nodes, marginal_y=marginal_y,
    )


def mass_in_region(field: DensityField, domain: PolygonDomain,
                   x_range: Tuple[float, float] = (-np.inf, np.inf),
                   y_range: Tuple[float, float] = (-np.inf, np.inf),
                   half_plane: Optional[Tuple[float, float, float]] = None) -> float:
    """
    Probability on active nodes inside a rectangle, optionally intersected with a half-plane

    Rectangles are closed; ``half_plane=(a, b, c)`` keeps a x + b y <= c. A region
    with no active node gives 0 and a warning.
    """
    x, y = domain.x, domain.y
    inside = (x >= x_range[0]) & (x <= x_range[1]) & (y >= y_range[0]) & (y <= y_range[1])
    if half_plane is not None:
        a, b, c = half_plane
        inside &= a * x + b * y <= c
    if not inside.any():
        message = f"region x in {x_range}, y in {y_range}, half-plane {half_plane} contains no active node"
        logger.warning(message)
        warnings.warn(message, stacklevel=2)
        return 0.0
    return float(domain.volumes[inside] @ field.values[inside])


def _sample_starts(domain: PolygonDomain, means: Sequence[float], sds: Sequence[float],
                   n: int, seed: int) -> np.ndarray:
    # counter word 3 keeps these draws apart from the Wiener streams of the same seed
    rng = np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, 1]))
    accepted = np.empty((0, 2))
    while accepted.shape[0] < n:
        draw = rng.normal(loc=means, scale=sds, size=(2 * n, 2))
        ok = ((draw >= 0).all(axis=1) & (draw[:, 0] <= domain.x_max) & (draw[:, 1] <= domain.y_max)
              & (draw[:, 1] > domain.cut_line(draw[:, 0])))
        accepted = np.vstack([accepted, draw[ok]])
    return accepted[:n]


def _same_model(a: ChemostatParams, b: ChemostatParams) -> bool:
    return (a.theta == b.theta and a.noise == b.noise
            and a.curve_x == b.curve_x and a.curve_y == b.curve_y)


def fp_vs_sde_crosscheck(params: ChemostatParams, field: DensityField, domain: PolygonDomain,
                         fp_params: Optional[ChemostatParams] = None, n_paths: int = 10_000, seed: int = 0,
                         sde_dt: float = CROSSCHECK_SDE_DT, means: Sequence[float] = (0.5, 0.5),
                         sds: Sequence[float] = (0.05, 0.05), bins: int = CROSSCHECK_BINS) -> CrosscheckReport:
    """
    Compare a density field with a reduced Langevin ensemble at the field's time

    Starts are drawn from the same Gaussian the field started from. Both sides are
    binned on a bins x bins grid over the box and compared by total variation.

    Args:
        params: Model of the Langevin ensemble
        field: Density evolved from gaussian_initial(domain, means, sds)
        domain: Domain of the field
        fp_params: Model the field was computed with; must match ``params``
        n_paths: Ensemble size
        seed: Seed of the start sampler and the Wiener streams
        sde_dt: Euler-Maruyama step
        means: Initial Gaussian means
        sds: Initial Gaussian standard deviations
        bins: Bins per axis

    Returns:
        CrosscheckReport
    """
    if fp_params is not None and not _same_model(params, fp_params):
        raise ChemostatException(
            ErrorCode.MISMATCHED_CONFIG, "density and ensemble use different theta, noise or growth curves"
        )
    if field.time <= 0:
        raise ChemostatException(ErrorCode.INVALID_PARAMETERS, "crosscheck needs a field evolved past t=0")

    starts = _sample_starts(domain, means, sds, n_paths, seed)
    ensemble = sde_service.simulate_reduced(
        params, ReducedState(x_bar=means[0], y_bar=means[1]), sde_dt, field.time, seed, n_paths,
        guard=domain.cut_offset / 2, starts=starts,
    )
    end = ensemble.final[~ensemble.failed]
    if end.shape[0] == 0:
        raise ChemostatException(ErrorCode.NUMERICAL_FAILURE, "every reduced path reached the singularity guard")

    edges_x = np.linspace(0.0, domain.x_max, bins + 1)
    edges_y = np.linspace(0.0, domain.y_max, bins + 1)
    sde_hist, _, _ = np.histogram2d(end[:, 0], end[:, 1], bins=[edges_x, edges_y])
    sde_hist /= end.shape[0]
    fp_hist, _, _ = np.histogram2d(domain.x, domain.y, bins=[edges_x, edges_y], weights=domain.volumes * field.values)
    fp_hist /= fp_hist.sum()

    tv = 0.5 * float(np.abs(fp_hist - sde_hist).sum())
    n_failed = int(ensemble.failed.sum())
    logger.info(f"FP vs SDE at t={field.time:.6g}: TV distance {tv:.4f} over {end.shape[0]} paths ({n_failed} failed)")
    return CrosscheckReport(
        time=field.time, tv_distance=tv, n_paths=n_paths, n_failed=n_failed,
        fp_histogram=fp_hist, sde_histogram=sde_hist, bin_edges_x=edges_x, bin_edges_y=edges_y,
    )
