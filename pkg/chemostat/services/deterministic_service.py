import concurrent.futures
import logging
from itertools import product
from typing import List, Optional, Sequence, Tuple

import numpy as np

from chemostat.common.config import SETTINGS
from chemostat.engine.integrator import integrate_clamped
from chemostat.entity.stability import StabilityReport, SteadyStateStability
from chemostat.entity.sweep import SurvivorMap, SweepAxis, SweepCell
from chemostat.entity.trajectory import Trajectory
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.enums import Population, SurvivorLabel, Verdict
from chemostat.protocol.schemas import ChemostatParams, OdeControls
from chemostat.services.model_service import monod

logger = logging.getLogger(__name__)

JACOBIAN_STEP = 1e-5


def rhs(params: ChemostatParams, s: np.ndarray) -> np.ndarray:
    """
    Right-hand side of the dimensionless chemostat

    Args:
        params: Model parameters, theta is the (mean) dilution rate
        s: State (x, y, z) with shape (..., 3)

    Returns:
        Time derivative with the shape of s
    """
    s = np.asarray(s, dtype=float)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    fz = monod(params.curve_x, z)
    gz = monod(params.curve_y, z)
    theta = params.theta
    out = np.empty_like(s)
    out[..., 0] = x * (fz - theta)
    out[..., 1] = y * (gz - theta)
    out[..., 2] = theta * (params.z_f - z) - x * fz - y * gz
    return out


def mass_relaxation(params: ChemostatParams, m0: float, t: np.ndarray) -> np.ndarray:
    """Exact total biomass plus substrate, m' = theta (z_f - m)."""
    return params.z_f + (m0 - params.z_f) * np.exp(-params.theta * np.asarray(t))


def integrate_ode(params: ChemostatParams, s0: Sequence[float], t_end: float,
                  controls: Optional[OdeControls] = None) -> Trajectory:
    """
    Adaptive integration of the deterministic system on an equally spaced output grid

    Args:
        params: Model parameters
        s0: Initial state (x, y, z), non-negative
        t_end: Final time
        controls: Tolerances, method and output grid

    Returns:
        Trajectory with clamp events of the non-negativity policy
    """
    if t_end <= 0:
        raise ChemostatException(ErrorCode.INVALID_PARAMETERS, f"t_end must be positive, got {t_end}")
    if min(s0) < 0:
        raise ChemostatException(ErrorCode.DOMAIN_ERROR, f"initial state must be non-negative, got {tuple(s0)}")
    controls = controls or OdeControls(rtol=SETTINGS.ODE_RTOL, atol_fraction=SETTINGS.ODE_ATOL_FRACTION)

    t_eval = np.linspace(0.0, t_end, controls.n_output)
    atol = controls.atol_fraction * params.z_f
    states, clamps = integrate_clamped(
        lambda t, s: rhs(params, s), s0, t_eval,
        rtol=controls.rtol, atol=atol, method=controls.method, max_step=controls.max_step,
    )
    return Trajectory(times=t_eval, states=states, clamps=clamps)


def coexistence_line(params: ChemostatParams, x: float) -> float:
    if not 0 <= x <= params.z_f - 1:
        raise ChemostatException(ErrorCode.DOMAIN_ERROR, f"x={x} outside [0, z_f - 1]")
    return params.z_f - x - 1


def reduced_rhs(params: ChemostatParams, x: float, y: float) -> np.ndarray:
    # planar system on the attractor x + y + z = z_f
    z = params.z_f - x - y
    return np.array([
        x * (monod(params.curve_x, z) - params.theta),
        y * (monod(params.curve_y, z) - params.theta),
    ])


def jacobian_numeric(params: ChemostatParams, point: Tuple[float, float], h: float = JACOBIAN_STEP) -> np.ndarray:
    """Central-difference Jacobian of the mass-reduced planar system at (x, y)."""
    x, y = point
    jac = np.empty((2, 2))
    jac[:, 0] = (reduced_rhs(params, x + h, y) - reduced_rhs(params, x - h, y)) / (2 * h)
    jac[:, 1] = (reduced_rhs(params, x, y + h) - reduced_rhs(params, x, y - h)) / (2 * h)
    return jac


def eigenvalues_washout(params: ChemostatParams) -> Tuple[float, float]:
    cx, cy, theta, z_f = params.curve_x, params.curve_y, params.theta, params.z_f
    return (
        (cy.a * z_f - (cy.b + z_f) * (cy.gamma + theta)) / (cy.b + z_f),
        (cx.a * z_f - (cx.b + z_f) * (cx.gamma + theta)) / (cx.b + z_f),
    )


def _break_even_substrate(params: ChemostatParams, which: Population) -> float:
    curve = params.curve_y if which == Population.Y else params.curve_x
    k = curve.gamma + params.theta
    if k >= curve.a:
        raise ChemostatException(
            ErrorCode.STEADY_STATE_ABSENT,
            f"{which.value}-survivor: theta + gamma = {k:.6g} >= a = {curve.a:.6g}",
        )
    z_star = curve.b * k / (curve.a - k)
    if z_star >= params.z_f:
        raise ChemostatException(
            ErrorCode.STEADY_STATE_ABSENT,
            f"{which.value}-survivor: break-even substrate {z_star:.6g} >= z_f",
        )
    return z_star


def single_survivor_state(params: ChemostatParams, which: Population) -> Tuple[float, float, float]:
    """Steady state where only ``which`` persists."""
    z_star = _break_even_substrate(params, which)
    level = params.z_f - z_star
    return (0.0, level, z_star) if which == Population.Y else (level, 0.0, z_star)


def eigenvalues_single_survivor(params: ChemostatParams, which: Population) -> Tuple[float, float]:
    """
    Closed-form eigenvalues at the single-survivor steady state

    Returns:
        (lambda1, lambda2): lambda1 is the survivor's own relaxation rate,
        lambda2 the invasion rate of the extinct population
    """
    _break_even_substrate(params, which)
    theta, z_f = params.theta, params.z_f
    # survivor s, invader i
    s, i = (params.curve_y, params.curve_x) if which == Population.Y else (params.curve_x, params.curve_y)
    ks, ki = s.gamma + theta, i.gamma + theta
    lam1 = -(s.a - ks) * (s.a * z_f - (s.b + z_f) * ks) / (s.a * s.b)
    lam2 = (ks * (i.a * s.b + (i.b - s.b) * ki) - s.a * i.b * ki) / (s.a * i.b - (i.b - s.b) * ks)
    return lam1, lam2


def _check_unit_theta(params: ChemostatParams):
    if abs(params.theta - 1.0) > SETTINGS.LINE_THETA_TOL:
        raise ChemostatException(
            ErrorCode.LINE_REQUIRES_UNIT_THETA, f"line of steady states exists only at theta=1, got {params.theta}"
        )


def eigenvalue_coexistence_line(params: ChemostatParams, A: float) -> Tuple[float, float]:
    """
    Non-zero eigenvalue at the line point whose y-coordinate is A

    Returns:
        (lambda1, 0.0)
    """
    _check_unit_theta(params)
    z_f = params.z_f
    if not 0 < A < z_f - 1:
        raise ChemostatException(ErrorCode.DOMAIN_ERROR, f"A={A} outside (0, z_f - 1)")
    a1, b1 = params.curve_x.a, params.curve_x.b
    a2, b2 = params.curve_y.a, params.curve_y.b
    lam1 = (2 * a1 * b1 * (b2 + 1) ** 2 * (A - z_f + 1) - 2 * A * a2 * (b1 + 1) ** 2 * b2) / (
        2 * (b1 + 1) ** 2 * (b2 + 1) ** 2
    )
    return lam1, 0.0


def _verdict(eigenvalues: Tuple[float, float]) -> Verdict:
    return Verdict.STABLE if max(eigenvalues) < 0 else Verdict.UNSTABLE


def stability_report(params: ChemostatParams) -> StabilityReport:
    """Eigenvalues and verdicts of the washout, single-survivor and line steady states."""
    z_f = params.z_f
    rows = []

    washout = eigenvalues_washout(params)
    rows.append(SteadyStateStability(
        name="washout", state=(0.0, 0.0, z_f), eigenvalues=washout, verdict=_verdict(washout),
        conditions=[f"g(z_f) {'<' if washout[0] < 0 else '>='} theta",
                    f"f(z_f) {'<' if washout[1] < 0 else '>='} theta"],
    ))

    for which, name, other in ((Population.Y, "y-survivor", "f"), (Population.X, "x-survivor", "g")):
        try:
            state = single_survivor_state(params, which)
            eig = eigenvalues_single_survivor(params, which)
            rows.append(SteadyStateStability(
                name=name, state=state, eigenvalues=eig, verdict=_verdict(eig),
                conditions=[f"{other}(z*) {'<' if eig[1] < 0 else '>='} theta"],
            ))
        except ChemostatException as e:
            rows.append(SteadyStateStability(name=name, verdict=Verdict.ABSENT, conditions=[e.message]))

    on_line = (
        abs(params.theta - 1.0) <= SETTINGS.LINE_THETA_TOL
        and abs(monod(params.curve_x, 1.0) - 1.0) <= 1e-8
        and abs(monod(params.curve_y, 1.0) - 1.0) <= 1e-8
    )
    if on_line:
        A = (z_f - 1) / 2
        eig = eigenvalue_coexistence_line(params, A)
        rows.append(SteadyStateStability(
            name="coexistence-line", state=(z_f - 1 - A, A, 1.0), eigenvalues=eig,
            verdict=Verdict.NEUTRAL_ALONG_LINE if eig[0] < 0 else Verdict.UNSTABLE,
            conditions=["z_f > 1", "theta = 1"],
        ))
    else:
        rows.append(SteadyStateStability(name="coexistence-line", verdict=Verdict.ABSENT,
                                         conditions=["requires theta = 1 and f(1) = g(1) = 1"]))

    return StabilityReport(theta=params.theta, z_f=z_f, rows=rows)


def equal_start(params: ChemostatParams, population: float = 1.0) -> Tuple[float, float, float]:
    """Equal initial populations with the remaining mass in the substrate."""
    return population, population, max(params.z_f - 2 * population, 0.0)


def classify_survivor(params: ChemostatParams, state: np.ndarray) -> SurvivorLabel:
    """
    Label the end state of a run

    A population is extinct when it is below EXTINCTION_FRACTION * z_f and its
    per-capita growth at the final substrate is below the dilution rate.
    """
    x, y, z = (float(v) for v in state)
    threshold = SETTINGS.EXTINCTION_FRACTION * params.z_f
    z = max(z, 0.0)
    x_low, y_low = x < threshold, y < threshold
    x_dead = x_low and monod(params.curve_x, z) - params.theta < 0
    y_dead = y_low and monod(params.curve_y, z) - params.theta < 0
    if x_low and y_low:
        return SurvivorLabel.BOTH_WASHOUT if x_dead and y_dead else SurvivorLabel.UNDETERMINED
    if y_dead:
        return SurvivorLabel.X
    if x_dead:
        return SurvivorLabel.Y
    if x_low or y_low:
        return SurvivorLabel.UNDETERMINED
    if abs(params.theta - 1.0) <= SETTINGS.LINE_THETA_TOL:
        return SurvivorLabel.COEXIST
    return SurvivorLabel.UNDETERMINED


def _sweep_cell(params: ChemostatParams, p1: float, p2: Optional[float], population: float,
                t_end: float, controls: OdeControls) -> SweepCell:
    try:
        traj = integrate_ode(params, equal_start(params, population), t_end, controls)
        final = traj.final_state
        return SweepCell(
            param1=p1, param2=p2, survivor_label=classify_survivor(params, final),
            final_x=float(final[0]), final_y=float(final[1]), final_z=float(final[2]),
        )
    except ChemostatException as e:
        logger.warning(f"sweep cell ({p1}, {p2}) failed: {e}")
        return SweepCell(param1=p1, param2=p2, survivor_label=SurvivorLabel.NUMERICAL_FAILURE, error=str(e))
    except Exception as e:
        logger.error(f"sweep cell ({p1}, {p2}) raised unexpectedly: {e}", exc_info=True)
        return SweepCell(param1=p1, param2=p2, survivor_label=SurvivorLabel.NUMERICAL_FAILURE, error=str(e))


def survivor_sweep(base: ChemostatParams, axis1: SweepAxis, axis2: Optional[SweepAxis] = None,
                   t_end: float = 3000.0, population: float = 1.0,
                   controls: Optional[OdeControls] = None, workers: Optional[int] = None) -> SurvivorMap:
    """
    Survivor label per grid cell, starting every cell from equal populations

    Args:
        base: Parameters shared by all cells
        axis1: First swept parameter
        axis2: Optional second swept parameter
        t_end: Integration horizon per cell
        population: Initial level of both populations
        controls: ODE controls, BDF by default since the long horizons are stiff.
            LSODA wraps non-reentrant Fortran and always runs serially
        workers: Thread pool width, SETTINGS.WORKERS by default

    Returns:
        SurvivorMap with one cell per grid point in row-major order
    """
    controls = controls or OdeControls(rtol=SETTINGS.ODE_RTOL, atol_fraction=SETTINGS.ODE_ATOL_FRACTION,
                                       method="BDF", n_output=2)
    if controls.method == "LSODA" and (workers or SETTINGS.WORKERS) > 1:
        logger.info("LSODA is not thread-safe, sweeping serially")
        workers = 1
    grid = list(product(axis1.values, axis2.values if axis2 else [None]))

    cells_params = []
    for p1, p2 in grid:
        changes = {axis1.name: p1}
        if axis2 is not None:
            changes[axis2.name] = p2
        try:
            cells_params.append(base.with_updates(**changes))
        except Exception as e:
            raise ChemostatException(ErrorCode.INVALID_PARAMETERS, f"sweep cell ({p1}, {p2}) is invalid: {e}")

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers or SETTINGS.WORKERS) as executor:
        futures = [
            executor.submit(_sweep_cell, params, p1, p2, population, t_end, controls)
            for params, (p1, p2) in zip(cells_params, grid)
        ]
        cells: List[SweepCell] = [future.result() for future in futures]

    failed = sum(cell.survivor_label == SurvivorLabel.NUMERICAL_FAILURE for cell in cells)
    logger.info(f"sweep over {len(cells)} cells finished, {failed} numerical failures")
    return SurvivorMap(axis1=axis1.name, axis2=axis2.name if axis2 else None, cells=cells)
