"""
Large-feed asymptotics of the chemostat: closed-form stages 1-4, the stage-5
differential-algebraic system and its comparison against the full ODE.
"""
import logging
import math
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp

from chemostat.common.config import SETTINGS
from chemostat.engine.integrator import integrate_clamped
from chemostat.engine.roots import expand_bracket, find_root, stable_quadratic_roots
from chemostat.entity.stages import (
    CompositeReport, ReducedState, ReducedTrajectory, Stage4Result, StageError, StagePlan,
)
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.schemas import ChemostatParams
from chemostat.services.deterministic_service import rhs
from chemostat.services.model_service import monod

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def _growth_exponents(params: ChemostatParams) -> Tuple[float, float]:
    e1 = params.curve_x.a - params.theta
    e2 = params.curve_y.a - params.theta
    if e1 <= 0 or e2 <= 0:
        raise ChemostatException(
            ErrorCode.STAGE_STRUCTURE,
            f"growth regime needs a_i > theta, got a1-theta={e1:.6g}, a2-theta={e2:.6g}",
        )
    return e1, e2


def stage1_solution(params: ChemostatParams, M1: float, M2: float, z0: float, t: ArrayLike) -> np.ndarray:
    """Fast initial layer on t = O(1/z_f): populations frozen, substrate rising linearly."""
    t = np.asarray(t, dtype=float)
    z = z0 + params.theta * (params.z_f - z0) * t
    return np.stack(np.broadcast_arrays(np.full_like(t, M1), np.full_like(t, M2), z), axis=-1)


def stage2_solution(params: ChemostatParams, M1: float, M2: float, t: ArrayLike, z0: float = 0.0) -> np.ndarray:
    """
    Exponential growth at saturated substrate

    Args:
        params: Model parameters
        M1: x at t = 0
        M2: y at t = 0
        t: Times, scalar or array
        z0: Substrate at t = 0, fixes C0 = 1 - z0/z_f

    Returns:
        States with shape t.shape + (3,)
    """
    e1, e2 = _growth_exponents(params)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ChemostatException(ErrorCode.DOMAIN_ERROR, "stage 2 is defined for t >= 0")
    c0 = 1.0 - z0 / params.z_f
    return np.stack([
        M1 * np.exp(e1 * t),
        M2 * np.exp(e2 * t),
        params.z_f * (1.0 - c0 * np.exp(-params.theta * t)),
    ], axis=-1)


def matching_constants(params: ChemostatParams, M1: float, M2: float, C3: float = 0.0) -> StagePlan:
    """
    L and the stage-3 coefficients for initial populations (M1, M2)

    L is taken from M1. When M2 is not the value consistent with that L, the gap
    between the two expressions for L is reported in ``l_residual``.
    """
    e1, e2 = _growth_exponents(params)
    if params.z_f <= max(M1, M2):
        raise ChemostatException(ErrorCode.STAGE_STRUCTURE, f"z_f must exceed M1={M1} and M2={M2}")
    L = math.log(params.z_f / M1) / e1
    mu1 = M1 * math.exp(e1 * L) / params.z_f
    mu2 = M2 * math.exp(e2 * L) / params.z_f
    residual = L - math.log(params.z_f / M2) / e2
    if abs(residual) > 1e-9:
        logger.info(f"M2={M2} is inconsistent with L={L:.6g}: residual {residual:.3g}, mu2={mu2:.6g}")
    return StagePlan(M1=M1, M2=M2, L=L, mu1=mu1, mu2=mu2, l_residual=residual, C3=C3)


def stage3_solution(plan: StagePlan, params: ChemostatParams, t_prime: ArrayLike) -> np.ndarray:
    """(x', y', z') of the interactive stage; shape t_prime.shape + (3,)."""
    e1, e2 = _growth_exponents(params)
    t = np.asarray(t_prime, dtype=float)
    xp = plan.mu1 * np.exp(e1 * t)
    yp = plan.mu2 * np.exp(e2 * t)
    zp = 1.0 - plan.C3 * np.exp(-params.theta * t) - xp - yp
    return np.stack([xp, yp, zp], axis=-1)


def _stage3_slope(plan: StagePlan, params: ChemostatParams, t: float) -> float:
    e1, e2 = _growth_exponents(params)
    return (params.theta * plan.C3 * math.exp(-params.theta * t)
            - plan.mu1 * e1 * math.exp(e1 * t) - plan.mu2 * e2 * math.exp(e2 * t))


def find_t0_prime(plan: StagePlan, params: ChemostatParams) -> StagePlan:
    """
    Time at which the stage-3 substrate reaches zero from above

    The slope of z' is strictly decreasing in t', so z' has at most one maximum;
    the root is searched beyond it.

    Returns:
        Copy of the plan with t0_prime, x0_prime and y0_prime filled in
    """
    if plan.mu1 <= 0 or plan.mu2 <= 0:
        raise ChemostatException(ErrorCode.STAGE_STRUCTURE, f"mu1={plan.mu1}, mu2={plan.mu2} must be positive")

    def z_prime(t: float) -> float:
        return float(stage3_solution(plan, params, t)[2])

    start = -1.0
    if plan.C3 > 0:
        lo, hi = expand_bracket(lambda t: _stage3_slope(plan, params, t), -1.0, 1.0)
        start = find_root(lambda t: _stage3_slope(plan, params, t), lo, hi)
        if z_prime(start) <= 0:
            raise ChemostatException(ErrorCode.NO_ROOT_FOUND, "stage-3 substrate never becomes positive")
    else:
        # z' tends to 1 as t' -> -infinity
        for _ in range(60):
            if z_prime(start) > 0:
                break
            start *= 2.0
        else:
            raise ChemostatException(ErrorCode.NO_ROOT_FOUND, "no positive stage-3 substrate found")

    try:
        lo, hi = expand_bracket(z_prime, start, start + 1.0, lower_limit=start)
        t0 = find_root(z_prime, lo, hi)
    except (ChemostatException, OverflowError) as e:
        raise ChemostatException(ErrorCode.NO_ROOT_FOUND, f"stage-3 substrate has no zero crossing: {e}")

    state = stage3_solution(plan, params, t0)
    x0p, y0p = float(state[0]), float(state[1])
    balance = params.theta - x0p * params.curve_x.a - y0p * params.curve_y.a
    if balance >= 0:
        raise ChemostatException(
            ErrorCode.STAGE_STRUCTURE, f"substrate does not cross zero from above: theta - x0'a1 - y0'a2 = {balance:.3g}"
        )
    return plan.model_copy(update={"t0_prime": t0, "x0_prime": x0p, "y0_prime": y0p})


def _balance(params: ChemostatParams, x_bar: float, y_bar: float):
    def h(z: float) -> float:
        return x_bar * monod(params.curve_x, z) + y_bar * monod(params.curve_y, z) - params.theta
    return h


def _asymptotic_surplus(params: ChemostatParams, x_bar: ArrayLike, y_bar: ArrayLike) -> ArrayLike:
    # x(a1-g1) + y(a2-g2) - theta, positive strictly above the singularity line
    return x_bar * params.curve_x.asymptotic_rate + y_bar * params.curve_y.asymptotic_rate - params.theta


def _balance_root(params: ChemostatParams, x_bar: float, y_bar: float) -> float:
    cx, cy = params.curve_x, params.curve_y
    h = _balance(params, x_bar, y_bar)
    lo, hi = expand_bracket(h, 0.0, max(10.0, 10 * cx.b, 10 * cy.b), lower_limit=0.0)
    return find_root(h, lo, hi)


def stage4_evolve(plan: StagePlan, params: ChemostatParams, T: Optional[np.ndarray] = None,
                  Z_start: Optional[float] = None) -> Stage4Result:
    """
    Rapid substrate decrease at frozen populations (x0', y0')

    Integrates dZ/dT = theta - x0' f(Z) - y0' g(Z) downward from a large Z and
    solves the terminal balance directly; the two values are returned together.
    """
    if plan.x0_prime is None or plan.y0_prime is None:
        raise ChemostatException(ErrorCode.STAGE_STRUCTURE, "stage 4 needs x0' and y0', run find_t0_prime first")
    x0p, y0p = plan.x0_prime, plan.y0_prime
    surplus = _asymptotic_surplus(params, x0p, y0p)
    if surplus <= 0:
        raise ChemostatException(
            ErrorCode.STAGE_STRUCTURE, f"no positive stage-4 root: x0'(a1-g1) + y0'(a2-g2) - theta = {surplus:.3g}"
        )
    z_inf = _balance_root(params, x0p, y0p)

    Z_start = Z_start or 100.0 * max(1.0, params.curve_x.b, params.curve_y.b)
    if T is None:
        T = np.linspace(0.0, Z_start / surplus + 100.0, 2001)
    h = _balance(params, x0p, y0p)
    sol = solve_ivp(lambda _, Z: -h(Z[0]), (T[0], T[-1]), [Z_start], t_eval=T, rtol=1e-11, atol=1e-12)
    if not sol.success:
        raise ChemostatException(ErrorCode.NUMERICAL_FAILURE, f"stage-4 integration failed: {sol.message}")
    Z = sol.y[0]
    return Stage4Result(times=sol.t, Z=Z, Z_infinity=z_inf, Z_integrated=float(Z[-1]))


def singularity_line(params: ChemostatParams, x_bar: ArrayLike) -> ArrayLike:
    """
    y_bar on the line where the stage-5 substrate balance degenerates

    With death rates the asymptotic rates a_i - gamma_i replace a_i.
    """
    r1, r2 = params.curve_x.asymptotic_rate, params.curve_y.asymptotic_rate
    return params.theta / r2 - (r1 / r2) * x_bar


def _quadratic(params: ChemostatParams, x_bar: ArrayLike, y_bar: ArrayLike):
    # denominators cleared; death rates enter through the effective dilution
    cx, cy = params.curve_x, params.curve_y
    eff = params.theta + x_bar * cx.gamma + y_bar * cy.gamma
    A = eff - x_bar * cx.a - y_bar * cy.a
    B = eff * (cx.b + cy.b) - x_bar * cx.a * cy.b - y_bar * cy.a * cx.b
    C = eff * cx.b * cy.b
    return A, B, C


def stage5_zbar(params: ChemostatParams, x_bar: float, y_bar: float) -> float:
    """
    Positive substrate root of theta = x_bar f(z) + y_bar g(z)

    Without death rates the cleared quadratic is solved in closed form; with death
    rates the balance is solved by a bracketed scalar root finder.
    """
    if x_bar < 0 or y_bar < 0:
        raise ChemostatException(ErrorCode.DOMAIN_ERROR, f"reduced state must be non-negative, got ({x_bar}, {y_bar})")
    if _asymptotic_surplus(params, x_bar, y_bar) <= 0:
        raise ChemostatException(
            ErrorCode.SINGULARITY, f"({x_bar:.6g}, {y_bar:.6g}) is on or below the singularity line"
        )
    if params.has_death:
        return _balance_root(params, x_bar, y_bar)
    A, B, C = _quadratic(params, x_bar, y_bar)
    try:
        roots = stable_quadratic_roots(A, B, C)
    except ChemostatException:
        raise ChemostatException(ErrorCode.NO_PHYSICAL_SUBSTRATE, f"complex substrate at ({x_bar}, {y_bar})")
    if roots[1] <= 0:
        raise ChemostatException(ErrorCode.NO_PHYSICAL_SUBSTRATE, f"no positive substrate at ({x_bar}, {y_bar})")
    return roots[1]


def stage5_roots(params: ChemostatParams, x_bar: float, y_bar: float) -> Tuple[float, float]:
    """Both roots of the cleared quadratic, ascending; the first is the discarded one."""
    return stable_quadratic_roots(*_quadratic(params, x_bar, y_bar))


def stage5_zbar_array(params: ChemostatParams, x_bar: np.ndarray, y_bar: np.ndarray) -> np.ndarray:
    """Vectorised positive root; NaN on or below the singularity line."""
    x_bar = np.asarray(x_bar, dtype=float)
    y_bar = np.asarray(y_bar, dtype=float)
    A, B, C = _quadratic(params, x_bar, y_bar)
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = np.sqrt(B * B - 4.0 * A * C)
        q = -0.5 * (B + np.where(B >= 0, disc, -disc))
        # A < 0 < C: the roots have opposite signs
        r1, r2 = q / A, C / q
        z = np.maximum(r1, r2)
    return np.where(A < 0, z, np.nan)


def stage5_rhs(params: ChemostatParams, xy: np.ndarray) -> np.ndarray:
    zb = stage5_zbar_array(params, xy[..., 0], xy[..., 1])
    return np.stack([
        xy[..., 0] * (monod(params.curve_x, zb) - params.theta),
        xy[..., 1] * (monod(params.curve_y, zb) - params.theta),
    ], axis=-1)


def stage5_integrate(params: ChemostatParams, reduced0: ReducedState, t_end: float,
                     n_output: int = 501, guard: Optional[float] = None) -> ReducedTrajectory:
    """
    Integrate the stage-5 DAE with z_bar recomputed from the algebraic balance

    Args:
        params: Model parameters
        reduced0: Start, strictly above the singularity line
        t_end: Horizon in stage-5 time
        n_output: Number of equally spaced output times
        guard: Abort distance to the singularity line, SINGULARITY_GUARD by default

    Returns:
        ReducedTrajectory with columns (x_bar, y_bar, z_bar)
    """
    guard = SETTINGS.SINGULARITY_GUARD if guard is None else guard
    x0, y0 = reduced0.x_bar, reduced0.y_bar
    if _asymptotic_surplus(params, x0, y0) <= 0:
        raise ChemostatException(ErrorCode.SINGULARITY, f"start ({x0}, {y0}) violates x(a1-g1) + y(a2-g2) > theta")

    def near_line(_, xy):
        return xy[1] - singularity_line(params, xy[0]) - guard
    near_line.terminal = True
    near_line.direction = -1

    if near_line(0.0, [x0, y0]) <= 0:
        raise ChemostatException(ErrorCode.SINGULARITY, f"start ({x0}, {y0}) is within {guard} of the singularity line")

    t_eval = np.linspace(0.0, t_end, n_output)
    sol = solve_ivp(lambda _, xy: stage5_rhs(params, np.maximum(xy, 0.0)), (0.0, t_end), [x0, y0],
                    t_eval=t_eval, events=[near_line], rtol=1e-10, atol=1e-13, method="LSODA")
    if sol.status == -1:
        raise ChemostatException(ErrorCode.NUMERICAL_FAILURE, f"stage-5 integration failed: {sol.message}")
    if sol.status == 1:
        hit = sol.y_events[0][0]
        raise ChemostatException(
            ErrorCode.SINGULARITY,
            f"stage-5 path reached the singularity guard at t={sol.t_events[0][0]:.6g}, "
            f"(x_bar, y_bar)=({hit[0]:.6g}, {hit[1]:.6g})",
        )
    xy = np.maximum(sol.y.T, 0.0)
    zb = stage5_zbar_array(params, xy[:, 0], xy[:, 1])
    return ReducedTrajectory(times=sol.t, states=np.column_stack([xy, zb]))


def build_stage_plan(params: ChemostatParams, M1: float, M2: float, C3: float = 0.0) -> StagePlan:
    """Matching constants, stage-3 zero and stage-4 terminal substrate in one plan."""
    plan = find_t0_prime(matching_constants(params, M1, M2, C3), params)
    z_inf = _balance_root(params, plan.x0_prime, plan.y0_prime)
    return plan.model_copy(update={"Z_infinity": z_inf})


def staged_trajectory(params: ChemostatParams, plan: StagePlan, z0: float = 0.0, n_points: int = 201,
                      stage5_horizon: float = 20.0) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """
    Each stage's closed form or reduced path mapped back to full time and variables

    Args:
        params: Model parameters
        plan: Output of build_stage_plan for the same params
        z0: Initial substrate
        n_points: Samples per closed-form stage
        stage5_horizon: Length of the stage-5 window after t* = L + t0'

    Returns:
        Stage name to (t, states) with states in columns (x, y, z), in stage order
    """
    if plan.t0_prime is None or plan.x0_prime is None:
        raise ChemostatException(ErrorCode.STAGE_STRUCTURE, "staged trajectory needs a plan from build_stage_plan")
    z_f = params.z_f
    t_star = plan.L + plan.t0_prime
    out = {}

    t1 = np.linspace(0.0, 1.0 / z_f, n_points)
    out["stage1"] = (t1, stage1_solution(params, plan.M1, plan.M2, z0, t1))

    t2 = np.linspace(1.0 / z_f, 0.5 * plan.L, n_points)
    out["stage2"] = (t2, stage2_solution(params, plan.M1, plan.M2, t2, z0))

    t3 = np.linspace(-0.5 * plan.L, plan.t0_prime, n_points)
    out["stage3"] = (plan.L + t3, z_f * stage3_solution(plan, params, t3))

    s4 = stage4_evolve(plan, params)
    frozen = np.column_stack([
        np.full_like(s4.Z, z_f * plan.x0_prime), np.full_like(s4.Z, z_f * plan.y0_prime), s4.Z,
    ])
    out["stage4"] = (t_star + s4.times / z_f, frozen)

    reduced = stage5_integrate(params, ReducedState(x_bar=plan.x0_prime, y_bar=plan.y0_prime), stage5_horizon,
                               n_output=n_points)
    states = reduced.states.copy()
    states[:, :2] *= z_f
    out["stage5"] = (t_star + reduced.times, states)
    return out


def _full_ode(params: ChemostatParams, s0: Sequence[float], t_eval: np.ndarray) -> np.ndarray:
    states, _ = integrate_clamped(
        lambda t, s: rhs(params, s), s0, t_eval,
        rtol=1e-10, atol=1e-10 * params.z_f, method="LSODA",
    )
    return states


def composite_vs_full(params: ChemostatParams, M1: float, M2: float, z_f_ladder: Sequence[float],
                      z0: float = 0.0, stage5_horizon: float = 20.0) -> CompositeReport:
    """
    Compare the staged solution with the full ODE for each feed of a ladder

    Per feed, reports: the stage-2 sup relative error over t in [1, L/2] and the
    fitted stage-2 growth exponents; the stage-3 sup relative error of the scaled
    populations over t' in [-1, t0' - 1/4]; the stage-4 relative gap between the
    full substrate 40/z_f after it first falls below 10 max(1, Z_inf) and Z_inf;
    and the distance between the full scaled populations and the stage-5 endpoint
    after ``stage5_horizon``.
    """
    ladder = list(z_f_ladder)
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ChemostatException(ErrorCode.INVALID_PARAMETERS, f"z_f ladder must increase: {ladder}")
    e1, e2 = _growth_exponents(params)

    report = CompositeReport()
    for z_f in ladder:
        p = params.with_updates(z_f=z_f)
        plan = build_stage_plan(p, M1, M2)
        t_star = plan.L + plan.t0_prime
        t_end = t_star + stage5_horizon
        t_eval = np.linspace(0.0, t_end, 40001)
        full = _full_ode(p, (M1, M2, z0), t_eval)

        # stage 2
        window = (t_eval >= 1.0) & (t_eval <= 0.5 * plan.L)
        if window.sum() < 3:
            raise ChemostatException(ErrorCode.ILL_CONDITIONED_FIT, f"stage-2 window empty for z_f={z_f}")
        staged = stage2_solution(p, M1, M2, t_eval[window], z0)
        err2 = np.max(np.abs(full[window] - staged) / np.abs(full[window]))
        report.errors.append(StageError(z_f=z_f, stage="stage2", sup_rel_err=float(err2)))
        for col, exponent, name in ((0, e1, "stage2-x"), (1, e2, "stage2-y")):
            slope = np.polyfit(t_eval[window], np.log(full[window, col]), 1)[0]
            report.slope_fit.append(StageError(z_f=z_f, stage=name, sup_rel_err=float(abs(slope / exponent - 1))))

        # stage 3
        t_prime = t_eval - plan.L
        window = (t_prime >= -1.0) & (t_prime <= plan.t0_prime - 0.25)
        if window.any():
            staged = stage3_solution(plan, p, t_prime[window])
            scaled = full[window, :2] / z_f
            err3 = np.max(np.abs(scaled - staged[:, :2]) / staged[:, :2])
            report.errors.append(StageError(z_f=z_f, stage="stage3", sup_rel_err=float(err3)))

        # stage 4
        peak = int(np.argmax(full[:, 2]))
        low = np.flatnonzero(full[peak:, 2] <= 10.0 * max(1.0, plan.Z_infinity))
        if low.size == 0:
            raise ChemostatException(ErrorCode.STAGE_STRUCTURE, f"substrate never drops to O(1) for z_f={z_f}")
        k4 = peak + int(low[0])
        t4 = t_eval[k4]
        tail = _full_ode(p, full[k4], np.array([t4, t4 + 40.0 / z_f]) - t4)
        err4 = abs(tail[-1, 2] - plan.Z_infinity) / plan.Z_infinity
        report.errors.append(StageError(z_f=z_f, stage="stage4", sup_rel_err=float(err4)))

        # stage 5
        reduced = stage5_integrate(p, ReducedState(x_bar=plan.x0_prime, y_bar=plan.y0_prime), stage5_horizon)
        end_full = full[-1, :2] / z_f
        err5 = float(np.linalg.norm(end_full - reduced.states[-1, :2]))
        report.errors.append(StageError(z_f=z_f, stage="stage5", sup_rel_err=err5))
        logger.info(f"z_f={z_f:g}: stage2 {err2:.3g}, stage4 {err4:.3g}, stage5 {err5:.3g}")
    return report
