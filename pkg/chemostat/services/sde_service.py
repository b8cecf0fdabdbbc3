import logging
import warnings
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from chemostat.common.config import SETTINGS
from chemostat.engine.wiener import WienerSource, coarsen
from chemostat.entity.order import OrderLevel, OrderStudy
from chemostat.entity.stages import ReducedEnsemble, ReducedState
from chemostat.entity.trajectory import (
    ClampEvent, Ensemble, EnsembleSummary, ExtinctionEvent, Trajectory,
)
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.enums import Population, Scheme, SurvivorLabel
from chemostat.protocol.schemas import ChemostatParams, DilutionRateNoise, GeneralNoise, NoNoise
from chemostat.services import asymptotic_service
from chemostat.services.deterministic_service import rhs
from chemostat.services.model_service import monod, monod_slope

logger = logging.getLogger(__name__)

PATH_BATCH = 2048
COMPONENTS = ("x", "y", "z")


def drift_diffusion(params: ChemostatParams, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Ito drift and diffusion matrix of the stochastic chemostat

    Args:
        params: Model parameters, theta is the mean dilution rate
        s: States with shape (..., 3)

    Returns:
        (drift with shape (..., 3), diffusion with shape (..., 3, m)); column k of the
        diffusion multiplies Wiener increment k
    """
    s = np.asarray(s, dtype=float)
    drift = rhs(params, s)
    noise = params.noise
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    if isinstance(noise, GeneralNoise):
        diffusion = np.zeros(s.shape + (3,))
        diffusion[..., 0, 0] = noise.sigma1 * x
        diffusion[..., 1, 1] = noise.sigma2 * y
        diffusion[..., 2, 2] = noise.sigma3 * z
    elif isinstance(noise, DilutionRateNoise):
        diffusion = np.empty(s.shape + (1,))
        diffusion[..., 0, 0] = -noise.sigma * x
        diffusion[..., 1, 0] = -noise.sigma * y
        diffusion[..., 2, 0] = noise.substrate_sigma * (params.z_f - z)
    else:
        diffusion = np.zeros(s.shape + (1,))
    return drift, diffusion


def _check_increments(params: ChemostatParams, dW: np.ndarray):
    if dW.shape[-1] != params.noise.n_channels:
        raise ChemostatException(
            ErrorCode.INVALID_PARAMETERS,
            f"{params.noise.kind} noise needs {params.noise.n_channels} increments per step, got {dW.shape[-1]}",
        )


def step_euler_maruyama(params: ChemostatParams, s: np.ndarray, dt: float, dW: np.ndarray) -> np.ndarray:
    """One Euler-Maruyama step; no clamping is applied here."""
    dW = np.asarray(dW, dtype=float)
    _check_increments(params, dW)
    drift, diffusion = drift_diffusion(params, s)
    return s + drift * dt + np.einsum("...ij,...j->...i", diffusion, dW)


def _milstein_factor(params: ChemostatParams, s: np.ndarray) -> np.ndarray:
    # (b . grad) b for every channel, shape (..., 3, m)
    noise = params.noise
    if isinstance(noise, GeneralNoise):
        sig = np.array([noise.sigma1, noise.sigma2, noise.sigma3])
        factor = np.zeros(s.shape + (3,))
        for k in range(3):
            factor[..., k, k] = sig[k] ** 2 * s[..., k]
        return factor
    factor = np.zeros(s.shape + (1,))
    if isinstance(noise, DilutionRateNoise):
        factor[..., 0, 0] = noise.sigma ** 2 * s[..., 0]
        factor[..., 1, 0] = noise.sigma ** 2 * s[..., 1]
        factor[..., 2, 0] = -noise.substrate_sigma ** 2 * (params.z_f - s[..., 2])
    return factor


def step_milstein(params: ChemostatParams, s: np.ndarray, dt: float, dW: np.ndarray) -> np.ndarray:
    """
    One Milstein step

    Every channel has a multiplicative diffusion coefficient driven by a single
    Wiener process (its own for general noise, the shared one for dilution noise),
    so the iterated integrals reduce to (dW^2 - dt)/2.
    """
    dW = np.asarray(dW, dtype=float)
    em = step_euler_maruyama(params, s, dt, dW)
    correction = 0.5 * np.einsum("...ij,...j->...i", _milstein_factor(params, s), dW * dW - dt)
    return em + correction


STEPPERS = {
    Scheme.EULER_MARUYAMA: step_euler_maruyama,
    Scheme.MILSTEIN: step_milstein,
}


def _n_steps(dt: float, t_end: float) -> int:
    if dt <= 0:
        raise ChemostatException(ErrorCode.INVALID_PARAMETERS, f"dt must be positive, got {dt}")
    if t_end < dt:
        raise ChemostatException(ErrorCode.INVALID_PARAMETERS, f"t_end={t_end} shorter than dt={dt}")
    return int(round(t_end / dt))


def explicit_step_limit(params: ChemostatParams, s: Sequence[float]) -> float:
    """
    Largest stable explicit step of the drift linearised at s

    The fastest decay rate is bounded by theta + x*f'(z) + y*g'(z), which near
    the coexistence line grows like z_f; explicit steps above 2 over that rate diverge.
    """
    x, y, z = (max(float(v), 0.0) for v in s)
    rate = params.theta + x * monod_slope(params.curve_x, z) + y * monod_slope(params.curve_y, z)
    return 2.0 / rate


def _check_step(params: ChemostatParams, s0: np.ndarray, dt: float) -> None:
    limit = explicit_step_limit(params, s0)
    if dt > limit:
        message = f"dt={dt:g} exceeds the explicit step limit {limit:.3g} at the start state; the scheme is unstable"
        logger.warning(message)
        warnings.warn(message, stacklevel=3)



def _record_steps(n_steps: int, record_every: int) -> np.ndarray:
    steps = np.arange(0, n_steps + 1, record_every)
    if steps[-1] != n_steps:
        steps = np.append(steps, n_steps)
    return steps


class _PathBatch:
    """Mutable state of a batch of paths advanced in lock-step"""

    def __init__(self, params: ChemostatParams, s0: np.ndarray, paths: Sequence[int], dt: float, n_records: int):
        n = len(paths)
        self.params = params
        self.dt = dt
        self.paths = list(paths)
        self.state = np.tile(np.asarray(s0, dtype=float), (n, 1))
        self.records = np.empty((n_records, n, 3))
        self.alive = np.ones(n, dtype=bool)
        self.failures: Dict[int, str] = {}
        self.clamps: List[List[ClampEvent]] = [[] for _ in range(n)]
        self.extinct_at = np.full((n, 2), np.nan)
        self.threshold = SETTINGS.EXTINCTION_FRACTION * params.z_f
        self._mark_extinctions(0)

    def _mark_extinctions(self, step: int):
        below = self.state[:, :2] < self.threshold
        first = below & np.isnan(self.extinct_at) & self.alive[:, None]
        self.extinct_at[first] = step * self.dt

    def advance(self, stepper, dW: np.ndarray, step: int):
        new = stepper(self.params, self.state, self.dt, dW)

        bad = self.alive & ~np.all(np.isfinite(new), axis=1)
        for k in np.flatnonzero(bad):
            self.failures[self.paths[k]] = f"non-finite state at step {step}: {self.state[k].tolist()}"
            logger.warning(f"path {self.paths[k]} aborted at step {step}")
        self.alive &= ~bad
        new[~self.alive] = self.state[~self.alive]

        negative = new < 0
        if negative.any():
            t = step * self.dt
            for k, c in zip(*np.nonzero(negative)):
                self.clamps[k].append(ClampEvent(component=COMPONENTS[c], time=t, value=float(new[k, c])))
            new[negative] = 0.0
        self.state = new
        self._mark_extinctions(step)


def _run_batch(params: ChemostatParams, s0: np.ndarray, dt: float, n_steps: int, source: WienerSource,
               paths: Sequence[int], scheme: Scheme, record_steps: np.ndarray) -> _PathBatch:
    stepper = STEPPERS[scheme]
    batch = _PathBatch(params, s0, paths, dt, len(record_steps))
    batch.records[0] = batch.state
    next_record = 1
    for start, block in source.iter_blocks(paths, n_steps):
        for k in range(block.shape[0]):
            step = start + k + 1
            batch.advance(stepper, block[k], step)
            if next_record < len(record_steps) and record_steps[next_record] == step:
                batch.records[next_record] = batch.state
                next_record += 1
    return batch


def _trajectories(batch: _PathBatch, times: np.ndarray, seed: int, scheme: Scheme, dt: float,
                  record_every: int) -> List[Trajectory]:
    out = []
    for k, path in enumerate(batch.paths):
        events = [
            ExtinctionEvent(population=pop, time=float(batch.extinct_at[k, c]))
            for c, pop in enumerate((Population.X, Population.Y))
            if not np.isnan(batch.extinct_at[k, c])
        ]
        out.append(Trajectory(
            times=times, states=batch.records[:, k, :].copy(), seed=seed, path=path, scheme=scheme, dt=dt,
            record_every=record_every, events=events, clamps=batch.clamps[k], failure=batch.failures.get(path),
        ))
    return out


def simulate(params: ChemostatParams, s0: Sequence[float], dt: float, t_end: float, seed: int,
             scheme: Scheme = Scheme.EULER_MARUYAMA, path: int = 0, record_every: int = 1) -> Trajectory:
    """
    Fixed-step stochastic path

    Args:
        params: Model parameters and noise structure
        s0: Initial state
        dt: Step
        t_end: Horizon, rounded to a whole number of steps
        seed: 64-bit seed of the Wiener source
        scheme: Euler-Maruyama or Milstein
        path: Stream index within the seed, ensembles use 0..n-1
        record_every: Steps between recorded states

    Returns:
        Trajectory; a non-finite state stops the path and sets ``failure``
    """
    n_steps = _n_steps(dt, t_end)
    _check_step(params, np.asarray(s0, dtype=float), dt)
    record_steps = _record_steps(n_steps, record_every)
    source = WienerSource(seed, params.noise.n_channels, dt)
    batch = _run_batch(params, np.asarray(s0, dtype=float), dt, n_steps, source, [path], scheme, record_steps)
    return _trajectories(batch, record_steps * dt, source.seed, scheme, dt, record_every)[0]


def survivor_label(params: ChemostatParams, traj: Trajectory) -> SurvivorLabel:
    if traj.failed:
        return SurvivorLabel.NUMERICAL_FAILURE
    threshold = SETTINGS.EXTINCTION_FRACTION * params.z_f
    x, y = traj.final_state[0], traj.final_state[1]
    if x < threshold and y < threshold:
        return SurvivorLabel.BOTH_WASHOUT
    if y < threshold:
        return SurvivorLabel.X
    if x < threshold:
        return SurvivorLabel.Y
    return SurvivorLabel.UNDETERMINED


def _summary(trajectories: List[Trajectory]) -> Optional[EnsembleSummary]:
    good = [traj.states for traj in trajectories if not traj.failed]
    if not good:
        return None
    stack = np.stack(good)
    return EnsembleSummary(
        times=trajectories[0].times,
        mean=stack.mean(axis=0),
        q05=np.quantile(stack, 0.05, axis=0),
        q95=np.quantile(stack, 0.95, axis=0),
    )


def simulate_ensemble(params: ChemostatParams, s0: Sequence[float], dt: float, t_end: float, seed: int,
                      n: int, scheme: Scheme = Scheme.EULER_MARUYAMA, record_every: int = 1) -> Ensemble:
    """
    n independent paths sharing one seed, path k drawing from stream k

    Paths are advanced together as numpy arrays in batches of PATH_BATCH.
    """
    if n < 1:
        raise ChemostatException(ErrorCode.INVALID_PARAMETERS, f"ensemble size must be at least 1, got {n}")
    n_steps = _n_steps(dt, t_end)
    record_steps = _record_steps(n_steps, record_every)
    times = record_steps * dt
    source = WienerSource(seed, params.noise.n_channels, dt)
    s0 = np.asarray(s0, dtype=float)
    _check_step(params, s0, dt)

    trajectories: List[Trajectory] = []
    for first in range(0, n, PATH_BATCH):
        paths = list(range(first, min(first + PATH_BATCH, n)))
        batch = _run_batch(params, s0, dt, n_steps, source, paths, scheme, record_steps)
        trajectories.extend(_trajectories(batch, times, source.seed, scheme, dt, record_every))

    survivors = {label: 0 for label in SurvivorLabel}
    leaders = {Population.X: 0, Population.Y: 0}
    failures = {}
    for traj in trajectories:
        survivors[survivor_label(params, traj)] += 1
        if traj.failed:
            failures[traj.path] = traj.failure
            continue
        leaders[Population.X if traj.final_state[0] > traj.final_state[1] else Population.Y] += 1

    logger.info(f"ensemble of {n} paths: survivors {({k.value: v for k, v in survivors.items() if v})}, "
                f"leaders {({k.value: v for k, v in leaders.items()})}")
    return Ensemble(trajectories=trajectories, summary=_summary(trajectories), survivors=survivors,
                    leaders=leaders, failures=failures)


def integrate_increments(params: ChemostatParams, s0: np.ndarray, dt: float, increments: np.ndarray,
                         scheme: Scheme) -> np.ndarray:
    """Advance states (n_paths, 3) through given increments (n_steps, n_paths, m); returns final states."""
    stepper = STEPPERS[scheme]
    state = np.array(s0, dtype=float)
    for dW in increments:
        state = np.maximum(stepper(params, state, dt, dW), 0.0)
    return state


def strong_order_study(params: ChemostatParams, s0: Sequence[float], scheme: Scheme, dt_ladder: Sequence[float],
                       n_paths: int, t_end: float = 1.0, seed: int = 0, reference_refinement: int = 8) -> OrderStudy:
    """
    Strong error at t_end for each step of a geometric ladder

    All levels are driven by the same Brownian paths: increments are drawn on a
    reference grid reference_refinement times finer than the finest level and
    summed into coarser ones.

    Returns:
        OrderStudy with the least-squares log-log slope
    """
    ladder = sorted(dt_ladder, reverse=True)
    if len(ladder) < 3:
        raise ChemostatException(ErrorCode.ILL_CONDITIONED_FIT, f"need at least 3 levels, got {len(ladder)}")
    dt_ref = ladder[-1] / reference_refinement
    factors = [int(round(dt / dt_ref)) for dt in ladder]
    for dt, factor in zip(ladder, factors):
        if abs(factor * dt_ref - dt) > 1e-12 * dt:
            raise ChemostatException(ErrorCode.INVALID_PARAMETERS, f"dt={dt} is not a multiple of {dt_ref}")

    n_steps = _n_steps(dt_ref, t_end)
    if n_steps % factors[0]:
        raise ChemostatException(ErrorCode.INVALID_PARAMETERS, f"t_end={t_end} is not a multiple of dt={ladder[0]}")

    source = WienerSource(seed, params.noise.n_channels, dt_ref)
    fine = source.increments(list(range(n_paths)), n_steps)
    start = np.tile(np.asarray(s0, dtype=float), (n_paths, 1))

    reference = integrate_increments(params, start, dt_ref, fine, scheme)
    levels = []
    for dt, factor in zip(ladder, factors):
        final = integrate_increments(params, start, dt, coarsen(fine, factor), scheme)
        error = float(np.mean(np.linalg.norm(final - reference, axis=1)))
        levels.append(OrderLevel(dt=dt, strong_error=error))

    log_dt = np.log([level.dt for level in levels])
    log_err = np.log([max(level.strong_error, np.finfo(float).tiny) for level in levels])
    slope = float(np.polyfit(log_dt, log_err, 1)[0])
    logger.info(f"{scheme.value} strong order fit {slope:.3f} over {len(levels)} levels")
    return OrderStudy(scheme=scheme, levels=levels, reference_dt=dt_ref, n_paths=n_paths, slope=slope)


def deficit_diagnostic(traj: Trajectory, params: ChemostatParams) -> float:
    """
    Largest gap between the simulated deficit z_f - x - y - z and its exact recursion

    Under shared dilution noise the three equations sum to the scalar recursion
    w_{n+1} = w_n (1 - theta dt - sigma dW_n) for Euler-Maruyama, with the extra
    factor sigma^2 (dW_n^2 - dt)/2 for Milstein. Increments are regenerated from
    the trajectory's seed and path.
    """
    noise = params.noise
    if not isinstance(noise, (DilutionRateNoise, NoNoise)):
        raise ChemostatException(ErrorCode.UNSUPPORTED_NOISE, "deficit identity needs dilution-rate noise")
    sigma = noise.sigma if isinstance(noise, DilutionRateNoise) else 0.0
    if isinstance(noise, DilutionRateNoise) and noise.substrate_sigma != noise.sigma:
        raise ChemostatException(ErrorCode.UNSUPPORTED_NOISE, "deficit identity needs sigma_z equal to sigma")
    if traj.seed is None or traj.dt is None:
        raise ChemostatException(ErrorCode.INVALID_PARAMETERS, "trajectory carries no stochastic metadata")
    if traj.clamps:
        warnings.warn(f"path {traj.path} was clamped {len(traj.clamps)} times; the identity is broken there",
                      stacklevel=2)

    dt = traj.dt
    n_steps = int(round(traj.times[-1] / dt))
    dW = WienerSource(traj.seed, 1, dt).increments([traj.path], n_steps)[:, 0, 0]
    factor = 1.0 - params.theta * dt - sigma * dW
    if traj.scheme == Scheme.MILSTEIN:
        factor = factor + 0.5 * sigma ** 2 * (dW * dW - dt)

    w = np.empty(n_steps + 1)
    w[0] = params.z_f - traj.states[0].sum()
    w[1:] = w[0] * np.cumprod(factor)
    steps = np.rint(traj.times / dt).astype(int)
    simulated = params.z_f - traj.states.sum(axis=1)
    return float(np.max(np.abs(simulated - w[steps])))


def _reduced_diffusion(params: ChemostatParams, xb: np.ndarray, yb: np.ndarray) -> np.ndarray:
    noise = params.noise
    if isinstance(noise, GeneralNoise):
        diffusion = np.zeros(xb.shape + (2, 2))
        diffusion[..., 0, 0] = noise.sigma1 * xb
        diffusion[..., 1, 1] = noise.sigma2 * yb
    elif isinstance(noise, DilutionRateNoise):
        diffusion = np.empty(xb.shape + (2, 1))
        diffusion[..., 0, 0] = -noise.sigma * xb
        diffusion[..., 1, 0] = -noise.sigma * yb
    else:
        diffusion = np.zeros(xb.shape + (2, 1))
    return diffusion


def reduced_channels(params: ChemostatParams) -> int:
    return 2 if isinstance(params.noise, GeneralNoise) else 1


def simulate_reduced(params: ChemostatParams, reduced0: ReducedState, dt: float, t_end: float, seed: int,
                     n: int, record_every: Optional[int] = None, guard: Optional[float] = None,
                     starts: Optional[np.ndarray] = None) -> ReducedEnsemble:
    """
    Euler-Maruyama ensemble of the large-feed reduced Langevin system

    The substrate follows the algebraic balance at every step. Paths that come
    within ``guard`` (vertical distance) of the singularity line stop and are
    flagged as failed. ``starts`` of shape (n, 2) gives each path its own
    (x_bar, y_bar) start in place of ``reduced0``.
    """
    if starts is not None and np.shape(starts) != (n, 2):
        raise ChemostatException(ErrorCode.INVALID_PARAMETERS, f"starts must have shape ({n}, 2), got {np.shape(starts)}")
    guard = SETTINGS.SINGULARITY_GUARD if guard is None else guard
    n_steps = _n_steps(dt, t_end)
    record_steps = _record_steps(n_steps, record_every or n_steps)
    m = reduced_channels(params)
    source = WienerSource(seed, m, dt)
    theta = params.theta

    states = np.empty((len(record_steps), n, 3))
    failed = np.zeros(n, dtype=bool)
    for first in range(0, n, PATH_BATCH):
        sl = slice(first, min(first + PATH_BATCH, n))
        paths = list(range(sl.start, sl.stop))
        if starts is None:
            xy = np.tile([reduced0.x_bar, reduced0.y_bar], (len(paths), 1)).astype(float)
        else:
            xy = np.array(starts[sl], dtype=float)
        dead = np.zeros(len(paths), dtype=bool)

        def substrate(points):
            zb = asymptotic_service.stage5_zbar_array(params, points[:, 0], points[:, 1])
            near = points[:, 1] - asymptotic_service.singularity_line(params, points[:, 0]) < guard
            return zb, near

        zb, near = substrate(xy)
        dead |= near | ~np.isfinite(zb)
        states[0, sl] = np.column_stack([xy, zb])
        next_record = 1
        for start, block in source.iter_blocks(paths, n_steps):
            for k in range(block.shape[0]):
                step = start + k + 1
                drift = np.column_stack([
                    xy[:, 0] * (monod(params.curve_x, zb) - theta),
                    xy[:, 1] * (monod(params.curve_y, zb) - theta),
                ])
                diffusion = _reduced_diffusion(params, xy[:, 0], xy[:, 1])
                new = np.maximum(xy + drift * dt + np.einsum("...ij,...j->...i", diffusion, block[k]), 0.0)
                xy = np.where(dead[:, None], xy, new)
                new_zb, near = substrate(xy)
                zb = np.where(dead, zb, new_zb)
                dead |= near | ~np.isfinite(zb)
                if next_record < len(record_steps) and record_steps[next_record] == step:
                    states[next_record, sl] = np.column_stack([xy, zb])
                    next_record += 1
        failed[sl] = dead

    if failed.any():
        logger.warning(f"{int(failed.sum())} of {n} reduced paths reached the singularity guard")
    return ReducedEnsemble(times=record_steps * dt, states=states, failed=failed, seed=source.seed)
