"""
Experiment recipes: one pipeline per reproduced figure or study, each emitting
plot-ready tables through the output service.
"""
import logging
import time
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from chemostat.common.config import SETTINGS
from chemostat.entity.density import DensityField, PolygonDomain
from chemostat.entity.manifest import RecipeResult, RunManifest
from chemostat.entity.stages import ReducedState
from chemostat.entity.sweep import SurvivorMap, SweepAxis
from chemostat.entity.trajectory import Ensemble, Trajectory
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.enums import Scheme, SurvivorLabel
from chemostat.protocol.experiment import ExperimentConfig, SweepControls
from chemostat.protocol.schemas import (
    ChemostatParams, DilutionRateNoise, GeneralNoise, NoiseSpec,
)
from chemostat.services import (
    asymptotic_service, deterministic_service, fokker_planck_service, model_service, output_service, sde_service,
)
from chemostat.utils.common import sha256_json

logger = logging.getLogger(__name__)

RecipeFn = Callable[[ExperimentConfig, bool], RecipeResult]

FULL_HORIZON_FACTOR = 10.0
DESK_Z_F = 1500.0
LOW_GENERAL = (0.0006, 0.0007, 9.0)
HIGH_GENERAL = (0.05, 0.07, 9.0)
SWEEP_COLUMNS = ["param1", "param2", "survivor_label", "final_x", "final_y", "final_z", "error"]


def _general(sigmas: Tuple[float, float, float]) -> GeneralNoise:
    return GeneralNoise(sigma1=sigmas[0], sigma2=sigmas[1], sigma3=sigmas[2])


def _dilution(sigma: float, sigma_z: Optional[float] = None) -> DilutionRateNoise:
    return DilutionRateNoise(sigma=sigma, sigma_z=sigma_z)


def _panel_params(config: ExperimentConfig, theta: float, noise: NoiseSpec, death: bool = False) -> ChemostatParams:
    if death:
        return model_service.table3_params(theta=theta, z_f=config.model.z_f, noise=noise)
    return config.model.model_copy(update={"theta": theta, "noise": noise})


def _noise_columns(params: ChemostatParams) -> dict:
    data = params.noise.model_dump()
    return {f"noise_{key}": value for key, value in data.items()}


def _trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    return pd.DataFrame({
        "path": traj.path, "t": traj.times,
        "x": traj.states[:, 0], "y": traj.states[:, 1], "z": traj.states[:, 2],
    })


def _ensemble_frame(ensemble: Ensemble) -> pd.DataFrame:
    return pd.concat([_trajectory_frame(traj) for traj in ensemble.trajectories], ignore_index=True)


def _summary_frame(ensemble: Ensemble) -> Optional[pd.DataFrame]:
    summary = ensemble.summary
    if summary is None:
        return None
    frame = pd.DataFrame({"t": summary.times})
    for k, name in enumerate(("x", "y", "z")):
        frame[f"mean_{name}"] = summary.mean[:, k]
        frame[f"q05_{name}"] = summary.q05[:, k]
        frame[f"q95_{name}"] = summary.q95[:, k]
    return frame


def _events_frame(ensemble: Ensemble) -> pd.DataFrame:
    rows = [(traj.path, event.population.value, event.time)
            for traj in ensemble.trajectories for event in traj.events]
    return pd.DataFrame(rows, columns=["path", "population", "t_extinct"])


def _tally_row(panel: int, params: ChemostatParams, ensemble: Ensemble) -> dict:
    row = {"panel": panel, "theta": params.theta, **_noise_columns(params)}
    for label in SurvivorLabel:
        row[f"survivor_{label.value}"] = ensemble.survivors.get(label, 0)
    for population, count in ensemble.leaders.items():
        row[f"leader_{population.value}"] = count
    row["failures"] = len(ensemble.failures)
    return row


def _sde_horizon(config: ExperimentConfig, full: bool) -> float:
    return config.run.t_end * (FULL_HORIZON_FACTOR if full else 1.0)


def _sde_figure(config: ExperimentConfig, full: bool, panels: Sequence[Tuple[float, NoiseSpec]],
                runs: int, death: bool = False) -> RecipeResult:
    """Small ensembles started on the coexistence line, one per (theta, noise) panel."""
    result = RecipeResult()
    tally = []
    t_end = _sde_horizon(config, full)
    for panel, (theta, noise) in enumerate(panels):
        params = _panel_params(config, theta, noise, death)
        s0 = config.initial.full_state(params)
        ensemble = sde_service.simulate_ensemble(
            params, s0, config.run.dt, t_end, config.run.seed, runs,
            scheme=config.run.scheme, record_every=config.run.record_every,
        )
        result.add_table("ensemble", _ensemble_frame(ensemble))
        summary = _summary_frame(ensemble)
        if summary is not None:
            result.add_table("summary", summary)
        result.add_table("events", _events_frame(ensemble))
        tally.append(_tally_row(panel, params, ensemble))
    result.add_table("tally", pd.DataFrame(tally))
    return result


def _density_frame(field: DensityField, domain: PolygonDomain) -> pd.DataFrame:
    i, j = np.nonzero(domain.mask)
    return pd.DataFrame({"i": i, "j": j, "x": domain.x, "y": domain.y, "p": field.values})


def _fp_run(config: ExperimentConfig, params: ChemostatParams, horizon: float,
            snapshots: Sequence[float], panel: int = 0) -> RecipeResult:
    fp = config.fokker_planck
    domain = fokker_planck_service.build_domain(params, fp.x_max, fp.y_max, fp.cut_offset, fp.h)
    operator = fokker_planck_service.apply_boundaries(
        fokker_planck_service.assemble_operator(params, domain), outer=fp.outer,
    )
    initial = fokker_planck_service.gaussian_initial(domain, fp.means, fp.sds)
    times = sorted({t for t in snapshots if t <= horizon} | {horizon})
    final, fields = fokker_planck_service.evolve(initial, operator, horizon, fp.dt, fp.scheme, times)

    result = RecipeResult()
    regions = []
    for t in times:
        field = fields.get(t, final)
        diag = fokker_planck_service.diagnostics(field, domain)
        result.add_table("density", _density_frame(field, domain))
        result.add_sidecar("density", {
            "panel": panel, "time": field.time, "total_mass": diag.total_mass,
            "grid": {"h": fp.h, "x_max": fp.x_max, "y_max": fp.y_max, "cut_offset": fp.cut_offset},
            "params": params.model_dump(mode="json"),
        })
        result.add_table("marginal-x", pd.DataFrame({"x": diag.x_nodes, "p": diag.marginal_x}))
        result.add_table("marginal-y", pd.DataFrame({"y": diag.y_nodes, "p": diag.marginal_y}))
        regions.append({
            "panel": panel, "t": field.time, "mass": diag.total_mass,
            "mass_y_below_0.1": fokker_planck_service.mass_in_region(field, domain, y_range=(-np.inf, 0.1)),
            "mass_x_below_0.1": fokker_planck_service.mass_in_region(field, domain, x_range=(-np.inf, 0.1)),
        })
    result.add_table("ledger", pd.DataFrame([record.model_dump() for record in final.ledger]))
    result.add_table("regions", pd.DataFrame(regions))
    return result


def _fp_figure(config: ExperimentConfig, full: bool,
               panels: Sequence[Tuple[float, NoiseSpec, Sequence[float], float]]) -> RecipeResult:
    """Density snapshots per (theta, noise, snapshot times, full horizon) panel."""
    result = RecipeResult()
    for panel, (theta, noise, snapshots, full_horizon) in enumerate(panels):
        params = _panel_params(config, theta, noise)
        horizon = full_horizon if full else min(full_horizon, config.fokker_planck.horizon)
        result.extend(_fp_run(config, params, horizon, snapshots, panel))
    return result


FIG10_PANELS = [(theta, _general(sigmas)) for theta in (1.0, 1.02, 0.98) for sigmas in (LOW_GENERAL, HIGH_GENERAL)]
FIG11_PANELS = (
    [(theta, _general(sigmas)) for theta in (0.99, 1.01) for sigmas in (LOW_GENERAL, HIGH_GENERAL)]
    + [(1.0, _general((0.05, 0.07, 0.01))), (1.0, _general((0.05, 0.07, 0.00001)))]
)
FIG12_PANELS = [(theta, _dilution(sigma)) for theta in (1.0, 1.02) for sigma in (0.0006, 0.001)]
FIG13_PANELS = [(theta, _dilution(sigma)) for theta in (0.98, 0.99) for sigma in (0.0006, 0.001)]
FIG14_PANELS = [(1.0, _dilution(0.0006, 0.000006)), (0.98, _dilution(0.03, 0.000006))]
FIG20_PANELS = [(1.0, _general(LOW_GENERAL)), (1.0, _general(HIGH_GENERAL))]
FIG21_PANELS = [(1.0, _dilution(0.0006)), (0.98, _dilution(0.03))]

FIG15_PANELS = [
    (1.0, _general((0.05, 0.07, 0.0)), (1.0, 500.0, 10000.0), 10000.0),
    (1.0, _general((0.03, 0.03, 0.0)), (1.0, 2500.0, 7000.0), 7000.0),
]
FIG16_PANELS = [
    (0.99, _general((0.5, 0.07, 0.0)), (), 1000.0),
    (0.99, _general((0.03, 0.03, 0.0)), (), 1000.0),
]
FIG18_PANELS = [(1.0, _dilution(0.03), (1.0, 2500.0, 7000.0), SETTINGS.FP_FULL_HORIZON)]
FIG19_PANELS = [
    (0.99, _dilution(0.03), (), 100.0),
    (0.99, _dilution(0.2), (), 300.0),
]

FIG9_AXES = (
    SweepAxis(name="theta", values=[float(v) for v in np.round(np.linspace(0.6, 1.4, 9), 10)]),
    SweepAxis(name="curve_y.gamma", values=[float(v) for v in np.round(np.linspace(0.05, 0.35, 7), 10)]),
)


def _sweep_frame(survivors: SurvivorMap) -> pd.DataFrame:
    return pd.DataFrame([{
        "param1": cell.param1, "param2": cell.param2, "survivor_label": cell.survivor_label.value,
        "final_x": cell.final_x, "final_y": cell.final_y, "final_z": cell.final_z, "error": cell.error,
    } for cell in survivors.cells], columns=SWEEP_COLUMNS)


def _run_sweep(base: ChemostatParams, controls: SweepControls) -> RecipeResult:
    survivors = deterministic_service.survivor_sweep(
        base, controls.axis1, controls.axis2, t_end=controls.t_end, population=controls.population,
    )
    result = RecipeResult()
    result.add_table("survivors", _sweep_frame(survivors))
    result.add_sidecar("survivors", {"axis1": survivors.axis1, "axis2": survivors.axis2})
    return result


def recipe_fig9(config: ExperimentConfig, full: bool) -> RecipeResult:
    """Survivor map of the death-rate model, equal initial populations."""
    base = model_service.table3_params(theta=1.0, z_f=config.model.z_f)
    controls = config.sweep or SweepControls(axis1=FIG9_AXES[0], axis2=FIG9_AXES[1],
                                             t_end=3000.0 if full else 300.0)
    return _run_sweep(base, controls)


def recipe_fig17(config: ExperimentConfig, full: bool) -> RecipeResult:
    """Substrate of the full dilution-noise system against the algebraic substrate of the reduced one."""
    result = RecipeResult()
    stats = []
    t_end = _sde_horizon(config, full)
    for panel, sigma in enumerate((0.0006, 0.0002)):
        params = _panel_params(config, 1.0, _dilution(sigma))
        s0 = config.initial.full_state(params)
        traj = sde_service.simulate(params, s0, config.run.dt, t_end, config.run.seed,
                                    record_every=config.run.record_every)
        x_bar, y_bar = config.initial.reduced_state(params)
        reduced = sde_service.simulate_reduced(
            params, ReducedState(x_bar=x_bar, y_bar=y_bar), config.run.dt, t_end, config.run.seed, 1,
            record_every=config.run.record_every,
        )
        n = min(len(traj.times), len(reduced.times))
        z_full = traj.states[:n, 2]
        z_bar = reduced.states[:n, 0, 2]
        result.add_table("substrate", pd.DataFrame({"t": traj.times[:n], "z_full": z_full, "z_bar": z_bar}))
        stats.append({"panel": panel, "sigma": sigma, "std_z_full": float(np.std(z_full)),
                      "std_z_bar": float(np.nanstd(z_bar)), "reduced_failed": bool(reduced.failed[0])})
    result.add_table("variability", pd.DataFrame(stats))
    return result


def recipe_stages(config: ExperimentConfig, full: bool) -> RecipeResult:
    """Composite staged solution against the full ODE along a feed ladder."""
    controls = config.asymptotic
    report = asymptotic_service.composite_vs_full(
        config.model, controls.M1, controls.M2, controls.z_f_ladder, stage5_horizon=controls.stage5_horizon,
    )
    result = RecipeResult()
    result.add_table("stage-errors", pd.DataFrame([e.model_dump() for e in report.errors]))
    result.add_table("stage2-fit", pd.DataFrame([e.model_dump() for e in report.slope_fit]))
    plan = asymptotic_service.build_stage_plan(config.model, controls.M1, controls.M2, controls.C3)
    result.add_sidecar("stage-plan", plan.model_dump(mode="json"))
    stages = asymptotic_service.staged_trajectory(config.model, plan, stage5_horizon=controls.stage5_horizon)
    result.add_table("stage-trajectory", pd.concat([
        pd.DataFrame({"stage": name, "t": t, "x": states[:, 0], "y": states[:, 1], "z": states[:, 2]})
        for name, (t, states) in stages.items()
    ], ignore_index=True))
    return result


def recipe_convergence(config: ExperimentConfig, full: bool) -> RecipeResult:
    """Strong-order study of both schemes on shared Brownian paths."""
    controls = config.convergence
    s0 = config.initial.full_state(config.model)
    rows = []
    slopes = []
    for scheme in Scheme:
        study = sde_service.strong_order_study(
            config.model, s0, scheme, controls.dt_ladder, controls.n_paths,
            t_end=controls.t_end, seed=config.run.seed, reference_refinement=controls.reference_refinement,
        )
        rows.extend({"scheme": scheme.value, "dt": level.dt, "strong_error": level.strong_error}
                    for level in study.levels)
        slopes.append({"scheme": scheme.value, "slope": study.slope, "reference_dt": study.reference_dt,
                       "n_paths": study.n_paths})
    result = RecipeResult()
    result.add_table("levels", pd.DataFrame(rows))
    result.add_table("slopes", pd.DataFrame(slopes))
    return result


def recipe_simulate_ode(config: ExperimentConfig, full: bool) -> RecipeResult:
    traj = deterministic_service.integrate_ode(
        config.model, config.initial.full_state(config.model), config.run.t_end, config.run.ode,
    )
    result = RecipeResult()
    frame = _trajectory_frame(traj).drop(columns="path")
    frame["mass"] = deterministic_service.mass_relaxation(config.model, float(traj.states[0].sum()), traj.times)
    result.add_table("trajectory", frame)
    result.add_sidecar("trajectory", {
        "survivor": deterministic_service.classify_survivor(config.model, traj.final_state).value,
        "clamps": [clamp.model_dump() for clamp in traj.clamps],
    })
    return result


def recipe_simulate_sde(config: ExperimentConfig, full: bool) -> RecipeResult:
    return _sde_figure(config, full, [(config.model.theta, config.model.noise)], config.run.n_paths)


def recipe_stability(config: ExperimentConfig, full: bool) -> RecipeResult:
    report = deterministic_service.stability_report(config.model)
    rows = []
    for row in report.rows:
        state = row.state or (None, None, None)
        eig = row.eigenvalues or (None, None)
        rows.append({
            "steady_state": row.name, "x": state[0], "y": state[1], "z": state[2],
            "lambda1": eig[0], "lambda2": eig[1], "verdict": row.verdict.value,
            "conditions": "; ".join(row.conditions),
        })
    result = RecipeResult()
    result.add_table("stability", pd.DataFrame(rows))
    return result


def recipe_sweep(config: ExperimentConfig, full: bool) -> RecipeResult:
    if config.sweep is None:
        raise ChemostatException(ErrorCode.CONFIG_ERROR, "the sweep recipe needs a 'sweep' section")
    return _run_sweep(config.model, config.sweep)


def recipe_fokker_planck(config: ExperimentConfig, full: bool) -> RecipeResult:
    fp = config.fokker_planck
    horizon = SETTINGS.FP_FULL_HORIZON if full else fp.horizon
    return _fp_run(config, config.model, horizon, fp.snapshots)


RECIPES: Dict[str, RecipeFn] = {
    "fig9": recipe_fig9,
    "fig10": partial(_sde_figure, panels=FIG10_PANELS, runs=3),
    "fig11": partial(_sde_figure, panels=FIG11_PANELS, runs=3),
    "fig12": partial(_sde_figure, panels=FIG12_PANELS, runs=10),
    "fig13": partial(_sde_figure, panels=FIG13_PANELS, runs=10),
    "fig14": partial(_sde_figure, panels=FIG14_PANELS, runs=3),
    "fig15": partial(_fp_figure, panels=FIG15_PANELS),
    "fig16": partial(_fp_figure, panels=FIG16_PANELS),
    "fig17": recipe_fig17,
    "fig18": partial(_fp_figure, panels=FIG18_PANELS),
    "fig19": partial(_fp_figure, panels=FIG19_PANELS),
    "fig20": partial(_sde_figure, panels=FIG20_PANELS, runs=6, death=True),
    "fig21": partial(_sde_figure, panels=FIG21_PANELS, runs=6, death=True),
    "stages": recipe_stages,
    "convergence": recipe_convergence,
    "simulate-ode": recipe_simulate_ode,
    "simulate-sde": recipe_simulate_sde,
    "stability": recipe_stability,
    "sweep": recipe_sweep,
    "asymptotic": recipe_stages,
    "fokker-planck": recipe_fokker_planck,
}


def available_recipes() -> List[str]:
    return sorted(RECIPES)


def config_hash(config: ExperimentConfig, full: bool = False) -> str:
    return sha256_json({"config": config.canonical(), "full": full})


def run_recipe(name: str, config: ExperimentConfig, full: bool = False, out_dir: Optional[str] = None) -> RunManifest:
    """
    Run a named recipe and write its outputs under ``<out_dir>/<name>/``

    Raises:
        ChemostatException: UNKNOWN_RECIPE, or the failing module's error with the recipe name prepended
    """
    if name not in RECIPES:
        raise ChemostatException(
            ErrorCode.UNKNOWN_RECIPE, f"unknown recipe '{name}'; available: {', '.join(available_recipes())}"
        )
    out_dir = out_dir or config.output_dir
    logger.info(f"Running recipe {name} ({'full' if full else 'desk'} scale) into {out_dir}")
    started = time.perf_counter()
    try:
        result = RECIPES[name](config, full)
    except ChemostatException as e:
        logger.error(f"Recipe {name} failed: {e}")
        raise ChemostatException(e.error_code, f"recipe {name}: {e.message}")
    except Exception as e:
        logger.error(f"Recipe {name} raised unexpectedly: {e}", exc_info=True)
        raise ChemostatException(ErrorCode.NUMERICAL_FAILURE, f"recipe {name}: {e}")

    return output_service.emit_outputs(
        name, result, out_dir, config_hash(config, full),
        seed=config.run.seed, wall_clock=time.perf_counter() - started,
    )


def default_config() -> ExperimentConfig:
    """Table 1 model at desk-scale feed with every control at its documented default."""
    return ExperimentConfig(schema_version=1, model=model_service.table1_params(z_f=DESK_Z_F))
