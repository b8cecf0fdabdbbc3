import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from chemostat.entity.stages import ReducedState, StagePlan
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.services import asymptotic_service as asym
from chemostat.services.model_service import monod, table1_params, table3_params


def _plan(mu1, mu2, **extra):
    return StagePlan(M1=1.0, M2=1.0, L=1.0, mu1=mu1, mu2=mu2, **extra)


def _residual(params, x_bar, y_bar, z_bar):
    return x_bar * monod(params.curve_x, z_bar) + y_bar * monod(params.curve_y, z_bar) - params.theta


def test_stage2_initial_value_and_saturation(table1):
    start = asym.stage2_solution(table1, 1.0, 2.0, 0.0, z0=3.0)
    assert np.allclose(start, [1.0, 2.0, 3.0])
    late = asym.stage2_solution(table1, 1.0, 2.0, 60.0)
    assert late[2] == pytest.approx(table1.z_f, rel=1e-12)


def test_stage2_population_ratio(table1):
    t = np.linspace(0.0, 3.0, 7)
    states = asym.stage2_solution(table1, 1.0, 1.0, t)
    assert np.allclose(states[:, 0] / states[:, 1], np.exp(1.275 * t), rtol=1e-12)


def test_stage2_requires_growth_regime():
    with pytest.raises(ChemostatException) as e:
        asym.stage2_solution(table1_params(theta=2.0), 1.0, 1.0, 1.0)
    assert e.value.error_code == ErrorCode.STAGE_STRUCTURE


def test_matching_constants_table1(table1):
    plan = asym.matching_constants(table1, 1.0, 2.0)
    assert plan.L == pytest.approx(math.log(15000.0) / 1.911, rel=1e-12)
    assert plan.mu1 == pytest.approx(1.0, rel=1e-12)
    assert plan.mu2 == pytest.approx(2.0 * 15000.0 ** (0.636 / 1.911 - 1), rel=1e-9)
    assert plan.l_residual != 0.0


def test_matching_constants_consistent_second_population(table1):
    L = math.log(15000.0) / 1.911
    M2 = 15000.0 * math.exp(-0.636 * L)
    plan = asym.matching_constants(table1, 1.0, M2)
    assert plan.mu2 == pytest.approx(1.0, rel=1e-9)
    assert abs(plan.l_residual) < 1e-9


def test_stage3_limits(table1):
    plan = _plan(0.6, 0.4)
    assert np.allclose(asym.stage3_solution(plan, table1, -60.0), [0.0, 0.0, 1.0], atol=1e-12)
    assert asym.stage3_solution(plan, table1, 0.0)[2] == pytest.approx(0.0, abs=1e-15)


def test_t0_prime_at_origin_when_coefficients_sum_to_one(table1):
    plan = asym.find_t0_prime(_plan(0.6, 0.4), table1)
    assert abs(plan.t0_prime) < 1e-10
    assert plan.x0_prime == pytest.approx(0.6, rel=1e-9)
    assert plan.y0_prime == pytest.approx(0.4, rel=1e-9)


def test_t0_prime_for_small_coefficients(table1):
    plan = asym.find_t0_prime(_plan(0.3, 0.3), table1)
    assert plan.t0_prime > 0
    assert abs(asym.stage3_solution(plan, table1, plan.t0_prime)[2]) <= 1e-12
    assert table1.theta - plan.x0_prime * 2.911 - plan.y0_prime * 1.636 < 0


def test_t0_prime_rejects_zero_coefficients(table1):
    with pytest.raises(ChemostatException) as e:
        asym.find_t0_prime(_plan(0.0, 0.0), table1)
    assert e.value.error_code == ErrorCode.STAGE_STRUCTURE


@pytest.mark.parametrize("x0p, y0p, expected", [(0.6, 0.4, 1.0), (1.0, 0.0, 1.0), (0.8, 0.4, 0.7377)])
def test_stage4_terminal_substrate(table1, x0p, y0p, expected):
    result = asym.stage4_evolve(_plan(1.0, 1.0, x0_prime=x0p, y0_prime=y0p), table1)
    assert result.Z_infinity == pytest.approx(expected, abs=5e-4)
    assert result.Z_integrated == pytest.approx(result.Z_infinity, abs=1e-8)
    assert abs(_residual(table1, x0p, y0p, result.Z_infinity)) <= 1e-10


def test_stage4_needs_frozen_populations(table1):
    with pytest.raises(ChemostatException) as e:
        asym.stage4_evolve(_plan(1.0, 1.0), table1)
    assert e.value.error_code == ErrorCode.STAGE_STRUCTURE


def test_stage5_on_line_image(table1):
    assert asym.stage5_zbar(table1, 0.3, 0.7) == pytest.approx(1.0, abs=1e-12)
    assert asym.stage5_zbar(table1, 1.0, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_stage5_quadratic_roots(table1):
    z_bar = asym.stage5_zbar(table1, 0.8, 0.4)
    low, high = asym.stage5_roots(table1, 0.8, 0.4)
    assert z_bar == pytest.approx(0.7377, abs=5e-4)
    assert high == z_bar
    assert low == pytest.approx(-0.8308, abs=5e-4)
    assert abs(_residual(table1, 0.8, 0.4, z_bar)) <= 1e-10


def test_stage5_below_singularity_line_rejected(table1):
    with pytest.raises(ChemostatException) as e:
        asym.stage5_zbar(table1, 0.1, 0.1)
    assert e.value.error_code == ErrorCode.SINGULARITY


def test_stage5_with_death_solves_balance():
    params = table3_params()
    z_bar = asym.stage5_zbar(params, 0.8, 0.4)
    assert abs(_residual(params, 0.8, 0.4, z_bar)) <= 1e-10


def test_singularity_line(table1):
    assert asym.singularity_line(table1, 0.0) == pytest.approx(1 / 1.636, rel=1e-12)
    assert asym.singularity_line(table1, 1 / 2.911) == pytest.approx(0.0, abs=1e-12)
    x = 0.1
    y = asym.singularity_line(table1, x)
    A, _, _ = asym._quadratic(table1, x, y)
    assert A == pytest.approx(0.0, abs=1e-12)


unit = st.floats(0.0, 3.0)


@given(x_bar=unit, y_bar=unit)
def test_discarded_root_is_never_positive(x_bar, y_bar):
    params = table1_params()
    assume(asym._asymptotic_surplus(params, x_bar, y_bar) > 1e-3)
    low, high = asym.stage5_roots(params, x_bar, y_bar)
    assert low <= 0 < high
    assert abs(_residual(params, x_bar, y_bar, asym.stage5_zbar(params, x_bar, y_bar))) <= 1e-10


def test_vectorised_substrate_matches_scalar(table1):
    xs = np.array([0.8, 0.3, 0.1])
    ys = np.array([0.4, 0.7, 0.1])
    values = asym.stage5_zbar_array(table1, xs, ys)
    assert values[0] == pytest.approx(asym.stage5_zbar(table1, 0.8, 0.4), rel=1e-14)
    assert values[1] == pytest.approx(1.0, abs=1e-12)
    assert np.isnan(values[2])


def test_stage5_fixed_point(table1):
    traj = asym.stage5_integrate(table1, ReducedState(x_bar=0.5, y_bar=0.5), 20.0)
    assert np.allclose(traj.states[-1], [0.5, 0.5, 1.0], atol=1e-8)


def test_stage5_relaxes_onto_line_image(table1):
    traj = asym.stage5_integrate(table1, ReducedState(x_bar=0.8, y_bar=0.4), 200.0)
    x_bar, y_bar, z_bar = traj.states[-1]
    assert x_bar > 0 and y_bar > 0
    assert x_bar + y_bar == pytest.approx(1.0, abs=1e-6)
    assert z_bar == pytest.approx(1.0, abs=1e-5)


def test_stage5_dilution_above_one_removes_y():
    params = table1_params(theta=1.02)
    traj = asym.stage5_integrate(params, ReducedState(x_bar=0.5, y_bar=0.5), 2000.0)
    assert traj.states[-1, 1] < 1e-4
    assert traj.states[-1, 0] > 0.9


def test_stage5_start_too_close_to_line(table1):
    y = asym.singularity_line(table1, 0.1) + 5e-3
    with pytest.raises(ChemostatException) as e:
        asym.stage5_integrate(table1, ReducedState(x_bar=0.1, y_bar=y), 1.0)
    assert e.value.error_code == ErrorCode.SINGULARITY


def test_stage_plan_links_stages(table1):
    plan = asym.build_stage_plan(table1, 1.0, 1.0)
    assert plan.L > 0
    assert table1.theta - plan.x0_prime * 2.911 - plan.y0_prime * 1.636 < 0
    assert abs(_residual(table1, plan.x0_prime, plan.y0_prime, plan.Z_infinity)) <= 1e-10
    # the stage-5 start satisfies the same strict inequality
    assert asym._asymptotic_surplus(table1, plan.x0_prime, plan.y0_prime) > 0


def test_composite_rejects_unordered_ladder(table1):
    with pytest.raises(ChemostatException) as e:
        asym.composite_vs_full(table1, 1.0, 1.0, [1e4, 1e3])
    assert e.value.error_code == ErrorCode.INVALID_PARAMETERS


@pytest.mark.slow
def test_composite_errors_shrink_with_feed(table1):
    report = asym.composite_vs_full(table1, 1.0, 1.0, [1e3, 1e4, 1e5])
    assert all(fit.sup_rel_err < 0.01 for fit in report.slope_fit)
    stage5 = report.series("stage5")
    assert stage5[0] > stage5[-1]
    stage4 = report.series("stage4")
    assert stage4[0] > stage4[-1]


def test_stage1_layer_feeds_into_stage2(table1):
    assert np.allclose(asym.stage1_solution(table1, 2.0, 3.0, 0.5, 0.0), [2.0, 3.0, 0.5])
    t = np.array([1e-7, 1e-6])
    layer = asym.stage1_solution(table1, 2.0, 3.0, 0.5, t)
    outer = asym.stage2_solution(table1, 2.0, 3.0, t, z0=0.5)
    assert layer.shape == (2, 3)
    assert np.allclose(layer[:, 2], outer[:, 2], rtol=1e-5)
    assert np.allclose(layer[:, :2], outer[:, :2], rtol=1e-5)


def test_staged_trajectory_in_full_variables(table1):
    plan = asym.build_stage_plan(table1, 1.0, 1.0)
    stages = asym.staged_trajectory(table1, plan, n_points=51, stage5_horizon=5.0)
    assert list(stages) == ["stage1", "stage2", "stage3", "stage4", "stage5"]
    for t, states in stages.values():
        assert states.shape == (len(t), 3)
        assert np.all(np.diff(t) > 0)
    t1, s1 = stages["stage1"]
    assert np.allclose(s1[0], [1.0, 1.0, 0.0])
    assert t1[-1] == pytest.approx(1.0 / table1.z_f)
    t3, s3 = stages["stage3"]
    assert t3[-1] == pytest.approx(plan.L + plan.t0_prime)
    assert abs(s3[-1, 2]) <= 1e-6 * table1.z_f
    _, s4 = stages["stage4"]
    assert np.allclose(s4[:, 0], table1.z_f * plan.x0_prime)
    assert s4[-1, 2] == pytest.approx(plan.Z_infinity, rel=1e-4)
    t5, s5 = stages["stage5"]
    assert t5[0] == pytest.approx(plan.L + plan.t0_prime)
    assert np.allclose(s5[0, :2], [table1.z_f * plan.x0_prime, table1.z_f * plan.y0_prime])
