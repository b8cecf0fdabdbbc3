import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from chemostat.entity.sweep import SweepAxis
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.enums import Population, SurvivorLabel, Verdict
from chemostat.protocol.schemas import ChemostatParams, GrowthCurve, OdeControls
from chemostat.services import deterministic_service as det
from chemostat.services.model_service import table1_params


def test_washout_and_line_points_are_fixed(table1):
    assert np.allclose(det.rhs(table1, [0.0, 0.0, table1.z_f]), 0.0)
    x = 7000.0
    assert np.allclose(det.rhs(table1, [x, det.coexistence_line(table1, x), 1.0]), 0.0, atol=1e-9)


def test_rhs_at_unit_state(table1):
    assert np.allclose(det.rhs(table1, [1.0, 1.0, 1.0]), [0.0, 0.0, table1.z_f - 1 - 2])


def test_rhs_broadcasts_over_leading_axes(table1):
    states = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, table1.z_f]])
    assert det.rhs(table1, states).shape == (2, 3)


def test_coexistence_line_endpoints(table1):
    assert det.coexistence_line(table1, 0.0) == table1.z_f - 1
    assert det.coexistence_line(table1, table1.z_f - 1) == 0.0
    assert det.coexistence_line(table1, 7499.0) == 7500.0
    with pytest.raises(ChemostatException):
        det.coexistence_line(table1, table1.z_f)


def test_total_mass_relaxes_exponentially(table1):
    traj = det.integrate_ode(table1, (1.0, 1.0, 0.0), 20.0)
    total = traj.states.sum(axis=1)
    exact = det.mass_relaxation(table1, 2.0, traj.times)
    assert np.allclose(total, exact, rtol=1e-6)
    assert abs(total[-1] - table1.z_f) < 1e-3 * table1.z_f


def test_line_start_stays_put(table1):
    start = (7499.0, 7500.0, 1.0)
    traj = det.integrate_ode(table1, start, 50.0)
    # z sits near 1 while x, y are O(z_f), so z needs an absolute floor
    assert np.allclose(traj.final_state, start, rtol=1e-6, atol=1e-8 * table1.z_f)


def test_dilution_above_one_selects_x():
    params = table1_params(theta=1.02, z_f=20.0)
    traj = det.integrate_ode(params, (1.0, 1.0, 18.0), 3000.0, OdeControls(method="LSODA", n_output=3))
    assert det.classify_survivor(params, traj.final_state) == SurvivorLabel.X


def test_halved_tolerances_keep_the_label():
    params = table1_params(theta=1.02, z_f=20.0)
    controls = OdeControls(method="LSODA", n_output=3)
    labels = [
        det.classify_survivor(params, det.integrate_ode(params, (1.0, 1.0, 18.0), 3000.0, c).final_state)
        for c in (controls, controls.halved())
    ]
    assert labels == [SurvivorLabel.X, SurvivorLabel.X]


def test_integrate_rejects_negative_start(table1):
    with pytest.raises(ChemostatException) as e:
        det.integrate_ode(table1, (-1.0, 1.0, 1.0), 1.0)
    assert e.value.error_code == ErrorCode.DOMAIN_ERROR


def test_washout_eigenvalues_table1(table1):
    lam = det.eigenvalues_washout(table1)
    assert lam == pytest.approx((0.63593, 1.91063), abs=1e-5)
    assert det.stability_report(table1).row("washout").verdict == Verdict.UNSTABLE


def test_washout_stable_above_asymptotic_rates():
    params = table1_params(theta=3.0, z_f=20.0)
    assert max(det.eigenvalues_washout(params)) < 0


def test_single_survivor_signs_table1():
    below = det.stability_report(table1_params(theta=0.98))
    assert below.row("y-survivor").verdict == Verdict.STABLE
    assert below.row("x-survivor").eigenvalues[1] > 0
    above = det.stability_report(table1_params(theta=1.02))
    assert above.row("x-survivor").verdict == Verdict.STABLE
    assert above.row("y-survivor").eigenvalues[1] > 0


def test_survivor_absent_when_break_even_exceeds_feed():
    params = table1_params(theta=1.0, z_f=1.5).with_updates(theta=1.5)
    report = det.stability_report(params)
    assert report.row("y-survivor").verdict == Verdict.ABSENT
    with pytest.raises(ChemostatException) as e:
        det.single_survivor_state(params, Population.Y)
    assert e.value.error_code == ErrorCode.STEADY_STATE_ABSENT


curve = st.builds(
    GrowthCurve,
    a=st.floats(1.2, 4.0),
    b=st.floats(0.1, 3.0),
    gamma=st.floats(0.0, 0.1),
)


@settings(max_examples=200, deadline=None)
@given(cx=curve, cy=curve, theta=st.floats(0.5, 1.1), z_f=st.floats(5.0, 50.0),
       which=st.sampled_from([Population.X, Population.Y]))
def test_single_survivor_eigenvalues_match_numerical_jacobian(cx, cy, theta, z_f, which):
    params = ChemostatParams(theta=theta, z_f=z_f, curve_x=cx, curve_y=cy)
    try:
        x, y, _ = det.single_survivor_state(params, which)
    except ChemostatException:
        assume(False)
    closed = sorted(det.eigenvalues_single_survivor(params, which))
    numeric = sorted(np.linalg.eigvals(det.jacobian_numeric(params, (x, y))).real)
    scale = max(1.0, max(abs(v) for v in closed))
    assert np.allclose(closed, numeric, rtol=1e-6, atol=1e-6 * scale)


def test_line_eigenvalue_matches_numerical_jacobian(small_table1):
    A = 9.0
    lam1, lam2 = det.eigenvalue_coexistence_line(small_table1, A)
    jac = det.jacobian_numeric(small_table1, (small_table1.z_f - 1 - A, A))
    numeric = sorted(np.linalg.eigvals(jac).real)
    assert lam2 == 0.0
    assert numeric[0] == pytest.approx(lam1, rel=1e-6)
    assert abs(numeric[1]) < 1e-6
    assert np.linalg.svd(jac, compute_uv=False)[-1] < 1e-8 * np.linalg.norm(jac)


def test_line_eigenvalue_limits(table1):
    a1, b1 = table1.curve_x.a, table1.curve_x.b
    a2, b2 = table1.curve_y.a, table1.curve_y.b
    z_f = table1.z_f
    near_axis, _ = det.eigenvalue_coexistence_line(table1, 1e-9)
    assert near_axis == pytest.approx(a1 * b1 * (1 - z_f) / (b1 + 1) ** 2, rel=1e-9)
    end, _ = det.eigenvalue_coexistence_line(table1, z_f - 1 - 1e-9)
    assert end == pytest.approx(-(z_f - 1) * a2 * b2 / (b2 + 1) ** 2, rel=1e-9)
    assert det.eigenvalue_coexistence_line(table1, 7499.0)[0] < 0


def test_line_requires_unit_dilution():
    with pytest.raises(ChemostatException) as e:
        det.eigenvalue_coexistence_line(table1_params(theta=1.02), 10.0)
    assert e.value.error_code == ErrorCode.LINE_REQUIRES_UNIT_THETA


def test_line_row_in_report(table1):
    row = det.stability_report(table1).row("coexistence-line")
    assert row.verdict == Verdict.NEUTRAL_ALONG_LINE
    assert det.stability_report(table1_params(theta=0.98)).row("coexistence-line").verdict == Verdict.ABSENT


def test_classify_survivor_labels(table1):
    assert det.classify_survivor(table1, np.array([5000.0, 9998.0, 1.0])) == SurvivorLabel.COEXIST
    washout = table1_params(theta=3.0, z_f=20.0)
    assert det.classify_survivor(washout, np.array([0.0, 0.0, 20.0])) == SurvivorLabel.BOTH_WASHOUT


def test_washout_on_the_line_is_not_coexistence(table1):
    # both populations gone but still able to grow at z_f, so neither wins
    assert det.classify_survivor(table1, np.array([0.0, 0.0, table1.z_f])) == SurvivorLabel.UNDETERMINED


def test_one_low_but_growing_population_is_undetermined():
    params = table1_params(theta=1.02, z_f=20.0)
    assert det.classify_survivor(params, np.array([1e-6, 10.0, 15.0])) == SurvivorLabel.UNDETERMINED


def test_survivor_sweep_over_dilution():
    base = table1_params(theta=1.0, z_f=20.0)
    result = det.survivor_sweep(base, SweepAxis(name="theta", values=[0.98, 1.02, 3.0]), t_end=3000.0, workers=2)
    assert result.labels() == [SurvivorLabel.Y, SurvivorLabel.X, SurvivorLabel.BOTH_WASHOUT]


@pytest.mark.parametrize("controls", [None, OdeControls(method="LSODA", n_output=2)])
def test_two_axis_sweep_on_default_pool(controls):
    base = table1_params(theta=1.0, z_f=20.0)
    result = det.survivor_sweep(
        base,
        SweepAxis(name="theta", values=[0.9, 0.95, 1.0, 1.05]),
        SweepAxis(name="curve_y.gamma", values=[0.0, 0.05]),
        t_end=50.0,
        controls=controls,
    )
    assert len(result.cells) == 8
    assert SurvivorLabel.NUMERICAL_FAILURE not in result.labels()
    assert all(cell.error is None for cell in result.cells)


def test_sweep_rejects_invalid_cell():
    base = table1_params(theta=1.0, z_f=20.0)
    with pytest.raises(ChemostatException) as e:
        det.survivor_sweep(base, SweepAxis(name="z_f", values=[0.5]))
    assert e.value.error_code == ErrorCode.INVALID_PARAMETERS
