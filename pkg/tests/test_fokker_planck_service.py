import numpy as np
import pytest

from chemostat.engine.fv_grid import build_polygon_domain
from chemostat.entity.density import DensityField, MassRecord
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.enums import BoundaryTag, DensityScheme, OuterBoundary
from chemostat.protocol.schemas import DilutionRateNoise, GeneralNoise, NoNoise
from chemostat.services import fokker_planck_service as fp
from chemostat.services.model_service import table1_params


def _uniform(domain):
    values = np.full(domain.n_active, 1.0 / domain.volumes.sum())
    return DensityField(values=values, time=0.0, ledger=[MassRecord(t=0.0, mass=1.0)])


def _node(domain, x, y):
    return domain.index[int(round(x / domain.hx)), int(round(y / domain.hy))]


def test_cut_line_intercepts_table1():
    domain = fp.build_domain(table1_params(), hx=0.01)
    assert domain.intercept == pytest.approx(1 / 1.636 + 0.01, rel=1e-12)
    assert domain.x_intercept == pytest.approx(domain.intercept * 1.636 / 2.911, rel=1e-12)
    assert domain.intercept == pytest.approx(0.62125, abs=1e-4)
    assert domain.x_intercept == pytest.approx(0.34915, abs=1e-4)
    assert domain.shape == (301, 301)
    assert np.all(domain.y > domain.cut_line(domain.x))


def test_equal_rates_give_unit_slope():
    domain = build_polygon_domain(2.0, 2.0, 2.0, 3.0, 3.0, 1e-2, 0.1, 0.1)
    assert domain.slope == 1.0
    assert domain.intercept == pytest.approx(1.01)


@pytest.mark.parametrize("kwargs, code", [
    ({"cut_offset": 0.0}, ErrorCode.INVALID_PARAMETERS),
    ({"hx": 0.07}, ErrorCode.INVALID_PARAMETERS),
    ({"hx": -0.1}, ErrorCode.INVALID_PARAMETERS),
    ({"cut_offset": 10.0}, ErrorCode.EMPTY_DOMAIN),
])
def test_domain_errors(kwargs, code):
    with pytest.raises(ChemostatException) as e:
        fp.build_domain(table1_params(), **{"hx": 0.1, **kwargs})
    assert e.value.error_code == code


def test_boundary_tags(coarse_domain):
    d = coarse_domain
    assert d.tags[_node(d, 0.0, 1.0)] == BoundaryTag.AXIS_Y.value
    assert d.tags[_node(d, 1.0, 0.0)] == BoundaryTag.AXIS_X.value
    assert d.tags[_node(d, 1.0, 1.0)] == BoundaryTag.OUTER_X.value
    assert d.tags[_node(d, 0.5, 1.0)] == BoundaryTag.OUTER_Y.value
    assert d.tags[_node(d, 0.5, 0.5)] == BoundaryTag.INTERIOR.value
    assert _node(d, 0.1, 0.1) == -1
    cut = d.tags == BoundaryTag.CUT_LINE.value
    assert cut.any()
    # cut-line nodes sit within one diagonal step of the removed corner
    gap = d.y[cut] - d.cut_line(d.x[cut])
    assert np.all(gap > 0)
    assert np.all(gap <= d.hy + d.slope * d.hx + 1e-12)


def test_matrix_requires_boundaries(general_noise_params, coarse_domain):
    operator = fp.assemble_operator(general_noise_params, coarse_domain)
    with pytest.raises(ChemostatException) as e:
        operator.matrix
    assert e.value.error_code == ErrorCode.ASSEMBLY_ERROR


@pytest.mark.parametrize("noise", [GeneralNoise(sigma1=0.5, sigma2=0.3), DilutionRateNoise(sigma=0.5), NoNoise()])
def test_reflecting_operator_conserves_mass(noise, coarse_domain):
    params = table1_params(noise=noise)
    operator = fp.apply_boundaries(fp.assemble_operator(params, coarse_domain))
    balance = operator.column_balance()
    scale = np.abs(operator.matrix).max() * operator.volumes.max()
    assert np.max(np.abs(balance)) <= 1e-12 * scale


def test_general_and_dilution_differ_only_by_cross_term(coarse_domain):
    general = fp.assemble_operator(table1_params(noise=GeneralNoise(sigma1=0.5, sigma2=0.5)), coarse_domain)
    dilution = fp.assemble_operator(table1_params(noise=DilutionRateNoise(sigma=0.5)), coarse_domain)
    assert (general.base != dilution.base).nnz == 0
    assert general.cross.nnz == 0
    assert dilution.cross.nnz > 0


@pytest.mark.parametrize("scheme", [DensityScheme.IMPLICIT_EULER, DensityScheme.CRANK_NICOLSON])
def test_calibration_operator_annihilates_constants(coarse_domain, scheme):
    params = table1_params(noise=DilutionRateNoise(sigma=0.5))
    operator = fp.apply_boundaries(fp.assemble_operator(params, coarse_domain, calibration=True))
    assert np.max(np.abs(operator.matrix @ np.ones(coarse_domain.n_active))) <= 1e-10
    field = _uniform(coarse_domain)
    stepped = fp.step_density(field, operator, 0.05, scheme)
    assert np.allclose(stepped.values, field.values, rtol=1e-8)


def test_axis_supported_mass_stays_on_axis(coarse_domain):
    on_axis = coarse_domain.y == 0.0
    for noise in (GeneralNoise(sigma1=0.5, sigma2=0.5), DilutionRateNoise(sigma=0.5)):
        operator = fp.apply_boundaries(fp.assemble_operator(table1_params(noise=noise), coarse_domain))
        block = operator.matrix[np.flatnonzero(~on_axis)][:, np.flatnonzero(on_axis)]
        assert abs(block).max() == 0.0

        values = np.where(on_axis & (coarse_domain.x >= 0.6), 1.0, 0.0)
        field = DensityField(values=values / (coarse_domain.volumes @ values), time=0.0)
        field, _ = fp.evolve(field, operator, 0.5, dt=0.05)
        assert coarse_domain.volumes[~on_axis] @ np.abs(field.values[~on_axis]) <= 1e-8


def test_gaussian_initial_on_fine_grid():
    domain = fp.build_domain(table1_params(), hx=0.01)
    assert 0.999 <= fp.gaussian_mass(domain) <= 1.001
    assert fp.gaussian_mass_outside(domain, (0.5, 0.5), (0.05, 0.05)) < 1e-6
    field = fp.gaussian_initial(domain)
    assert field.ledger[0].mass == pytest.approx(1.0, abs=1e-12)
    peak = int(np.argmax(field.values))
    assert domain.x[peak] == pytest.approx(0.5)
    assert domain.y[peak] == pytest.approx(0.5)
    assert np.all(field.values >= 0)


def test_gaussian_too_close_to_edge(coarse_domain):
    with pytest.raises(ChemostatException) as e:
        fp.gaussian_initial(coarse_domain, means=(0.05, 0.9))
    assert e.value.error_code == ErrorCode.MASS_OUTSIDE_DOMAIN


def test_reflecting_evolution_keeps_mass(general_noise_params, coarse_domain):
    operator = fp.apply_boundaries(fp.assemble_operator(general_noise_params, coarse_domain))
    field, snapshots = fp.evolve(_uniform(coarse_domain), operator, 1.0, dt=0.05, snapshot_times=[0.0, 0.5, 1.0])
    assert sorted(snapshots) == [0.0, 0.5, 1.0]
    assert len(field.ledger) == 21
    assert field.time == pytest.approx(1.0)
    assert abs(field.ledger[-1].mass - 1.0) <= 1e-8
    assert field.ledger[-1].leaked == 0.0
    assert all(record.clipped == 0.0 for record in field.ledger)
    assert np.all(field.values >= -1e-12)


def test_open_cut_line_leaks(general_noise_params, coarse_domain):
    closed = fp.apply_boundaries(fp.assemble_operator(general_noise_params, coarse_domain))
    opened = fp.apply_boundaries(fp.assemble_operator(general_noise_params, coarse_domain), cut_line_flux=False)
    start = _uniform(coarse_domain)
    kept, _ = fp.evolve(start, closed, 1.0, dt=0.05)
    leaky, _ = fp.evolve(start, opened, 1.0, dt=0.05)
    assert 1.0 - leaky.ledger[-1].mass > 1e-4
    assert 1.0 - leaky.ledger[-1].mass > 100 * abs(1.0 - kept.ledger[-1].mass)
    assert leaky.ledger[-1].mass + leaky.ledger[-1].leaked == pytest.approx(1.0, abs=1e-8)


def test_absorbing_box_books_leakage(general_noise_params, coarse_domain):
    operator = fp.apply_boundaries(fp.assemble_operator(general_noise_params, coarse_domain),
                                   outer=OuterBoundary.ABSORBING)
    field, _ = fp.evolve(_uniform(coarse_domain), operator, 0.5, dt=0.05)
    last = field.ledger[-1]
    assert last.leaked > 0
    assert last.mass + last.leaked == pytest.approx(1.0, abs=1e-8)


def test_step_rejects_non_positive_dt(general_noise_params, coarse_domain):
    operator = fp.apply_boundaries(fp.assemble_operator(general_noise_params, coarse_domain))
    with pytest.raises(ChemostatException):
        fp.step_density(_uniform(coarse_domain), operator, 0.0)


def test_marginals_integrate_to_total(coarse_domain):
    field = fp.gaussian_initial(coarse_domain, sds=(0.07, 0.07))
    diag = fp.diagnostics(field, coarse_domain)
    assert diag.total_mass == pytest.approx(1.0, abs=1e-12)
    assert coarse_domain.widths_x @ diag.marginal_x == pytest.approx(diag.total_mass, abs=1e-10)
    assert coarse_domain.widths_y @ diag.marginal_y == pytest.approx(diag.total_mass, abs=1e-10)


def test_region_queries(coarse_domain):
    field = fp.gaussian_initial(coarse_domain, sds=(0.07, 0.07))
    everything = fp.mass_in_region(field, coarse_domain)
    assert everything == pytest.approx(1.0, abs=1e-12)
    left = fp.mass_in_region(field, coarse_domain, x_range=(0.0, 0.49))
    right = fp.mass_in_region(field, coarse_domain, x_range=(0.51, 1.0))
    middle = fp.mass_in_region(field, coarse_domain, x_range=(0.495, 0.505))
    assert left + middle + right == pytest.approx(1.0, abs=1e-12)
    below_diagonal = fp.mass_in_region(field, coarse_domain, half_plane=(-1.0, 1.0, 0.0))
    assert 0.4 < below_diagonal < 0.7
    with pytest.warns(UserWarning, match="no active node"):
        assert fp.mass_in_region(field, coarse_domain, x_range=(5.0, 6.0)) == 0.0


def test_crosscheck_rejects_mismatched_models(general_noise_params, coarse_domain):
    field = fp.gaussian_initial(coarse_domain)
    other = general_noise_params.with_updates(theta=0.99)
    with pytest.raises(ChemostatException) as e:
        fp.fp_vs_sde_crosscheck(general_noise_params, field, coarse_domain, fp_params=other, n_paths=10)
    assert e.value.error_code == ErrorCode.MISMATCHED_CONFIG


def test_crosscheck_report_shape(general_noise_params, coarse_domain):
    operator = fp.apply_boundaries(fp.assemble_operator(general_noise_params, coarse_domain))
    field, _ = fp.evolve(fp.gaussian_initial(coarse_domain), operator, 0.2, dt=0.05)
    report = fp.fp_vs_sde_crosscheck(general_noise_params, field, coarse_domain, fp_params=general_noise_params,
                                     n_paths=300, seed=4, sde_dt=0.01, bins=10)
    assert 0.0 <= report.tv_distance <= 1.0
    assert report.fp_histogram.shape == (10, 10)
    assert report.fp_histogram.sum() == pytest.approx(1.0)
    assert report.sde_histogram.sum() == pytest.approx(1.0)
    assert report.n_failed == 0


@pytest.mark.slow
def test_density_matches_reduced_ensemble_at_ci_horizon():
    params = table1_params(noise=DilutionRateNoise(sigma=0.03))
    domain = fp.build_domain(params)
    operator = fp.apply_boundaries(fp.assemble_operator(params, domain))
    field, _ = fp.evolve(fp.gaussian_initial(domain), operator, 500.0)
    assert abs(field.ledger[-1].mass - 1.0) <= 0.01
    assert max(record.clipped for record in field.ledger) <= 1e-10
    assert fp.mass_in_region(field, domain, y_range=(-np.inf, 0.1)) >= 0.9
    report = fp.fp_vs_sde_crosscheck(params, field, domain, fp_params=params, n_paths=10_000, seed=1)
    assert report.tv_distance <= 0.15


@pytest.mark.slow
def test_dilution_below_one_empties_x():
    params = table1_params(theta=0.99, noise=DilutionRateNoise(sigma=0.03))
    domain = fp.build_domain(params)
    operator = fp.apply_boundaries(fp.assemble_operator(params, domain))
    field, _ = fp.evolve(fp.gaussian_initial(domain), operator, 100.0)
    assert abs(field.ledger[-1].mass - 1.0) <= 0.01
    assert fp.mass_in_region(field, domain, x_range=(-np.inf, 0.1)) >= 0.9
