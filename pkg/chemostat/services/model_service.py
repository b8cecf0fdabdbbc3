import logging
import math
from typing import List, Tuple, Union

import numpy as np

from chemostat.engine.roots import stable_quadratic_roots
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.protocol.enums import CaseLabel
from chemostat.protocol.schemas import (
    ChemostatParams, DimensionalParams, GrowthCurve, IntersectionReport, MonodCurve, NoNoise, NoiseSpec,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

CROSSING_TOLERANCE = 1e-6
DEGENERACY_TOLERANCE = 1e-12
POLE_TOLERANCE = 1e-6

# Escherichia coli (x) and Spirillum (y), no death
TABLE_1_CURVES = (GrowthCurve(a=2.911, b=1.911), GrowthCurve(a=1.636, b=0.636))
# Reversed asymptotic dominance through death rates
TABLE_3_CURVES = (
    GrowthCurve.from_break_even(a=2.512, b=0.041),
    GrowthCurve.from_break_even(a=1.411, b=0.204),
)
TABLE_3_TABULATED_GAMMA = (1.41306, 0.171927)
DEFAULT_Z_F = 15000.0


def table1_params(theta: float = 1.0, z_f: float = DEFAULT_Z_F, noise: NoiseSpec = None) -> ChemostatParams:
    return ChemostatParams(theta=theta, z_f=z_f, curve_x=TABLE_1_CURVES[0], curve_y=TABLE_1_CURVES[1],
                           noise=noise or NoNoise())


def table3_params(theta: float = 1.0, z_f: float = DEFAULT_Z_F, noise: NoiseSpec = None) -> ChemostatParams:
    return ChemostatParams(theta=theta, z_f=z_f, curve_x=TABLE_3_CURVES[0], curve_y=TABLE_3_CURVES[1],
                           noise=noise or NoNoise())


def growth_rate(curve: GrowthCurve, z: ArrayLike) -> ArrayLike:
    """
    Dimensionless Monod growth rate a*z/(b+z) - gamma

    Args:
        curve: Growth curve
        z: Dimensionless substrate, scalar or array, must be non-negative

    Returns:
        Growth rate with the shape of z
    """
    if np.any(np.asarray(z) < 0):
        raise ChemostatException(ErrorCode.DOMAIN_ERROR, f"growth rate undefined for negative substrate z={z}")
    return monod(curve, z)


def monod(curve: GrowthCurve, z: ArrayLike) -> ArrayLike:
    # unchecked kernel for integrators whose states are already non-negative
    return curve.a * z / (curve.b + z) - curve.gamma


def monod_slope(curve: GrowthCurve, z: ArrayLike) -> ArrayLike:
    return curve.a * curve.b / (curve.b + z) ** 2


def nondimensionalise(dim: DimensionalParams, s_c: float, noise: NoiseSpec = None) -> ChemostatParams:
    """
    Scale a dimensional chemostat by its break-even point

    Args:
        dim: Dimensional parameters
        s_c: Substrate concentration at which the two growth curves cross
        noise: Noise structure carried into the dimensionless parameters

    Returns:
        ChemostatParams whose curves satisfy f(1) = g(1) = 1
    """
    if s_c <= 0:
        raise ChemostatException(ErrorCode.NOT_A_CROSSING, f"s_c must be positive, got {s_c}")
    mu1 = dim.curve(0).rate(s_c)
    mu2 = dim.curve(1).rate(s_c)
    if abs(mu1 - mu2) > CROSSING_TOLERANCE * max(abs(mu1), abs(mu2)):
        raise ChemostatException(
            ErrorCode.NOT_A_CROSSING,
            f"mu1(s_c)={mu1:.12g} and mu2(s_c)={mu2:.12g} differ beyond tolerance",
        )
    mu_c = mu1
    if mu_c <= 0:
        raise ChemostatException(ErrorCode.NOT_A_CROSSING, f"growth rate at crossing must be positive, got {mu_c}")

    curves = [
        GrowthCurve(a=dim.mu_m[i] / mu_c, b=dim.K_s[i] / s_c, gamma=dim.d[i] / mu_c)
        for i in range(2)
    ]
    return ChemostatParams(
        theta=dim.q_over_V / mu_c,
        z_f=dim.s_f / s_c,
        curve_x=curves[0],
        curve_y=curves[1],
        noise=noise or NoNoise(),
    )


def dimensionalise(params: ChemostatParams, s_c: float, mu_c: float,
                   Y: Tuple[float, float] = (1.0, 1.0)) -> DimensionalParams:
    """Inverse of nondimensionalise for a chosen crossing (s_c, mu_c)."""
    curves = (params.curve_x, params.curve_y)
    return DimensionalParams(
        mu_m=tuple(c.a * mu_c for c in curves),
        K_s=tuple(c.b * s_c for c in curves),
        d=tuple(c.gamma * mu_c for c in curves),
        Y=Y,
        s_f=params.z_f * s_c,
        q_over_V=params.theta * mu_c,
    )


def _quadratic_coefficients(curve1: MonodCurve, curve2: MonodCurve) -> Tuple[float, float, float]:
    mu1, k1, d1 = curve1.mu_m, curve1.K_s, curve1.d
    mu2, k2, d2 = curve2.mu_m, curve2.K_s, curve2.d
    A = mu1 - d1 + d2 - mu2
    B = k2 * (mu1 - d1 + d2) - k1 * (mu2 - d2 + d1)
    C = k1 * k2 * (d2 - d1)
    return A, B, C


def _drop_poles(roots: List[float], curve1: MonodCurve, curve2: MonodCurve) -> List[float]:
    # clearing denominators admits s = -K_s, where neither curve is defined
    return [r for r in roots
            if all(abs(c.K_s + r) > POLE_TOLERANCE * max(1.0, c.K_s) for c in (curve1, curve2))]


def intersection_points(curve1: MonodCurve, curve2: MonodCurve) -> IntersectionReport:
    """
    Crossings of two dimensional Monod-with-death curves and their geometry

    Args:
        curve1: Curve of the population assumed dominant at large substrate
        curve2: Competing curve

    Returns:
        IntersectionReport with ascending roots and the case label
    """
    if curve1 == curve2:
        raise ChemostatException(ErrorCode.DOMAIN_ERROR, "identical curves cross everywhere")

    A, B, C = _quadratic_coefficients(curve1, curve2)
    scale = max(abs(curve1.mu_m - curve1.d + curve2.d), abs(curve2.mu_m))

    if abs(A) < DEGENERACY_TOLERANCE * scale:
        roots = _drop_poles([-C / B] if B != 0 else [], curve1, curve2)
        logger.info(f"degenerate crossing: leading coefficient {A:.3g} treated as zero")
        return IntersectionReport(
            roots=roots,
            case_label=CaseLabel.DEGENERATE,
            growth_at_roots=[curve1.rate(r) for r in roots],
            coefficients=(A, B, C),
        )

    if B * B - 4.0 * A * C < 0:
        return IntersectionReport(roots=[], case_label=CaseLabel.DEGENERATE, growth_at_roots=[],
                                  coefficients=(A, B, C))

    roots = _drop_poles(list(stable_quadratic_roots(A, B, C)), curve1, curve2)
    growth = [curve1.rate(r) for r in roots]
    if len(roots) < 2:
        logger.info(f"crossing at a pole discarded, {len(roots)} root(s) left")
        return IntersectionReport(roots=roots, case_label=CaseLabel.DEGENERATE, growth_at_roots=growth,
                                  coefficients=(A, B, C))
    return IntersectionReport(
        roots=roots,
        case_label=_classify(roots, growth),
        growth_at_roots=growth,
        coefficients=(A, B, C),
    )


def _classify(roots: List[float], growth: List[float]) -> CaseLabel:
    (s1, s2), (m1, m2) = roots, growth
    upper_right = s2 > 0 and m2 > 0
    if not upper_right:
        return CaseLabel.DEGENERATE
    if s1 > 0 and m1 > 0:
        return CaseLabel.A
    if s1 >= 0 and m1 <= 0:
        return CaseLabel.B
    if s1 < 0 and m1 <= 0:
        return CaseLabel.C
    return CaseLabel.DEGENERATE


def break_even_concentration(dim: DimensionalParams) -> float:
    """Largest positive crossing with positive growth, the point nondimensionalise scales by."""
    report = intersection_points(dim.curve(0), dim.curve(1))
    candidates = [r for r, m in zip(report.roots, report.growth_at_roots) if r > 0 and m > 0]
    if not candidates:
        raise ChemostatException(ErrorCode.NOT_A_CROSSING, f"no crossing with positive growth ({report.case_label.value})")
    return max(candidates)


def check_case_conditions(curve1: MonodCurve, curve2: MonodCurve) -> List[Tuple[str, bool]]:
    """
    Evaluate the parameter inequalities behind the crossing cases

    Maximum rates are used wherever the inequalities mix mu_i and mu_m^i.

    Returns:
        List of (condition id, satisfied) in id order
    """
    mu1, k1, d1 = curve1.mu_m, curve1.K_s, curve1.d
    mu2, k2, d2 = curve2.mu_m, curve2.K_s, curve2.d

    def zero_crossing(mu: float, k: float, d: float) -> float:
        # substrate where mu_m*s/(K+s) = d
        return k * d / (mu - d) if mu > d else math.inf

    return [
        ("48", mu1 - d1 > mu2 - d2),
        ("49", mu1 > d1),
        ("50", mu2 > d2),
        ("51", d2 > d1),
        ("52", zero_crossing(mu1, k1, d1) > zero_crossing(mu2, k2, d2)),
        ("53", k1 > k2),
        ("54", d1 > d2),
        ("55", mu1 > mu2),
    ]
