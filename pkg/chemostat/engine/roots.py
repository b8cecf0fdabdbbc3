import logging
import math
from typing import Callable, Tuple

from scipy.optimize import brentq

from chemostat.exceptions import ChemostatException, ErrorCode

logger = logging.getLogger(__name__)


def stable_quadratic_roots(A: float, B: float, C: float) -> Tuple[float, float]:
    """
    Real roots of A r^2 + B r + C = 0 in ascending order, A != 0 and B^2 - 4AC >= 0

    The larger-magnitude root is formed first and the other follows from r1 r2 = C/A,
    so neither root suffers cancellation.
    """
    disc = B * B - 4.0 * A * C
    if disc < 0:
        raise ChemostatException(ErrorCode.NO_ROOT_FOUND, f"complex roots, discriminant {disc:.6g}")
    q = -0.5 * (B + math.copysign(math.sqrt(disc), B))
    if q == 0.0:
        return 0.0, 0.0
    r1, r2 = q / A, C / q
    return (r1, r2) if r1 <= r2 else (r2, r1)


def find_root(fun: Callable[[float], float], lo: float, hi: float,
              xtol: float = 1e-14, rtol: float = 8.9e-16) -> float:
    """Bracketed root by Brent's method, failures mapped to NO_ROOT_FOUND."""
    f_lo, f_hi = fun(lo), fun(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if f_lo * f_hi > 0:
        raise ChemostatException(
            ErrorCode.NO_ROOT_FOUND,
            f"no sign change on [{lo:.6g}, {hi:.6g}]: f={f_lo:.3g}, {f_hi:.3g}",
        )
    try:
        return brentq(fun, lo, hi, xtol=xtol, rtol=rtol, maxiter=500)
    except (RuntimeError, ValueError) as e:
        logger.error(f"brentq failed on [{lo}, {hi}]: {e}", exc_info=True)
        raise ChemostatException(ErrorCode.NO_ROOT_FOUND, str(e))


def expand_bracket(fun: Callable[[float], float], lo: float, hi: float,
                   factor: float = 2.0, max_expansions: int = 60,
                   lower_limit: float = -math.inf) -> Tuple[float, float]:
    """
    Grow [lo, hi] geometrically until fun changes sign over it

    The upper end moves outward; the lower end moves only when lower_limit allows.
    """
    f_lo, f_hi = fun(lo), fun(hi)
    for _ in range(max_expansions):
        if f_lo * f_hi <= 0:
            return lo, hi
        width = hi - lo
        hi = hi + factor * width
        f_hi = fun(hi)
        if lo - factor * width >= lower_limit:
            lo = lo - factor * width
            f_lo = fun(lo)
    if f_lo * f_hi <= 0:
        return lo, hi
    raise ChemostatException(ErrorCode.NO_ROOT_FOUND, f"no sign change found up to [{lo:.6g}, {hi:.6g}]")
