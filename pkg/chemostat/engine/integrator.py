import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from chemostat.entity.trajectory import ClampEvent
from chemostat.exceptions import ChemostatException, ErrorCode

logger = logging.getLogger(__name__)

MAX_RESTARTS = 200
COMPONENTS = ("x", "y", "z")


def integrate_clamped(fun: Callable[[float, np.ndarray], np.ndarray],
                      y0: Sequence[float],
                      t_eval: np.ndarray,
                      rtol: float,
                      atol: float,
                      method: str = "RK45",
                      max_step: Optional[float] = None) -> Tuple[np.ndarray, List[ClampEvent]]:
    """
    Integrate a non-negative system with solve_ivp, restarting at every negativity event

    The right-hand side always sees max(state, 0). A component that crosses -atol
    stops the integration; it is set to zero and integration restarts from there.
    Output values in (-atol, 0) are clamped to zero.

    Args:
        fun: Right-hand side f(t, state)
        y0: Initial state
        t_eval: Increasing output times starting at 0
        rtol: Relative tolerance
        atol: Absolute tolerance
        method: solve_ivp method name
        max_step: Optional cap on the step

    Returns:
        (states at t_eval with shape (len(t_eval), n), clamp events)
    """
    n = len(y0)

    def positive_fun(t, s):
        return fun(t, np.maximum(s, 0.0))

    def make_event(k):
        def event(t, s):
            return s[k] + atol
        event.terminal = True
        event.direction = -1
        return event

    events = [make_event(k) for k in range(n)]
    extra = {} if max_step is None else {"max_step": max_step}

    states = np.empty((len(t_eval), n))
    clamps: List[ClampEvent] = []
    t0, s0 = float(t_eval[0]), np.asarray(y0, dtype=float).copy()
    t_end = float(t_eval[-1])
    filled = 0

    for _ in range(MAX_RESTARTS):
        pending = t_eval[filled:]
        sol = solve_ivp(positive_fun, (t0, t_end), s0, method=method, t_eval=pending, events=events,
                        rtol=rtol, atol=atol, **extra)
        if sol.status == -1:
            raise ChemostatException(
                ErrorCode.STEP_SIZE_UNDERFLOW,
                f"integration failed at t={sol.t[-1] if sol.t.size else t0:.6g}: {sol.message}",
            )
        count = sol.t.size
        states[filled:filled + count] = sol.y.T
        filled += count
        if sol.status == 0:
            break

        # terminal negativity event: clamp and restart
        hit = next(k for k, times in enumerate(sol.t_events) if times.size)
        t0 = float(sol.t_events[hit][0])
        s0 = np.maximum(sol.y_events[hit][0], 0.0)
        s0[hit] = 0.0
        label = COMPONENTS[hit] if hit < len(COMPONENTS) else str(hit)
        clamps.append(ClampEvent(component=label, time=t0, value=float(sol.y_events[hit][0][hit])))
        logger.info(f"component {label} clamped to 0 at t={t0:.6g}")
        if filled < len(t_eval) and t_eval[filled] <= t0:
            # the event landed exactly on an output time
            states[filled] = s0
            filled += 1
        if filled == len(t_eval):
            break
    else:
        raise ChemostatException(ErrorCode.STEP_SIZE_UNDERFLOW,
                                 f"more than {MAX_RESTARTS} negativity restarts before t={t_end}")

    if not np.all(np.isfinite(states)):
        raise ChemostatException(ErrorCode.NON_FINITE_STATE, "integration produced non-finite values")

    small_negative = (states < 0) & (states > -atol)
    states[small_negative] = 0.0
    return states, clamps
