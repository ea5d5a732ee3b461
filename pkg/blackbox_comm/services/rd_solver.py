"""Rate-distortion, Sanov exponent and capacity solvers.

``rate_distortion`` runs Blahut-Arimoto alternating minimization in the log
domain for a fixed slope ``s`` (test channel proportional to
q(y) 2^{-s d(x,y)}) and bisects on ``s`` to meet the distortion target.
``sanov_exponent`` minimizes D(q_ZY || p_X q_Y) over the constraint set
{ |q_Z - p_X|_1 <= eps, E_q d <= D } with SLSQP, warm-started from the
rate-distortion test channel, which is feasible for every eps.
"""

import logging
import math
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from blackbox_comm.core.config import settings
from blackbox_comm.core.errors import InfeasibleDistortionError, InvalidArgumentError
from blackbox_comm.models.reports import CapacityResult, DistortionRange, ExponentResult, RdPoint
from blackbox_comm.models.schemas import (
    Alphabet,
    Distribution,
    DistortionSpec,
    JointDistribution,
    TransitionKernel,
)
from blackbox_comm.services.prob_core import LN2, kl_array, mutual_information_array

logger = logging.getLogger(__name__)

FEASIBILITY_SLACK = 1e-9
_CLIP = 1e-15


class _BaState(NamedTuple):
    channel: np.ndarray
    log_q: np.ndarray
    rate: float
    distortion: float
    iterations: int


def _check_pair(p_X: Distribution, d: DistortionSpec) -> None:
    if p_X.alphabet != d.input_alphabet:
        raise InvalidArgumentError("source alphabet does not match the distortion input alphabet")


def distortion_range(p_X: Distribution, d: DistortionSpec) -> DistortionRange:
    """d_min = sum_x p(x) min_y d(x,y); d_max = min_y sum_x p(x) d(x,y)."""
    _check_pair(p_X, d)
    p, dm = p_X.array, d.array
    d_min = float(p @ dm.min(axis=1))
    d_max = float((p @ dm).min())
    return DistortionRange(d_min=d_min, d_max=max(d_max, d_min))


def _blahut_arimoto(p: np.ndarray, d: np.ndarray, slope: float, log_q: np.ndarray,
                    tol: float, max_iterations: int, patience: int) -> _BaState:
    """Log-domain alternating minimization at a fixed slope; p has full support."""
    log_p = np.log(p)
    log_a = -slope * LN2 * d
    history: List[float] = []
    log_w = None
    for iteration in range(1, max_iterations + 1):
        joint = log_q[None, :] + log_a
        log_z = logsumexp(joint, axis=1)
        log_w = joint - log_z[:, None]
        log_c = logsumexp(log_p[:, None] + log_a - log_z[:, None], axis=0)

        w = np.exp(log_w)
        upper = mutual_information_array(p[:, None] * w) + slope * float(p @ (w * d).sum(axis=1))
        lower = -(float(p @ log_z) + float(log_c.max())) / LN2
        history.append(upper)

        log_q = log_q + log_c
        log_q = log_q - logsumexp(log_q)

        if upper - lower < tol / 10:
            break
        if len(history) > patience and history[-patience - 1] - upper < tol / 10:
            break

    w = np.exp(log_w)
    w /= w.sum(axis=1, keepdims=True)
    rate = mutual_information_array(p[:, None] * w)
    distortion = float(p @ (w * d).sum(axis=1))
    return _BaState(channel=w, log_q=log_q, rate=rate, distortion=distortion, iterations=iteration)


def _full_channel(p_X: Distribution, d: DistortionSpec, support: np.ndarray, channel: np.ndarray) -> np.ndarray:
    """Embed a support-only test channel; off-support rows map to their cheapest output."""
    full = np.zeros(d.array.shape)
    full[support] = channel
    for x in np.flatnonzero(~support):
        full[x, int(np.argmin(d.array[x]))] = 1.0
    return full


def _point(p_X: Distribution, d: DistortionSpec, D: float, channel: np.ndarray, slope: float,
           iterations: int) -> RdPoint:
    p = p_X.array
    q_y = p @ channel
    return RdPoint(
        distortion_D=D,
        rate_bits=max(0.0, mutual_information_array(p[:, None] * channel)),
        optimal_test_channel=tuple(tuple(float(v) for v in row) for row in channel),
        slope_parameter=slope,
        achieved_distortion=float(p @ (channel * d.array).sum(axis=1)),
        output_marginal=tuple(float(v) for v in q_y / q_y.sum()),
        iterations=iterations,
    )


def _constant_point(p_X: Distribution, d: DistortionSpec, D: float) -> RdPoint:
    best = int(np.argmin(p_X.array @ d.array))
    channel = np.zeros(d.array.shape)
    channel[:, best] = 1.0
    return _point(p_X, d, D, channel, 0.0, 0)


def rd_point_from_slope(p_X: Distribution, d: DistortionSpec, slope: float, tol: Optional[float] = None) -> RdPoint:
    """One Lagrangian evaluation: the point of the curve whose slope is -slope."""
    _check_pair(p_X, d)
    if slope < 0:
        raise InvalidArgumentError(f"slope must be nonnegative, got {slope}")
    tol = settings.DEFAULT_TOL if tol is None else tol
    support = p_X.array > 0
    p, dm = p_X.array[support], d.array[support]
    log_q = np.full(dm.shape[1], -math.log(dm.shape[1]))
    state = _blahut_arimoto(p, dm, slope, log_q, tol, settings.SOLVER_MAX_ITERATIONS, settings.SOLVER_PATIENCE)
    channel = _full_channel(p_X, d, support, state.channel)
    point = _point(p_X, d, 0.0, channel, slope, state.iterations)
    return point.model_copy(update={"distortion_D": point.achieved_distortion})


def rate_distortion(p_X: Distribution, d: DistortionSpec, D: float, tol: Optional[float] = None) -> RdPoint:
    """R^I_X(D) = min I(X;Y) over test channels with E d(X,Y) <= D."""
    _check_pair(p_X, d)
    tol = settings.DEFAULT_TOL if tol is None else tol
    if tol <= 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")

    bounds = distortion_range(p_X, d)
    if D < bounds.d_min - 1e-12:
        raise InfeasibleDistortionError(D, bounds.d_min)
    if D >= bounds.d_max:
        return _constant_point(p_X, d, D)

    support = p_X.array > 0
    p, dm = p_X.array[support], d.array[support]
    solve = lambda s, lq: _blahut_arimoto(p, dm, s, lq, tol, settings.SOLVER_MAX_ITERATIONS,
                                          settings.SOLVER_PATIENCE)

    # Bracket the slope: D(s) is nonincreasing in s.
    log_q = np.full(dm.shape[1], -math.log(dm.shape[1]))
    s_lo, s = 0.0, 1.0
    best = solve(s, log_q)
    total_iterations = best.iterations
    while best.distortion > D + FEASIBILITY_SLACK and s < settings.SLOPE_MAX:
        s_lo, s = s, min(2.0 * s, settings.SLOPE_MAX)
        best = solve(s, best.log_q)
        total_iterations += best.iterations
    s_hi = s

    for _ in range(settings.BISECTION_STEPS):
        # R(D(s_hi)) - R(D) <= s_hi * (D - D(s_hi)) by convexity.
        if s_hi * (D - best.distortion) <= tol / 2 or s_hi - s_lo <= 1e-12 * s_hi:
            break
        mid = math.sqrt(s_lo * s_hi) if s_lo > 0 and s_hi > 2 * s_lo else 0.5 * (s_lo + s_hi)
        state = solve(mid, best.log_q)
        total_iterations += state.iterations
        if state.distortion <= D + FEASIBILITY_SLACK:
            s_hi, best = mid, state
        else:
            s_lo = mid

    logger.debug(f"rate_distortion D={D:.6g}: slope={s_hi:.6g}, rate={best.rate:.6g}, "
                 f"iterations={total_iterations}")
    channel = _full_channel(p_X, d, support, best.channel)
    return _point(p_X, d, D, channel, s_hi, total_iterations)


def rd_curve(p_X: Distribution, d: DistortionSpec, D_grid: List[float], tol: Optional[float] = None) -> List[RdPoint]:
    """Sweep ``rate_distortion`` over a grid, returned in grid order.

    A test channel feasible at D is feasible at every larger D, so a point whose
    rate exceeds that of a smaller grid value reuses the smaller value's channel.
    """
    points = {}
    previous: Optional[RdPoint] = None
    for D in sorted(set(D_grid)):
        point = rate_distortion(p_X, d, D, tol)
        if previous is not None and point.rate_bits > previous.rate_bits:
            point = previous.model_copy(update={"distortion_D": D})
        points[D] = previous = point
    return [points[D] for D in D_grid]


def _min_distortion_in_ball(p: np.ndarray, costs: np.ndarray, eps: float) -> np.ndarray:
    """Source distribution within L1 radius eps of p minimizing sum q(x) costs(x)."""
    q = p.copy()
    target = int(np.argmin(costs))
    budget = eps / 2.0
    for row in np.argsort(-costs, kind="stable"):
        if budget <= 0 or row == target or costs[row] <= costs[target]:
            continue
        moved = min(q[row], budget)
        q[row] -= moved
        q[target] += moved
        budget -= moved
    return q


def _sanov_objective(flat: np.ndarray, p: np.ndarray, shape: Tuple[int, int]) -> Tuple[float, np.ndarray]:
    q = np.clip(flat[: shape[0] * shape[1]].reshape(shape), _CLIP, None)
    log_ratio = np.log2(q / (p[:, None] * q.sum(axis=0)[None, :]))
    grad = np.zeros_like(flat)
    grad[: q.size] = log_ratio.ravel()
    return float((q * log_ratio).sum()), grad


def _mutual_information_objective(flat: np.ndarray, p: np.ndarray, shape: Tuple[int, int]) -> Tuple[float, np.ndarray]:
    q = np.clip(flat[: shape[0] * shape[1]].reshape(shape), _CLIP, None)
    log_ratio = np.log2(q / (q.sum(axis=1)[:, None] * q.sum(axis=0)[None, :]))
    grad = np.zeros_like(flat)
    grad[: q.size] = (log_ratio - 1.0 / LN2).ravel()
    return float((q * log_ratio).sum()), grad


def _constraints(p: np.ndarray, dm: np.ndarray, D: float, eps: float) -> Tuple[list, list]:
    """SLSQP constraints on v = [q (row-major), t]; t bounds |q_Z - p| when eps > 0."""
    kx, ky = dm.shape
    k = kx * ky
    marginal = np.kron(np.eye(kx), np.ones(ky))  # q_Z = marginal @ q
    distortion_row = dm.ravel()

    if eps == 0:
        width = k
        cons = [
            {"type": "eq", "fun": lambda v: marginal @ v[:k] - p, "jac": lambda v: marginal},
        ]
        bounds = [(0.0, 1.0)] * k
    else:
        width = k + kx
        eye = np.eye(kx)
        upper = np.hstack([-marginal, eye])
        lower = np.hstack([marginal, eye])
        budget = np.concatenate([np.zeros(k), -np.ones(kx)])
        ones = np.concatenate([np.ones(k), np.zeros(kx)])
        cons = [
            {"type": "eq", "fun": lambda v: np.array([v[:k].sum() - 1.0]), "jac": lambda v: ones[None, :]},
            {"type": "ineq", "fun": lambda v: upper @ v + p, "jac": lambda v: upper},
            {"type": "ineq", "fun": lambda v: lower @ v - p, "jac": lambda v: lower},
            {"type": "ineq", "fun": lambda v: np.array([eps + budget @ v]), "jac": lambda v: budget[None, :]},
        ]
        bounds = [(0.0, 1.0)] * k + [(0.0, 2.0)] * kx

    d_row = np.concatenate([distortion_row, np.zeros(width - k)])
    cons.append({"type": "ineq", "fun": lambda v: np.array([D - d_row @ v]), "jac": lambda v: -d_row[None, :]})
    return cons, bounds


def _is_feasible(q: np.ndarray, p: np.ndarray, dm: np.ndarray, D: float, eps: float) -> bool:
    return (float(np.abs(q.sum(axis=1) - p).sum()) <= eps + FEASIBILITY_SLACK
            and float((q * dm).sum()) <= D + FEASIBILITY_SLACK)


def _restore_feasibility(q: np.ndarray, anchor: np.ndarray, p: np.ndarray, dm: np.ndarray,
                         D: float, eps: float) -> np.ndarray:
    """Smallest mix toward the (feasible) anchor that satisfies both constraint families."""
    if _is_feasible(q, p, dm, D, eps):
        return q
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _is_feasible((1 - mid) * q + mid * anchor, p, dm, D, eps):
            hi = mid
        else:
            lo = mid
    return (1 - hi) * q + hi * anchor


def _feasible_start(p_X: Distribution, d: DistortionSpec, D: float, eps: float,
                    support: np.ndarray, tol: float) -> Optional[np.ndarray]:
    """A point of the constraint set on the support rows, or None when the set is empty."""
    p, dm = p_X.array[support], d.array[support]
    row_costs = dm.min(axis=1)
    shifted = _min_distortion_in_ball(p, row_costs, eps)
    if float(shifted @ row_costs) > D + FEASIBILITY_SLACK:
        return None
    if float(p @ row_costs) <= D + 1e-12:
        point = rate_distortion(p_X, d, max(D, distortion_range(p_X, d).d_min), tol)
        return p[:, None] * point.test_channel[support]
    start = np.zeros(dm.shape)
    start[np.arange(dm.shape[0]), dm.argmin(axis=1)] = shifted
    return start


def _minimize_over_set(objective, exact, start: np.ndarray, p: np.ndarray, dm: np.ndarray,
                       D: float, eps: float, tol: float) -> Tuple[float, np.ndarray]:
    shape = dm.shape
    cons, bounds = _constraints(p, dm, D, eps)
    t0 = np.abs(start.sum(axis=1) - p)
    v0 = start.ravel() if eps == 0 else np.concatenate([start.ravel(), t0])
    result = minimize(
        lambda v: objective(v, p, shape),
        v0,
        jac=True,
        method="SLSQP",
        bounds=bounds,
        constraints=cons,
        options={"maxiter": 1000, "ftol": min(1e-12, tol * 1e-6)},
    )
    q = np.clip(result.x[: dm.size].reshape(shape), 0.0, None)
    q /= q.sum()
    q = _restore_feasibility(q, start, p, dm, D, eps)
    value, start_value = exact(q), exact(start)
    logger.debug(f"SLSQP finished: success={result.success}, nit={result.nit}, value={value:.8g}, "
                 f"start={start_value:.8g}")
    if not np.isfinite(value) or value > start_value:
        return start_value, start
    return value, q


def _embed(p_X: Distribution, d: DistortionSpec, support: np.ndarray, q: np.ndarray) -> JointDistribution:
    full = np.zeros(d.array.shape)
    full[support] = q
    return JointDistribution.from_array(p_X.alphabet, d.output_alphabet, full / full.sum())


def sanov_exponent(p_X: Distribution, q_Y_support: Alphabet, d: DistortionSpec, D: float, eps: float,
                   tol: Optional[float] = None) -> ExponentResult:
    """inf over {q_ZY : |q_Z - p_X|_1 <= eps, E_q d <= D} of D(q_ZY || p_X q_Y), in bits."""
    _check_pair(p_X, d)
    if q_Y_support != d.output_alphabet:
        raise InvalidArgumentError("q_Y support does not match the distortion output alphabet")
    if eps < 0:
        raise InvalidArgumentError(f"eps must be nonnegative, got {eps}")
    tol = settings.DEFAULT_TOL if tol is None else tol

    support = p_X.array > 0
    p, dm = p_X.array[support], d.array[support]
    start = _feasible_start(p_X, d, D, eps, support, tol)
    if start is None:
        logger.info(f"Constraint set is empty for D={D:.6g}, eps={eps:.6g}")
        return ExponentResult(exponent_bits=math.inf, minimizer_qZY=None, epsilon=eps, distortion_D=D)

    def exact(q: np.ndarray) -> float:
        return kl_array(q.ravel(), (p[:, None] * q.sum(axis=0)[None, :]).ravel())

    value, q = _minimize_over_set(_sanov_objective, exact, start, p, dm, D, eps, tol)
    return ExponentResult(exponent_bits=max(0.0, value), minimizer_qZY=_embed(p_X, d, support, q),
                          epsilon=eps, distortion_D=D)


def mutual_information_bound(p_X: Distribution, d: DistortionSpec, D: float, eps: float,
                             tol: Optional[float] = None) -> ExponentResult:
    """inf over the same constraint set of I(Z;Y), i.e. min of R^I_q(D) over the eps-ball around p_X.

    Never exceeds the Sanov exponent, since D(q_ZY||p q_Y) = D(q_Z||p) + I(Z;Y).
    I(Z;Y) is not jointly convex, so the search is multi-start and the value is an upper
    estimate of the infimum for eps > 0; at eps = 0 it equals R^I_X(D).
    """
    tol = settings.DEFAULT_TOL if tol is None else tol
    exponent = sanov_exponent(p_X, d.output_alphabet, d, D, eps, tol)
    if not exponent.feasible:
        return exponent

    support = p_X.array > 0
    p, dm = p_X.array[support], d.array[support]
    starts = [exponent.minimizer_qZY.array[support]]
    shifted = _min_distortion_in_ball(p, dm.min(axis=1), eps)
    if float(shifted @ dm.min(axis=1)) <= D:
        # R^I of the cheapest source in the ball, as a second start.
        ball_source = Distribution.from_array(p_X.alphabet, _expand(shifted, support))
        try:
            point = rate_distortion(ball_source, d, D, tol)
            starts.append(shifted[:, None] * point.test_channel[support])
        except InfeasibleDistortionError:
            pass

    best_value, best_q = math.inf, starts[0]
    for start in starts:
        value, q = _minimize_over_set(_mutual_information_objective, mutual_information_array, start,
                                      p, dm, D, eps, tol)
        if value < best_value:
            best_value, best_q = value, q
    return ExponentResult(exponent_bits=max(0.0, best_value), minimizer_qZY=_embed(p_X, d, support, best_q),
                          epsilon=eps, distortion_D=D)


def _expand(values: np.ndarray, support: np.ndarray) -> np.ndarray:
    full = np.zeros(support.size)
    full[support] = values
    return full / full.sum()


def channel_capacity(kernel: TransitionKernel, tol: Optional[float] = None,
                     max_iterations: Optional[int] = None) -> CapacityResult:
    """Blahut-Arimoto capacity of a DMC in bits, with a capacity-achieving input."""
    tol = settings.DEFAULT_TOL if tol is None else tol
    max_iterations = settings.SOLVER_MAX_ITERATIONS if max_iterations is None else max_iterations
    w = kernel.array
    p = np.full(w.shape[0], 1.0 / w.shape[0])
    lower = 0.0
    for iteration in range(1, max_iterations + 1):
        q = p @ w
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(w > 0, w * np.log(w / q[None, :]), 0.0)
        c = np.exp(terms.sum(axis=1))
        lower = math.log(float(p @ c))
        upper = math.log(float(c.max()))
        p = p * c / float(p @ c)
        if (upper - lower) / LN2 < tol / 10:
            break
    logger.debug(f"channel_capacity converged in {iteration} iterations")
    return CapacityResult(
        capacity_bits=max(0.0, lower / LN2),
        input_distribution=Distribution.from_array(kernel.input_alphabet, p / p.sum()),
        iterations=iteration,
    )
