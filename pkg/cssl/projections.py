"""
Euclidean projections onto the dual constraint set of one matrix position,

    C = {u in R^N : |1^T u| <= rho, ||u||_q <= gamma},

and onto the pieces of its boundary. Every kernel works row-wise: pass a
single N-vector or an ``(m, N)`` array and each row is projected on its own.
There are no reductions across rows, so splitting a batch into chunks never
changes a result.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from .core import parse_norm_order
from .exceptions import InfeasibleProjectionError

logger = logging.getLogger(__name__)

# Slack when accepting a candidate from one face of the boundary.
CANDIDATE_TOL = 1e-12


@dataclass(frozen=True)
class ProjectionSpec:
    """
    Parameters of ``C``. ``rho`` and ``gamma`` may be ``inf``, which drops
    the corresponding constraint.
    """

    rho: float
    gamma: float
    q: float

    def __post_init__(self):
        if not float(self.rho) >= 0:
            raise ValidationError(
                'rho must be nonnegative, got {0!r}.'.format(self.rho),
                code='rho')
        if not float(self.gamma) > 0:
            raise ValidationError(
                'gamma must be positive, got {0!r}.'.format(self.gamma),
                code='gamma')
        object.__setattr__(self, 'rho', float(self.rho))
        object.__setattr__(self, 'gamma', float(self.gamma))
        object.__setattr__(self, 'q', parse_norm_order(self.q))

    def reach(self, N):
        """
        Largest ``|1^T u|`` attainable on the ball ``||u||_q <= gamma``.
        """
        return float(N) ** (1.0 - 1.0 / self.q) * self.gamma


def _as_rows(values):
    rows = np.array(values, dtype=float)
    if rows.ndim == 1:
        return rows[None, :], True
    if rows.ndim != 2:
        raise ValidationError(
            'Expected an N-vector or an (m, N) array, got shape {0}.'.format(
                rows.shape),
            code='shape')
    return rows, False


def _restore(rows, single):
    return rows[0] if single else rows


def _sign(values):
    return np.where(values >= 0, 1.0, -1.0)


def _norms(rows, q):
    return np.linalg.norm(rows, ord=q, axis=1)


def _simplex_rows(values, target):
    """
    Project every row onto ``{z >= 0, 1^T z = target}`` by sorting the
    breakpoints. ``target`` is a scalar or one value per row.
    """
    m, N = values.shape
    target = np.broadcast_to(np.asarray(target, dtype=float), (m,))
    ordered = -np.sort(-values, axis=1)
    partial = np.cumsum(ordered, axis=1)
    counts = np.arange(1, N + 1)
    active = ordered - (partial - target[:, None]) / counts > 0
    size = np.maximum(active.sum(axis=1), 1)
    nu = (partial[np.arange(m), size - 1] - target) / size
    return np.maximum(values - nu[:, None], 0.0)


def _masked_simplex(values, mask, target):
    """
    Simplex projection restricted to the entries selected by ``mask``;
    the other entries are returned as zero.
    """
    lowest = np.where(mask, values, np.inf).min(axis=1)
    lowest = np.where(np.isfinite(lowest), lowest, 0.0)
    target = np.broadcast_to(np.asarray(target, dtype=float),
                             (values.shape[0],))
    fill = (lowest - target - 1.0)[:, None]
    padded = np.where(mask, values, fill)
    return np.where(mask, _simplex_rows(padded, target), 0.0)


def _box_rows(values, zeta, gamma):
    """
    Solve ``min 1/2 ||y - y0||^2`` with ``1^T y = zeta`` and
    ``-gamma <= y <= gamma`` for every row. ``y(nu) = clip(y0 - nu)`` and
    ``1^T y(nu)`` falls with ``nu``, so ``nu`` is bracketed by two
    consecutive sorted breakpoints ``y0_i +- gamma``. On the open bracket
    every entry is either clamped or free, and ``nu`` follows from the free
    ones.
    """
    m, N = values.shape
    index = np.arange(m)
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (m,))
    breakpoints = np.sort(
        np.concatenate([values - gamma, values + gamma], axis=1), axis=1)
    totals = np.clip(values[:, None, :] - breakpoints[:, :, None],
                     -gamma, gamma).sum(axis=2)
    below = totals <= zeta[:, None]
    below[:, -1] = True
    first = below.argmax(axis=1)
    high = breakpoints[index, first]
    low = breakpoints[index, np.maximum(first - 1, 0)]
    bracketed = first > 0
    # The sets are read off inside the bracket, never on a breakpoint.
    inside = np.where(bracketed, (low + high) / 2, high - 1.0)
    shifted = values - inside[:, None]
    upper = shifted >= gamma
    lower = shifted <= -gamma
    middle = ~(upper | lower)
    size = middle.sum(axis=1)
    numerator = (np.where(middle, values, 0.0).sum(axis=1) +
                 gamma * (upper.sum(axis=1) - lower.sum(axis=1)) - zeta)
    nu = np.where(size > 0, numerator / np.maximum(size, 1), inside)
    nu = np.where(bracketed, np.clip(nu, low, high), nu)
    return np.clip(values - nu[:, None], -gamma, gamma)


def _project_slab(rows, rho):
    sums = rows.sum(axis=1)
    excess = np.where(np.abs(sums) > rho, sums - _sign(sums) * rho, 0.0)
    return rows - (excess / rows.shape[1])[:, None]


def _project_ball(rows, gamma, q):
    if math.isinf(gamma):
        return rows.copy()
    if q == math.inf:
        return np.clip(rows, -gamma, gamma)
    if q == 2.0:
        norms = _norms(rows, 2)
        scale = np.divide(gamma, norms, out=np.ones_like(norms),
                          where=norms > gamma)
        return rows * scale[:, None]
    result = rows.copy()
    over = np.abs(rows).sum(axis=1) > gamma
    if over.any():
        outside = rows[over]
        result[over] = np.sign(outside) * _simplex_rows(
            np.abs(outside), gamma)
    return result


def project_sum_hyperplane(y0, rho):
    """
    Project onto ``{y : |1^T y| = rho}``, keeping the sign of ``1^T y0``
    (a zero sum counts as positive).
    """
    rows, single = _as_rows(y0)
    sums = rows.sum(axis=1)
    shift = (sums - _sign(sums) * float(rho)) / rows.shape[1]
    return _restore(rows - shift[:, None], single)


def project_lq_ball(y0, gamma, q):
    """
    Project onto the full ball ``{y : ||y||_q <= gamma}``.
    """
    rows, single = _as_rows(y0)
    return _restore(_project_ball(rows, float(gamma), parse_norm_order(q)),
                    single)


def project_lq_ball_boundary(y0, gamma, q):
    """
    Project onto the sphere ``{y : ||y||_q = gamma}``.

    For ``q = 1`` the magnitudes solve a simplex knapsack and the signs of
    ``y0`` are restored. For ``q = 2`` the vector is rescaled. For
    ``q = inf`` the box projection is returned, since the nearest point of
    the sphere outside the box is the clamped vector.
    """
    rows, single = _as_rows(y0)
    q = parse_norm_order(q)
    gamma = float(gamma)
    if not gamma > 0:
        raise ValidationError('gamma must be positive.', code='gamma')
    if q == 1.0:
        result = np.sign(rows) * _simplex_rows(np.abs(rows), gamma)
    elif q == 2.0:
        norms = _norms(rows, 2)
        if np.any(norms == 0):
            raise InfeasibleProjectionError(
                'The projection of the zero vector onto an l2 sphere is not '
                'unique.')
        result = rows * (gamma / norms)[:, None]
    else:
        result = np.clip(rows, -gamma, gamma)
    return _restore(result, single)


def solve_cq_knapsack_simplex(a, gamma):
    """
    Solve ``min sum 1/2 (z_i - a_i)^2`` subject to ``z >= 0`` and
    ``1^T z = gamma`` in ``O(N log N)``.
    """
    if not float(gamma) > 0:
        raise ValidationError(
            'The knapsack capacity must be positive, got {0!r}.'.format(
                gamma),
            code='gamma')
    rows, single = _as_rows(a)
    return _restore(_simplex_rows(rows, float(gamma)), single)


def solve_cq_knapsack_box(y0, zeta, gamma):
    """
    Solve ``min 1/2 ||y - y0||^2`` subject to ``1^T y = zeta`` and
    ``-gamma <= y_i <= gamma``.

    Raises :class:`~cssl.exceptions.InfeasibleProjectionError` when
    ``|zeta| > N gamma``.
    """
    gamma = float(gamma)
    if not gamma > 0:
        raise ValidationError('gamma must be positive.', code='gamma')
    rows, single = _as_rows(y0)
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (rows.shape[0],))
    limit = rows.shape[1] * gamma
    if np.any(np.abs(zeta) > limit * (1 + CANDIDATE_TOL)):
        raise InfeasibleProjectionError(
            'No y with |y_i| <= {0:g} sums to {1!r}.'.format(
                gamma, float(np.abs(zeta).max())))
    return _restore(_box_rows(rows, zeta, gamma), single)


def _costs(candidates, rows):
    return 0.5 * ((candidates - rows) ** 2).sum(axis=1)


def _pick(rows, first, second):
    first_cost, second_cost = _costs(first, rows), _costs(second, rows)
    return np.where((first_cost <= second_cost)[:, None], first, second)


def _intersection_rows(rows, spec, tilde=None):
    N = rows.shape[1]
    rho, gamma, q = spec.rho, spec.gamma, spec.q
    if rho > spec.reach(N) * (1 + CANDIDATE_TOL):
        raise InfeasibleProjectionError(
            'The sets |1^T y| = {0:g} and ||y||_{1:g} = {2:g} do not '
            'intersect for N = {3}.'.format(rho, q, gamma, N))
    sums = rows.sum(axis=1)
    if q == 2.0:
        zeta = _sign(sums) * rho
        centred = rows - (sums / N)[:, None]
        norms = _norms(centred, 2)
        fallback = np.zeros(N)
        if N > 1:
            fallback[:2] = (1.0, -1.0)
            fallback /= math.sqrt(2.0)
        direction = np.where(
            (norms > 0)[:, None],
            centred / np.where(norms > 0, norms, 1.0)[:, None],
            fallback)
        radius = np.sqrt(np.maximum(gamma ** 2 - zeta ** 2 / N, 0.0))
        return (zeta / N)[:, None] + radius[:, None] * direction
    if q == math.inf:
        return _pick(rows, _box_rows(rows, rho, gamma),
                     _box_rows(rows, -rho, gamma))
    branches = []
    for sign in (1.0, -1.0):
        zeta = _sign(sums) * sign * rho
        signs = tilde if tilde is not None else \
            rows - ((sums - zeta) / N)[:, None]
        positive = signs >= 0
        up = np.maximum((gamma + zeta) / 2, 0.0)
        down = np.maximum((gamma - zeta) / 2, 0.0)
        candidate = (_masked_simplex(rows, positive, up) -
                     _masked_simplex(-rows, ~positive, down))
        feasible = ((up == 0) | positive.any(axis=1)) & \
            ((down == 0) | (~positive).any(axis=1))
        cost = np.where(feasible, _costs(candidate, rows), np.inf)
        branches.append((cost, candidate))
    (first_cost, first), (second_cost, second) = branches
    if not np.all(np.isfinite(np.minimum(first_cost, second_cost))):
        raise InfeasibleProjectionError(
            'No sign pattern of the hyperplane projection reaches the l1 '
            'sphere.')
    return np.where((first_cost <= second_cost)[:, None], first, second)


def project_intersection_boundary(y0, spec, tilde_y=None):
    """
    Project onto ``{|1^T y| = rho, ||y||_q = gamma}`` for an infeasible
    ``y0``.

    * ``q = 2``: closed form, the sum is fixed at ``sgn(1^T y0) rho`` and
      the centred part of ``y0`` is rescaled onto the remaining radius.
    * ``q = inf``: a box knapsack for ``zeta = +rho`` and ``zeta = -rho``;
      the closer one wins.
    * ``q = 1``: the positive and negative entries of the sum-hyperplane
      projection ``tilde_y`` are handled by two simplex knapsacks, again
      for both signs of ``zeta``. Without ``tilde_y`` the hyperplane
      projection for each ``zeta`` supplies the sign pattern.
    """
    rows, single = _as_rows(y0)
    tilde = None
    if tilde_y is not None:
        tilde, _ = _as_rows(tilde_y)
    return _restore(_intersection_rows(rows, spec, tilde), single)


def project_onto_C(y0, spec):
    """
    Project onto ``C``. Rows already in ``C`` are returned unchanged. For
    the others the projection onto the slab ``|1^T u| <= rho`` is tried
    first, then the projection onto the ball; a candidate that lands in
    ``C`` is the answer. The remaining rows lie beyond both faces and are
    projected onto their intersection.
    """
    rows, single = _as_rows(y0)
    rho, gamma, q = spec.rho, spec.gamma, spec.q
    result = rows.copy()
    inside = (np.abs(rows.sum(axis=1)) <= rho) & (_norms(rows, q) <= gamma)
    outside = ~inside
    if outside.any():
        pending = rows[outside]
        projected = _project_slab(pending, rho)
        rest = _norms(projected, q) > gamma + CANDIDATE_TOL
        if rest.any():
            remaining = pending[rest]
            ball = _project_ball(remaining, gamma, q)
            corner = np.abs(ball.sum(axis=1)) > rho + CANDIDATE_TOL
            if corner.any():
                logger.debug('%d of %d rows projected onto both faces',
                             int(corner.sum()), rows.shape[0])
                ball[corner] = _intersection_rows(remaining[corner], spec)
            projected[rest] = ball
        result[outside] = projected
    return _restore(result, single)
