"""
ADMM solver for the dual of the common substructure problem

    max  sum_i t_i (log det L_i - tr(S_i L_i)) - rho ||Theta||_1
         - gamma ||Omega||_{1,p},     L_i = Theta + Omega_i.

The dual variables are one ``W_i`` per dataset. Every iteration runs three
steps:

* ``update_W``: ``N`` independent eigenvalue problems with a closed form.
* ``update_Y``: ``d (d + 1) / 2`` independent projections of N-vectors onto
  the constraint set of one matrix position (see :mod:`cssl.projections`).
* ``update_Z``: the multiplier step. ``Z_i`` converges to the precision
  ``L_i``.

Convergence is declared when the duality gap between a projected dual point
and the best primal point found so far drops below ``eps_gap``, or when both
the primal and the dual residual drop below ``eps_pdgap``.
"""
import contextlib
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from django.core.exceptions import ValidationError

from .core import (
    CovarianceSet, Hyperparams, PrecisionDecomposition, group_norm,
    log_likelihoods)
from .exceptions import ConvergenceError, NotPositiveDefiniteError
from .projections import project_onto_C

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9
# Rounding allowance below zero for the duality gap.
GAP_SLACK = 1e-9
DEFAULT_FLOOR = 1e-8
# Matrix positions handed to one worker at a time.
CHUNK_ROWS = 64


@dataclass(frozen=True)
class SolverConfig:
    eps_gap: Optional[float] = None
    eps_pdgap: float = 1e-5
    max_iter: int = 1000
    beta0: float = 1.0
    beta_bounds: Tuple[float, float] = (1e-4, 1e4)
    adapt_beta: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.eps_gap is not None and not self.eps_gap > 0:
            raise ValidationError('eps_gap must be positive.', code='eps_gap')
        if not self.eps_pdgap > 0:
            raise ValidationError('eps_pdgap must be positive.',
                                  code='eps_pdgap')
        if self.max_iter < 1:
            raise ValidationError('max_iter must be at least 1.',
                                  code='max_iter')
        low, high = self.beta_bounds
        if not 0 < low <= self.beta0 <= high:
            raise ValidationError(
                'beta0 must lie inside beta_bounds with a positive lower '
                'bound.', code='beta')
        if self.workers < 1:
            raise ValidationError('workers must be at least 1.',
                                  code='workers')
        object.__setattr__(self, 'beta_bounds', (float(low), float(high)))

    def gap_tolerance(self, d):
        """
        ``eps_gap``, defaulting to ``1e-5 d``.
        """
        if self.eps_gap is None:
            return 1e-5 * d
        return self.eps_gap


@dataclass(frozen=True)
class EigBounds:
    lambda_min: np.ndarray
    lambda_max: float


@dataclass
class SolverState:
    """
    Mutable ADMM iterate. ``W``, ``Y`` and ``Z`` are ``(N, d, d)`` stacks.
    """

    W: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    beta: float
    iter: int = 0
    gap_history: List[Tuple[float, float, float]] = field(
        default_factory=list)
    best_primal: float = -math.inf
    best_decomposition: Optional[PrecisionDecomposition] = None
    decomposition: Optional[PrecisionDecomposition] = None


@dataclass
class SolveDiagnostics:
    iterations: int
    duality_gap: float
    primal_gap: float
    dual_gap: float
    beta_trace: List[float]
    converged: bool
    wall_time_ms: float

    def as_dict(self):
        return asdict(self)

    @classmethod
    def merge(cls, items):
        """
        Combine the diagnostics of independent solves.
        """
        items = list(items)
        return cls(
            iterations=sum(item.iterations for item in items),
            duality_gap=max(item.duality_gap for item in items),
            primal_gap=max(item.primal_gap for item in items),
            dual_gap=max(item.dual_gap for item in items),
            beta_trace=[beta for item in items for beta in item.beta_trace],
            converged=all(item.converged for item in items),
            wall_time_ms=sum(item.wall_time_ms for item in items))


def eigen_bounds(cov, hp):
    """
    Bounds on the eigenvalues of the optimal precisions,

        t_i / (t_i ||S_i||_2 + d gamma) <= eig(L_i) <= N^(1/p) d^2 / rho,

    valid for ``0 < rho < N^(1/p) gamma < inf``. Outside that regime the
    lower bound falls back to ``1e-8`` and the upper bound to ``inf``.
    """
    if not hp.in_bounded_regime(cov.N):
        return EigBounds(np.full(cov.N, DEFAULT_FLOOR), math.inf)
    spectral = np.linalg.norm(cov.matrices, ord=2, axis=(1, 2))
    t = cov.weights
    lambda_min = t / (t * spectral + cov.d * hp.gamma)
    lambda_max = hp.group_scale(cov.N) * cov.d ** 2 / hp.rho
    return EigBounds(lambda_min, lambda_max)


def check_eigen_bounds(decomposition, bounds, tol=FEASIBILITY_TOL):
    """
    Return whether every eigenvalue of every precision lies inside
    ``bounds``.
    """
    eigenvalues = np.linalg.eigvalsh(decomposition.precisions)
    low = np.asarray(bounds.lambda_min)[:, None] - tol
    return bool(np.all(eigenvalues >= low) and
                np.all(eigenvalues <= bounds.lambda_max + tol))


def _weights(cov):
    return cov.weights[:, None, None]


def _symmetric(stack):
    return (stack + np.swapaxes(stack, -1, -2)) / 2


def update_W(state, cov):
    """
    Closed-form W-step. With ``M_i = Y_i / t_i - Z_i / (beta t_i) + S_i``
    every eigenvalue ``s`` of ``M_i`` maps to
    ``(s + sqrt(s^2 + 4 / (beta t_i))) / 2``.
    """
    t = cov.weights
    if np.any(t <= 0):
        raise ValidationError(
            'Every dataset needs a positive weight; drop datasets with '
            't_i = 0 before solving.', code='weights')
    beta = state.beta
    M = _symmetric(state.Y / _weights(cov) - state.Z / (beta * _weights(cov))
                   + cov.matrices)
    sigma, vectors = np.linalg.eigh(M)
    c = (4.0 / (beta * t))[:, None]
    root = np.sqrt(sigma ** 2 + c)
    # The second branch avoids cancellation for negative eigenvalues.
    mapped = np.where(sigma >= 0, (sigma + root) / 2,
                      c / (2 * (root - np.minimum(sigma, 0))))
    W = (vectors * mapped[:, None, :]) @ np.swapaxes(vectors, -1, -2)
    return _symmetric(W)


def _dual_target(W, Z, cov, beta):
    return _weights(cov) * (W - cov.matrices) + Z / beta


@contextlib.contextmanager
def worker_pool(workers):
    """
    Yield a thread pool for ``workers > 1`` and ``None`` otherwise.
    """
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            yield executor
    else:
        yield None


def project_dual(Y0, hp, executor=None):
    """
    Project every matrix position of the ``(N, d, d)`` stack ``Y0`` onto the
    dual constraint set and mirror the upper triangle. With
    ``penalize_diagonal`` off the diagonal positions are pinned to zero.
    """
    N, d, _ = Y0.shape
    rows_index, cols_index = np.triu_indices(d)
    slices = Y0[:, rows_index, cols_index].T
    spec = hp.projection_spec()
    if executor is None:
        projected = project_onto_C(slices, spec)
    else:
        chunks = np.array_split(slices, max(1, len(slices) // CHUNK_ROWS))
        projected = np.concatenate(list(executor.map(
            lambda chunk: project_onto_C(chunk, spec), chunks)))
    if not hp.penalize_diagonal:
        projected[rows_index == cols_index] = 0.0
    Y = np.empty_like(Y0)
    Y[:, rows_index, cols_index] = projected.T
    Y[:, cols_index, rows_index] = projected.T
    return Y


def update_Y(state, cov, hp, executor=None):
    """
    Y-step: project ``Y0 = T W + Z / beta - T S`` onto the dual constraint
    set position by position.
    """
    Y0 = _dual_target(state.W, state.Z, cov, state.beta)
    return project_dual(Y0, hp, executor)


def update_Z(state, cov):
    """
    Multiplier step ``Z + beta (T W - Y - T S)``, evaluated as
    ``beta (Y0 - Y)``. Positions the projection left untouched come out as
    exact zeros.
    """
    if state.beta == 0:
        return state.Z.copy()
    Y0 = _dual_target(state.W, state.Z, cov, state.beta)
    return _symmetric(state.beta * (Y0 - state.Y))


def adapt_beta(primal_gap, dual_gap, beta, bounds=(1e-4, 1e4)):
    """
    Double ``beta`` when the primal residual dominates the dual one by a
    factor of ten, halve it in the opposite case.
    """
    low, high = bounds
    if primal_gap >= 10 * dual_gap:
        beta = 2 * beta
    elif dual_gap >= 10 * primal_gap:
        beta = 0.5 * beta
    return min(max(beta, low), high)


def project_psd_floor(M, floor):
    """
    Nearest symmetric matrix (Frobenius) whose eigenvalues are all at least
    ``floor``. A matrix that already qualifies is returned as an exact
    copy.
    """
    M = _symmetric(np.asarray(M, dtype=float))
    sigma, vectors = np.linalg.eigh(M)
    if sigma.min() >= floor:
        return M.copy()
    clamped = np.maximum(sigma, floor)
    return _symmetric((vectors * clamped) @ vectors.T)


def _split_rows(values, hp, diagonal=False):
    m, N = values.shape
    if (diagonal and not hp.penalize_diagonal) or math.isinf(hp.gamma):
        return values.mean(axis=1)
    if hp.theta_vanishes(N):
        return np.zeros(m)
    rho, gamma, p = hp.rho, hp.gamma, hp.p
    if p == 2.0:
        total = values.sum(axis=1)
        norms = np.linalg.norm(values, axis=1)
        active = gamma * np.abs(total) > rho * norms
        disc = rho ** 2 * np.maximum(N * norms ** 2 - total ** 2, 0.0) / \
            (gamma ** 2 * N - rho ** 2)
        theta = (total - np.sign(total) * np.sqrt(disc)) / N
        return np.where(active, theta, 0.0)
    if p == 1.0:
        candidates = np.concatenate([np.zeros((m, 1)), values], axis=1)
    else:
        middle = (values.min(axis=1) + values.max(axis=1)) / 2
        candidates = np.stack([np.zeros(m), middle], axis=1)
    residual = values[:, None, :] - candidates[:, :, None]
    costs = rho * np.abs(candidates) + gamma * np.linalg.norm(
        residual, ord=p, axis=2)
    best = costs.min(axis=1, keepdims=True)
    ties = costs <= best + 1e-12 * np.maximum(1.0, np.abs(best))
    choice = np.where(ties, np.abs(candidates), np.inf).argmin(axis=1)
    return candidates[np.arange(m), choice]


def split_common_individual(lambda_vec, hp, diagonal=False):
    """
    Split the N entries of one matrix position into a common value and
    individual deviations by minimising
    ``rho |theta| + gamma ||l - theta||_p``.

    For ``p = 1`` and ``p = inf`` the minimum is at one of the candidates
    ``{0, l_1, ..., l_N}`` or ``{0, (min l + max l) / 2}``; ties go to the
    smaller ``|theta|``. ``p = 2`` has a closed form. ``theta`` is zero when
    ``rho >= N^(1/p) gamma``.
    """
    values = np.asarray(lambda_vec, dtype=float).reshape(1, -1)
    theta = float(_split_rows(values, hp, diagonal)[0])
    return theta, values[0] - theta


def split_precisions(precisions, hp):
    """
    Apply :func:`split_common_individual` to every position of an
    ``(N, d, d)`` stack and return the resulting decomposition.
    """
    precisions = np.asarray(precisions, dtype=float)
    N, d, _ = precisions.shape
    rows_index, cols_index = np.triu_indices(d)
    slices = precisions[:, rows_index, cols_index].T
    on_diagonal = rows_index == cols_index
    values = np.empty(len(slices))
    values[on_diagonal] = _split_rows(slices[on_diagonal], hp, diagonal=True)
    values[~on_diagonal] = _split_rows(slices[~on_diagonal], hp)
    theta = np.empty((d, d))
    theta[rows_index, cols_index] = values
    theta[cols_index, rows_index] = values
    return PrecisionDecomposition(theta, precisions - theta[None])


def _penalty(weight, norm):
    if norm == 0:
        return 0.0
    return weight * norm


def primal_objective(decomposition, cov, hp):
    """
    ``sum_i t_i l(L_i; S_i) - rho ||Theta||_1 - gamma ||Omega||_{1,p}``.
    """
    likelihood = float(cov.weights @ log_likelihoods(
        decomposition.precisions, cov.matrices))
    include = hp.penalize_diagonal
    theta = np.abs(decomposition.theta)
    if not include:
        theta = theta - np.diag(np.diag(theta))
    return (likelihood - _penalty(hp.rho, float(theta.sum())) -
            _penalty(hp.gamma, group_norm(decomposition.omegas, hp.p,
                                          include_diagonal=include)))


def dual_violation(Y, hp):
    """
    Largest violation of the dual constraints by ``Y = T (W - S)``, relative
    to ``max(1, rho, gamma)`` over the finite weights. Zero or negative when
    ``Y`` is feasible.
    """
    N, d, _ = Y.shape
    rows_index, cols_index = np.triu_indices(d)
    slices = Y[:, rows_index, cols_index].T
    spec = hp.projection_spec()
    violation = np.maximum(np.abs(slices.sum(axis=1)) - spec.rho,
                           np.linalg.norm(slices, ord=spec.q, axis=1) -
                           spec.gamma)
    if not hp.penalize_diagonal:
        diagonal = rows_index == cols_index
        violation[diagonal] = np.maximum(
            violation[diagonal], np.abs(slices[diagonal]).max(axis=1))
    scale = max([1.0] + [weight for weight in (spec.rho, spec.gamma)
                         if math.isfinite(weight)])
    return float(violation.max()) / scale


def _check_dual_feasible(Y, hp):
    worst = dual_violation(Y, hp)
    if worst > FEASIBILITY_TOL:
        raise ValidationError(
            'W is not dual feasible (constraint violated by '
            '{0:.3g}).'.format(worst), code='dual_infeasible')


def dual_objective(W, cov, hp=None):
    """
    ``-sum_i t_i log det W_i - d``. When ``hp`` is given, ``W`` is first
    checked against both dual constraint families.
    """
    W = np.asarray(W, dtype=float)
    if hp is not None:
        _check_dual_feasible(_weights(cov) * (W - cov.matrices), hp)
    try:
        factors = np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError('Every W_i must be positive definite.')
    logdets = 2 * np.log(np.diagonal(factors, axis1=-2, axis2=-1)).sum(-1)
    return float(-(cov.weights @ logdets) - cov.d)


def primal_dual_gaps(state, prev_Y, cov):
    """
    Return ``(||T W - Y - T S||_2, beta ||T (Y - Y_prev)||_2)`` over all
    entries of all datasets.
    """
    t = _weights(cov)
    primal = np.linalg.norm(t * state.W - state.Y - t * cov.matrices)
    dual = state.beta * np.linalg.norm(t * (state.Y - prev_Y))
    return float(primal), float(dual)


def duality_gap(state, cov, hp, bounds, executor=None):
    """
    Gap between a feasible dual point built from the current ``W`` and the
    best primal value seen so far.

    The dual point is ``W~ = T^-1 proj(T (W - S)) + S``. The primal point
    floors the eigenvalues of each ``Z_i`` at ``lambda_min_i`` and splits the
    result position by position. ``state.best_primal``,
    ``state.best_decomposition`` and ``state.decomposition`` are updated.

    A dual point that is not positive definite, or that misses the dual
    constraints, certifies nothing and gives an infinite gap.
    """
    t = _weights(cov)
    projected = project_dual(t * (state.W - cov.matrices), hp, executor)
    W_tilde = projected / t + cov.matrices
    violation = dual_violation(t * (W_tilde - cov.matrices), hp)
    if violation > FEASIBILITY_TOL:
        logger.warning('Projected dual point violates the constraints by '
                       '%.3e; gap not certified.', violation)
        dual = math.inf
    else:
        try:
            dual = dual_objective(W_tilde, cov)
        except NotPositiveDefiniteError:
            dual = math.inf
    floored = np.stack([
        project_psd_floor(Z, floor)
        for Z, floor in zip(state.Z, bounds.lambda_min)])
    decomposition = split_precisions(floored, hp)
    primal = primal_objective(decomposition, cov, hp)
    state.decomposition = decomposition
    if primal > state.best_primal or state.best_decomposition is None:
        state.best_primal = primal
        state.best_decomposition = decomposition
    return dual - state.best_primal


def _as_precisions(initial):
    if isinstance(initial, PrecisionDecomposition):
        return initial.precisions
    return np.asarray(initial, dtype=float)


def initial_state(cov, hp, config, initial=None):
    """
    Cold start ``W = S + I``, ``Y = 0``, ``Z = I``. A warm start from
    precisions ``L_i`` uses ``Z = L_i``, ``W = L_i^-1`` and the projection of
    ``T (W - S)`` as ``Y``.
    """
    N, d = cov.N, cov.d
    if initial is None:
        identity = np.broadcast_to(np.eye(d), (N, d, d))
        return SolverState(W=cov.matrices + identity,
                           Y=np.zeros((N, d, d)),
                           Z=np.array(identity),
                           beta=config.beta0)
    precisions = _as_precisions(initial)
    if precisions.shape != (N, d, d):
        raise ValidationError(
            'Warm start needs {0} precisions of size {1}, got shape '
            '{2}.'.format(N, d, precisions.shape), code='shape')
    W = _symmetric(np.linalg.inv(precisions))
    Y = project_dual(_weights(cov) * (W - cov.matrices), hp)
    return SolverState(W=W, Y=Y, Z=_symmetric(precisions.copy()),
                       beta=config.beta0)


def _solve_pooled(cov, hp, config, initial):
    pooled = cov.pooled()
    if initial is not None:
        initial = np.einsum('i,ijk->jk', cov.weights,
                            _as_precisions(initial))[None]
    try:
        decomposition, diagnostics = solve(pooled, hp, config, initial)
    except ConvergenceError as error:
        if error.decomposition is not None:
            error.decomposition = _expand(error.decomposition, cov.N)
        raise
    return _expand(decomposition, cov.N), diagnostics


def _expand(decomposition, N):
    theta = decomposition.precisions[0]
    return PrecisionDecomposition(theta, np.zeros((N,) + theta.shape))


def solve(cov, hp, config=None, initial=None):
    """
    Run ADMM until convergence and return ``(decomposition, diagnostics)``.

    ``gamma = inf`` with several datasets is solved as one sparse precision
    of the pooled covariance ``sum_i t_i S_i``; every individual part is
    zero. ``initial`` (precisions or a decomposition) warm-starts the
    iteration.

    Raises :class:`~cssl.exceptions.ConvergenceError` carrying the best
    primal iterate when ``max_iter`` is reached.
    """
    config = config or SolverConfig()
    if math.isinf(hp.gamma) and cov.N > 1:
        return _solve_pooled(cov, hp, config, initial)
    started = time.perf_counter()
    state = initial_state(cov, hp, config, initial)
    bounds = eigen_bounds(cov, hp)
    tolerance = config.gap_tolerance(cov.d)
    beta_trace = []
    gap = primal_gap = dual_gap = math.inf
    converged = False
    with worker_pool(config.workers) as executor:
        for k in range(1, config.max_iter + 1):
            prev_Y = state.Y
            state.W = update_W(state, cov)
            state.Y = update_Y(state, cov, hp, executor)
            state.Z = update_Z(state, cov)
            state.iter = k
            beta_trace.append(state.beta)
            primal_gap, dual_gap = primal_dual_gaps(state, prev_Y, cov)
            gap = duality_gap(state, cov, hp, bounds, executor)
            state.gap_history.append((gap, primal_gap, dual_gap))
            logger.debug('iter %d: gap=%.3e primal=%.3e dual=%.3e beta=%g',
                         k, gap, primal_gap, dual_gap, state.beta)
            if gap < -GAP_SLACK:
                # Weak duality is broken: neither test can be trusted.
                logger.warning('iter %d: negative duality gap %.3e.', k, gap)
            elif gap <= tolerance or \
                    max(primal_gap, dual_gap) <= config.eps_pdgap:
                converged = True
                break
            if config.adapt_beta:
                state.beta = adapt_beta(primal_gap, dual_gap, state.beta,
                                        config.beta_bounds)
    diagnostics = SolveDiagnostics(
        iterations=state.iter,
        duality_gap=float(gap),
        primal_gap=primal_gap,
        dual_gap=dual_gap,
        beta_trace=beta_trace,
        converged=converged,
        wall_time_ms=(time.perf_counter() - started) * 1000)
    if not converged:
        logger.warning('No convergence after %d iterations (gap %.3e).',
                       state.iter, gap)
        raise ConvergenceError(
            'ADMM did not converge within {0} iterations; duality gap '
            '{1:.3e}, primal gap {2:.3e}, dual gap {3:.3e}.'.format(
                state.iter, gap, primal_gap, dual_gap),
            decomposition=state.best_decomposition,
            diagnostics=diagnostics)
    logger.info('Converged after %d iterations (gap %.3e).', state.iter, gap)
    return state.best_decomposition, diagnostics


def fit_pooled(cov, rho, config=None, initial=None):
    """
    One sparse precision for the pooled covariance, shared by all datasets.
    """
    return solve(cov, Hyperparams(rho, math.inf), config, initial)


def fit_sics(cov, rho, config=None, initial=None):
    """
    An independent l1-penalised precision per dataset.
    """
    precisions, diagnostics = [], []
    warm = None if initial is None else _as_precisions(initial)
    for i in range(cov.N):
        single = CovarianceSet(cov.matrices[i:i + 1], [1.0])
        decomposition, info = solve(
            single, Hyperparams(rho, math.inf), config,
            None if warm is None else warm[i:i + 1])
        precisions.append(decomposition.precisions[0])
        diagnostics.append(info)
    precisions = np.stack(precisions)
    return (PrecisionDecomposition(np.zeros(precisions.shape[1:]),
                                   precisions),
            SolveDiagnostics.merge(diagnostics))


def fit_msics(cov, gamma, p, config=None, initial=None):
    """
    Joint estimation with the group penalty only; the common part is zero.
    """
    return solve(cov, Hyperparams(math.inf, gamma, p), config, initial)
