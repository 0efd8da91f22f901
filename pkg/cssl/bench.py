"""
Desk-scale experiments on synthetic families.

``run_structure_experiment`` sweeps the regularisation over an alpha grid for
every method, keeps the estimate whose density is closest to the target and
scores common edge recovery. ``run_anomaly_experiment`` plants a swap of two
variables in the faulty datasets and scores how well the anomaly score
ranks the swapped variables.

Every ``(d, run)`` pair is an independent job seeded from
``(seed, d, run)``; jobs run in a process pool and the results are reduced
in job order, so the output does not depend on the worker count.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from django.core.exceptions import ValidationError

from .core import CovarianceSet, Hyperparams
from .evaluation import anomaly_scores_between, weighted_prf
from .exceptions import ConvergenceError
from .selection import (
    estimate_density, extract_common_threshold, fit_scale_line,
    params_from_alpha)
from .solver import SolverConfig, fit_msics, fit_pooled, fit_sics, solve
from .synthetic import (
    SAMPLE_STREAM, GenConfig, generate_family, inject_swap, make_rng,
    sample_gaussian)

logger = logging.getLogger(__name__)

METHODS = ('cssl', 'cssl_pooled', 'sics', 'msics')
EARLY_STOP_MARGIN = 0.05
SWAP_STREAM = 3

STRUCTURE_METRICS = ('precision', 'recall', 'f_measure', 'f0_measure')
ANOMALY_METRICS = ('auc',)


def _order_label(p):
    return 'inf' if math.isinf(p) else '{0:g}'.format(p)


@dataclass(frozen=True)
class MethodSpec:
    """
    One estimator of a benchmark. ``eps0`` selects threshold extraction of
    the common edges; without it the estimates are compared exactly.
    """

    name: str
    p: float = 2.0
    eps0: Optional[float] = None

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValidationError(
                'Unknown method {0!r}; choose one of {1}.'.format(
                    self.name, ', '.join(METHODS)), code='method')
        if self.eps0 is not None and not 0 < self.eps0 < 1:
            raise ValidationError('eps0 must lie in (0, 1).', code='eps0')
        object.__setattr__(self, 'p', float(self.p))

    @property
    def label(self):
        if self.name == 'cssl':
            text = 'CSSL(p={0})'.format(_order_label(self.p))
        elif self.name == 'cssl_pooled':
            text = 'CSSL(gamma=inf)'
        elif self.name == 'sics':
            text = 'SICS'
        else:
            text = 'MSICS(p={0})'.format(_order_label(self.p))
        if self.eps0 is not None:
            text = '{0}[eps0={1:g}]'.format(text, self.eps0)
        return text


@dataclass(frozen=True)
class ExperimentPlan:
    dims: Tuple[int, ...]
    N: int
    runs: int
    alpha_grid: Tuple[float, ...]
    methods: Tuple[MethodSpec, ...]
    experiment: str = 'structure'
    density_target: float = 0.15
    seed: int = 0
    samples_factor: int = 5
    eig_floor: float = 0.05
    b: int = 2
    diag_load: float = 0.0
    zero_tol: float = 1e-6
    density_tol: float = 1e-8
    early_stop: bool = True
    n_normal: int = 4
    n_faulty: int = 1
    inject_fault: bool = True
    workers: int = 1
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.runs < 1:
            raise ValidationError('runs must be at least 1.', code='runs')
        if not self.dims or min(self.dims) < 2:
            raise ValidationError('Every dimension must be at least 2.',
                                  code='dims')
        grid = tuple(float(alpha) for alpha in self.alpha_grid)
        if not grid or min(grid) <= 0 or list(grid) != sorted(grid):
            raise ValidationError(
                'alpha_grid must be a non-empty ascending list of positive '
                'values.', code='alpha_grid')
        if not self.methods:
            raise ValidationError('The plan lists no method.',
                                  code='methods')
        if self.experiment not in ('structure', 'anomaly'):
            raise ValidationError('Unknown experiment {0!r}.'.format(
                self.experiment), code='experiment')
        object.__setattr__(self, 'dims', tuple(int(d) for d in self.dims))
        object.__setattr__(self, 'alpha_grid', grid)
        object.__setattr__(self, 'methods', tuple(self.methods))

    @property
    def n_datasets(self):
        if self.experiment == 'anomaly':
            return self.n_normal + self.n_faulty
        return self.N

    def jobs(self):
        return [(self, d, run) for d in self.dims for run in range(self.runs)]


def run_seed(plan, d, run):
    return int(np.random.SeedSequence(
        [plan.seed, d, run]).generate_state(1)[0])


def fit_method(method, cov, alpha, config, initial=None, line=None):
    """
    Fit one method at one ``alpha`` and return ``(decomposition,
    diagnostics, rho, gamma)``.
    """
    if method.name == 'cssl':
        rho, gamma = params_from_alpha(line or fit_scale_line(cov), alpha)
        decomposition, diagnostics = solve(
            cov, Hyperparams(rho, gamma, method.p), config, initial)
    elif method.name == 'cssl_pooled':
        rho, _ = params_from_alpha(line or fit_scale_line(cov), alpha)
        gamma = math.inf
        decomposition, diagnostics = fit_pooled(cov, rho, config, initial)
    elif method.name == 'sics':
        rho, gamma = alpha, math.inf
        decomposition, diagnostics = fit_sics(cov, rho, config, initial)
    else:
        rho, gamma = math.inf, alpha
        decomposition, diagnostics = fit_msics(cov, gamma, method.p, config,
                                               initial)
    return decomposition, diagnostics, rho, gamma


def structure_metrics(method, precisions, truth, plan):
    """
    Score common edge recovery. Threshold extraction marks variations up to
    its cut-off as common, so the strict comparison runs at the next float
    above it; exact estimates are compared at ``zero_tol``.
    """
    if method.eps0 is None:
        eps = plan.zero_tol
    else:
        structure = extract_common_threshold(precisions, method.eps0)
        eps = np.nextafter(structure.threshold, math.inf)
    return weighted_prf(precisions, truth, eps, plan.density_tol)


def _sweep(method, cov, plan):
    """
    Fit from the largest alpha down, warm-starting every fit from the last
    converged one. Yields ``(alpha, precisions, density, rho, gamma)`` and
    ``None`` precisions for points that did not converge.
    """
    line = None
    if method.name in ('cssl', 'cssl_pooled'):
        line = fit_scale_line(cov)
    warm = None
    for alpha in reversed(plan.alpha_grid):
        try:
            decomposition, _, rho, gamma = fit_method(
                method, cov, alpha, plan.solver, warm, line)
        except ConvergenceError:
            logger.warning('%s did not converge at alpha=%g', method.label,
                           alpha)
            yield alpha, None, None, None, None
            continue
        warm = decomposition
        precisions = decomposition.precisions
        density = estimate_density(precisions, plan.density_tol)
        yield alpha, precisions, density, rho, gamma
        if plan.early_stop and plan.experiment == 'structure' and \
                density > plan.density_target + EARLY_STOP_MARGIN:
            break


def _structure_job(job):
    plan, d, run = job
    family = generate_family(GenConfig(
        d, plan.N, b=plan.b, target_density=plan.density_target,
        eig_floor=plan.eig_floor, seed=run_seed(plan, d, run),
        n_per_dataset=plan.samples_factor * d))
    cov = CovarianceSet.from_datasets(
        family.datasets, diag_load=plan.diag_load, zero_mean=True)
    rows, long_rows = [], []
    for method in plan.methods:
        points = []
        excluded = 0
        for alpha, precisions, density, rho, gamma in _sweep(
                method, cov, plan):
            point = {'method': method.label, 'd': d, 'run': run,
                     'alpha': alpha, 'converged': precisions is not None,
                     'density': density, 'rho': rho, 'gamma': gamma}
            if precisions is None:
                excluded += 1
            else:
                metrics = structure_metrics(method, precisions,
                                            family.precisions, plan)
                point.update({name: getattr(metrics, name)
                              for name in STRUCTURE_METRICS})
                points.append(point)
            long_rows.append(point)
        row = {'experiment': 'structure', 'method': method.label, 'd': d,
               'run': run, 'excluded_points': excluded}
        if not points:
            logger.warning('%s d=%d run=%d: no converged alpha, cell '
                           'excluded', method.label, d, run)
            row['status'] = 'excluded'
            rows.append(row)
            continue
        # Nearest density wins; ties go to the smaller alpha.
        best = min(points, key=lambda point: (
            abs(point['density'] - plan.density_target), point['alpha']))
        row.update({key: best[key] for key in
                    ('alpha', 'rho', 'gamma', 'density') +
                    STRUCTURE_METRICS})
        row['status'] = 'ok'
        logger.info('%s d=%d run=%d: alpha=%g F=%.3f', method.label, d, run,
                    best['alpha'], best['f_measure'])
        rows.append(row)
    return rows, long_rows


def _swap_pair(plan, d, run):
    rng = make_rng(plan.seed, d, run, SWAP_STREAM)
    j, k = sorted(int(index) for index in rng.choice(d, 2, replace=False))
    return j, k


def _anomaly_job(job):
    plan, d, run = job
    family = generate_family(GenConfig(
        d, plan.n_datasets, b=plan.b, target_density=plan.density_target,
        eig_floor=plan.eig_floor, seed=run_seed(plan, d, run),
        n_per_dataset=plan.samples_factor * d))
    j, k = _swap_pair(plan, d, run)
    labels = np.zeros(d, dtype=bool)
    labels[[j, k]] = True
    datasets = list(family.datasets)
    if plan.inject_fault:
        for i in range(plan.n_normal, plan.n_datasets):
            datasets[i] = sample_gaussian(
                inject_swap(family.precisions[i], j, k),
                plan.samples_factor * d,
                make_rng(run_seed(plan, d, run), SAMPLE_STREAM, i, 1))
    weights = [1 / (2 * plan.n_normal)] * plan.n_normal + \
        [1 / (2 * plan.n_faulty)] * plan.n_faulty
    cov = CovarianceSet.from_datasets(
        datasets, weights=weights, diag_load=plan.diag_load, zero_mean=True)
    rows, long_rows = [], []
    for method in plan.methods:
        points = []
        excluded = 0
        for alpha, precisions, density, rho, gamma in _sweep(
                method, cov, plan):
            point = {'method': method.label, 'd': d, 'run': run,
                     'alpha': alpha, 'converged': precisions is not None,
                     'density': density, 'rho': rho, 'gamma': gamma}
            if precisions is None:
                excluded += 1
            else:
                report = anomaly_scores_between(
                    precisions[:plan.n_normal], precisions[plan.n_normal:],
                    labels)
                point['auc'] = report.auc
                points.append(point)
            long_rows.append(point)
        row = {'experiment': 'anomaly', 'method': method.label, 'd': d,
               'run': run, 'excluded_points': excluded,
               'swap': '{0}-{1}'.format(j, k)}
        if not points:
            row['status'] = 'excluded'
            rows.append(row)
            continue
        best = max(points, key=lambda point: (point['auc'], -point['alpha']))
        row.update({'alpha': best['alpha'], 'rho': best['rho'],
                    'gamma': best['gamma'], 'density': best['density'],
                    'auc': best['auc'], 'status': 'ok'})
        rows.append(row)
    return rows, long_rows


def _run(plan, job):
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as executor:
            results = list(executor.map(job, plan.jobs()))
    else:
        results = [job(item) for item in plan.jobs()]
    rows = [row for cell_rows, _ in results for row in cell_rows]
    long_rows = [row for _, cell_long in results for row in cell_long]
    return rows, long_rows


def _stats(values):
    values = np.asarray(values, dtype=float)
    return {
        'mean': float(values.mean()),
        'std': float(values.std()),
        'median': float(np.median(values)),
        'q25': float(np.quantile(values, 0.25)),
        'q75': float(np.quantile(values, 0.75)),
    }


def summarize(rows, metrics):
    """
    Aggregate the per-cell rows by method and dimension.
    """
    summary = {}
    for row in rows:
        key = '{0}|d={1}'.format(row['method'], row['d'])
        cell = summary.setdefault(key, {
            'method': row['method'], 'd': row['d'], 'runs': 0,
            'excluded': 0, 'values': {name: [] for name in metrics}})
        if row['status'] != 'ok':
            cell['excluded'] += 1
            continue
        cell['runs'] += 1
        for name in metrics:
            cell['values'][name].append(row[name])
    for cell in summary.values():
        values = cell.pop('values')
        for name in metrics:
            if values[name]:
                cell[name] = _stats(values[name])
    return summary


@dataclass
class ExperimentResult:
    rows: list
    long_rows: list
    summary: dict


def run_structure_experiment(plan):
    rows, long_rows = _run(plan, _structure_job)
    return ExperimentResult(rows, long_rows,
                            summarize(rows, STRUCTURE_METRICS))


def run_anomaly_experiment(plan):
    rows, long_rows = _run(plan, _anomaly_job)
    return ExperimentResult(rows, long_rows, summarize(rows, ANOMALY_METRICS))


def run_experiment(plan):
    if plan.experiment == 'anomaly':
        return run_anomaly_experiment(plan)
    return run_structure_experiment(plan)
