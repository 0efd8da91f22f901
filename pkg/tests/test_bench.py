import math
import os

import numpy as np
import pytest
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from cssl.bench import (
    ExperimentPlan, MethodSpec, fit_method, run_experiment, run_seed,
    summarize)
from cssl.core import CovarianceSet
from cssl.forms import plan_form
from cssl.io import read_json
from cssl.solver import SolverConfig
from cssl.synthetic import GenConfig, generate_family

PLANS = os.path.join(os.path.dirname(__file__), os.pardir, 'plans')

SOLVER = SolverConfig(max_iter=2000)


def tiny_plan(**options):
    defaults = dict(
        dims=(5,), N=2, runs=2, alpha_grid=(0.1, 0.3),
        methods=(MethodSpec('cssl'), MethodSpec('sics', eps0=0.5)),
        seed=3, solver=SOLVER)
    defaults.update(options)
    return ExperimentPlan(**defaults)


class MethodSpecTests(SimpleTestCase):
    def test_labels(self):
        self.assertEqual(MethodSpec('cssl').label, 'CSSL(p=2)')
        self.assertEqual(MethodSpec('cssl', p=math.inf).label,
                         'CSSL(p=inf)')
        self.assertEqual(MethodSpec('cssl_pooled').label, 'CSSL(gamma=inf)')
        self.assertEqual(MethodSpec('msics', p=1).label, 'MSICS(p=1)')
        self.assertEqual(MethodSpec('sics', eps0=0.25).label,
                         'SICS[eps0=0.25]')

    def test_validation(self):
        with self.assertRaises(ValidationError):
            MethodSpec('glasso')
        with self.assertRaises(ValidationError):
            MethodSpec('sics', eps0=1.0)


class ExperimentPlanTests(SimpleTestCase):
    def test_validation(self):
        with self.assertRaises(ValidationError):
            tiny_plan(alpha_grid=(0.3, 0.1))
        with self.assertRaises(ValidationError):
            tiny_plan(alpha_grid=(0.0, 0.1))
        with self.assertRaises(ValidationError):
            tiny_plan(dims=(1,))
        with self.assertRaises(ValidationError):
            tiny_plan(methods=())
        with self.assertRaises(ValidationError):
            tiny_plan(experiment='tables')

    def test_jobs(self):
        plan = tiny_plan(dims=(5, 6))
        self.assertEqual([(d, run) for _, d, run in plan.jobs()],
                         [(5, 0), (5, 1), (6, 0), (6, 1)])
        self.assertEqual(tiny_plan(experiment='anomaly').n_datasets, 5)

    def test_run_seeds(self):
        plan = tiny_plan()
        self.assertEqual(run_seed(plan, 5, 0), run_seed(plan, 5, 0))
        self.assertNotEqual(run_seed(plan, 5, 0), run_seed(plan, 5, 1))


class FitMethodTests(SimpleTestCase):
    def setUp(self):
        family = generate_family(GenConfig(d=4, N=2, seed=5))
        self.cov = CovarianceSet.from_datasets(family.datasets,
                                               zero_mean=True)

    def test_regimes(self):
        _, _, rho, gamma = fit_method(MethodSpec('sics'), self.cov, 0.2,
                                      SOLVER)
        self.assertEqual((rho, gamma), (0.2, math.inf))
        decomposition, _, rho, gamma = fit_method(
            MethodSpec('msics', p=math.inf), self.cov, 0.2, SOLVER)
        self.assertEqual((rho, gamma), (math.inf, 0.2))
        self.assertFalse(decomposition.theta.any())
        decomposition, _, _, gamma = fit_method(
            MethodSpec('cssl_pooled'), self.cov, 0.2, SOLVER)
        self.assertEqual(gamma, math.inf)
        self.assertFalse(decomposition.omegas.any())

    def test_cssl_uses_the_scale_line(self):
        _, _, rho, gamma = fit_method(MethodSpec('cssl'), self.cov, 0.2,
                                      SOLVER)
        self.assertEqual(gamma, 0.2)
        self.assertGreaterEqual(rho, 0.0)


class SummarizeTests(SimpleTestCase):
    def test_statistics(self):
        rows = [
            {'method': 'SICS', 'd': 5, 'status': 'ok', 'auc': 0.5},
            {'method': 'SICS', 'd': 5, 'status': 'ok', 'auc': 1.0},
            {'method': 'SICS', 'd': 5, 'status': 'excluded'},
        ]
        summary = summarize(rows, ('auc',))
        cell = summary['SICS|d=5']
        self.assertEqual(cell['runs'], 2)
        self.assertEqual(cell['excluded'], 1)
        self.assertEqual(cell['auc']['mean'], 0.75)
        self.assertEqual(cell['auc']['median'], 0.75)
        self.assertEqual(cell['auc']['q25'], 0.625)

    def test_all_excluded(self):
        summary = summarize([{'method': 'SICS', 'd': 5,
                              'status': 'excluded'}], ('auc',))
        self.assertNotIn('auc', summary['SICS|d=5'])


class StructureExperimentTests(SimpleTestCase):
    def test_rows(self):
        result = run_experiment(tiny_plan())
        self.assertEqual(len(result.rows), 4)
        for row in result.rows:
            self.assertEqual(row['experiment'], 'structure')
            self.assertIn(row['status'], ('ok', 'excluded'))
            if row['status'] == 'ok':
                self.assertIn(row['alpha'], (0.1, 0.3))
                self.assertTrue(0 <= row['f_measure'] <= 1)
                self.assertTrue(0 <= row['f0_measure'] <= 1)
        self.assertEqual({row['method'] for row in result.rows},
                         {'CSSL(p=2)', 'SICS[eps0=0.5]'})
        self.assertEqual(set(result.summary),
                         {'CSSL(p=2)|d=5', 'SICS[eps0=0.5]|d=5'})

    def test_sweep_runs_from_the_largest_alpha(self):
        result = run_experiment(tiny_plan(runs=1, early_stop=False))
        alphas = [row['alpha'] for row in result.long_rows
                  if row['method'] == 'CSSL(p=2)']
        self.assertEqual(alphas, [0.3, 0.1])

    def test_deterministic(self):
        first = run_experiment(tiny_plan(runs=1))
        second = run_experiment(tiny_plan(runs=1))
        self.assertEqual(first.rows, second.rows)
        self.assertEqual(first.long_rows, second.long_rows)

    def test_worker_count_does_not_change_the_rows(self):
        serial = run_experiment(tiny_plan())
        parallel = run_experiment(tiny_plan(workers=2))
        self.assertEqual(serial.rows, parallel.rows)


class AnomalyExperimentTests(SimpleTestCase):
    def test_rows(self):
        plan = tiny_plan(experiment='anomaly', runs=1, n_normal=2,
                         n_faulty=1, diag_load=1e-3,
                         methods=(MethodSpec('msics'),))
        result = run_experiment(plan)
        self.assertEqual(len(result.rows), 1)
        row = result.rows[0]
        self.assertEqual(row['experiment'], 'anomaly')
        j, k = (int(index) for index in row['swap'].split('-'))
        self.assertLess(j, k)
        if row['status'] == 'ok':
            self.assertTrue(0 <= row['auc'] <= 1)
        self.assertEqual(len(result.long_rows), 2)


def median(result, label, metric):
    return result.summary['{0}|d={1}'.format(label, result.rows[0]['d'])][
        metric]['median']


def mean(result, label, metric):
    return result.summary['{0}|d={1}'.format(label, result.rows[0]['d'])][
        metric]['mean']


@pytest.mark.slow
def test_desk_structure_experiment():
    form = plan_form(read_json(os.path.join(PLANS, 'desk_structure.json')))
    form.raise_for_errors()
    result = run_experiment(form.to_plan(workers=os.cpu_count() or 1))
    cssl = mean(result, 'CSSL(p=2)', 'f_measure')
    best_msics = max(mean(result, 'MSICS(p=2)', 'f_measure'),
                     mean(result, 'MSICS(p=inf)', 'f_measure'))
    best_sics = max(mean(result, 'SICS', 'f_measure'),
                    mean(result, 'SICS[eps0=0.5]', 'f_measure'))
    assert cssl > best_msics > best_sics
    assert 0.60 <= cssl <= 0.90
    assert mean(result, 'SICS[eps0=0.5]', 'f_measure') <= 0.35
    f0 = [cell['f0_measure']['mean'] for cell in result.summary.values()]
    assert np.ptp(f0) <= 0.05


@pytest.mark.slow
def test_desk_anomaly_experiment():
    document = read_json(os.path.join(PLANS, 'desk_anomaly.json'))
    form = plan_form(document)
    form.raise_for_errors()
    result = run_experiment(form.to_plan(workers=os.cpu_count() or 1))
    cssl = median(result, 'CSSL(p=inf)', 'auc')
    assert cssl >= 0.9
    assert cssl >= median(result, 'MSICS(p=2)', 'auc')

    document['inject_fault'] = False
    form = plan_form(document)
    form.raise_for_errors()
    result = run_experiment(form.to_plan(workers=os.cpu_count() or 1))
    assert 0.35 <= median(result, 'CSSL(p=inf)', 'auc') <= 0.65
