# -*- coding: utf-8 -*-
r"""
      ___ ___ ___ _
     / __/ __/ __| |
    | (__\__ \__ \ |__
     \___|___/___/____|


Common substructure learning for several Gaussian graphical models: every
precision matrix is split into a part shared by all datasets and an
individual part, fitted jointly with ADMM.

Call :func:`cssl.conf.setup` before using the configuration forms outside
of a Django project.
"""
from .core import (
    CovarianceSet, Dataset, Hyperparams, PrecisionDecomposition,
    log_likelihood, mle_precision, sample_covariance)
from .evaluation import (
    anomaly_score_pair, anomaly_scores_between, f0_measure, weighted_prf)
from .exceptions import (
    ConvergenceError, InfeasibleProjectionError, NotPositiveDefiniteError)
from .projections import project_onto_C
from .selection import (
    extract_common_exact, extract_common_threshold, heuristic_hyperparams)
from .solver import SolverConfig, fit_msics, fit_pooled, fit_sics, solve
from .synthetic import GenConfig, generate_family


__version__ = '0.1.0.dev1'


__all__ = (
    'CovarianceSet', 'Dataset', 'Hyperparams', 'PrecisionDecomposition',
    'log_likelihood', 'mle_precision', 'sample_covariance',
    'anomaly_score_pair', 'anomaly_scores_between', 'f0_measure',
    'weighted_prf', 'ConvergenceError', 'InfeasibleProjectionError',
    'NotPositiveDefiniteError', 'project_onto_C', 'extract_common_exact',
    'extract_common_threshold', 'heuristic_hyperparams', 'SolverConfig',
    'fit_msics', 'fit_pooled', 'fit_sics', 'solve', 'GenConfig',
    'generate_family')
