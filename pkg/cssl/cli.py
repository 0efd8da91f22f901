"""
The ``cssl`` command.

Every subcommand builds one configuration document from ``--config`` (a
JSON file), its own flags and ``--set key=value`` overrides, in that order,
and validates it with the matching form. Exit status is 0 on success, 1 on
invalid input and 2 when the solver did not converge.
"""
import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from django.core.exceptions import ValidationError

from . import conf, io
from .bench import (
    ANOMALY_METRICS, STRUCTURE_METRICS, run_experiment)
from .core import Hyperparams
from .evaluation import anomaly_scores_between, weighted_prf
from .exceptions import (
    ConvergenceError, InfeasibleProjectionError, NotPositiveDefiniteError)
from .forms import (
    AnomalyForm, EvaluateForm, ExtractForm, FitForm, GenConfigForm,
    HeuristicForm, plan_form)
from .selection import (
    extract_common_exact, extract_common_threshold, fit_scale_line,
    params_from_alpha)
from .solver import solve
from .synthetic import generate_family

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2

SUBCOMMANDS = ('generate', 'fit', 'extract', 'evaluate', 'anomaly', 'bench',
               'heuristic')


@dataclass
class Invocation:
    subcommand: str
    config_path: Optional[str] = None
    overrides: List[str] = field(default_factory=list)
    out_dir: str = '.'
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ValidationError(
                'Unknown subcommand {0!r}.'.format(self.subcommand),
                code='subcommand')
        if self.config_path is not None and \
                not os.path.isfile(self.config_path):
            raise ValidationError(
                'Config file {0} does not exist.'.format(self.config_path),
                code='config')

    def document(self):
        """
        The merged configuration document.
        """
        document = {}
        if self.config_path is not None:
            document = io.read_json(self.config_path)
            if not isinstance(document, dict):
                raise ValidationError(
                    '{0} must hold a JSON object.'.format(self.config_path),
                    code='document')
        for key, value in self.flags.items():
            if value is not None:
                assign(document, key, value)
        for override in self.overrides:
            key, value = parse_override(override)
            assign(document, key, value)
        return document


def parse_override(text):
    """
    Split ``key=value``; the value is read as JSON when possible.
    """
    key, sep, raw = text.partition('=')
    if not sep or not key.strip():
        raise ValidationError(
            'Overrides look like key=value, got {0!r}.'.format(text),
            code='override')
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return key.strip(), value


def assign(document, key, value):
    """
    Set a dotted ``key`` such as ``solver.max_iter`` or ``methods.0.p``.
    """
    parts = key.split('.')
    target = document
    for part, following in zip(parts, parts[1:]):
        if isinstance(target, list):
            index = _index(target, part, key)
            target = target[index]
            continue
        child = target.get(part)
        if child is None:
            child = [] if following.isdigit() else {}
            target[part] = child
        target = child
    last = parts[-1]
    if isinstance(target, list):
        target[_index(target, last, key)] = value
    elif isinstance(target, dict):
        target[last] = value
    else:
        raise ValidationError('Cannot set {0!r}.'.format(key),
                              code='override')


def _index(items, part, key):
    if not part.isdigit() or int(part) >= len(items):
        raise ValidationError('Cannot set {0!r}: no list entry {1!r}.'.format(
            key, part), code='override')
    return int(part)


def _valid(form):
    form.raise_for_errors()
    return form


def _workers(args):
    return args.workers or conf.default_workers()


def cmd_generate(invocation, args):
    form = _valid(GenConfigForm.from_document(invocation.document()))
    family = generate_family(form.to_config())
    io.write_family(invocation.out_dir, family)
    logger.info('wrote %d precisions to %s', len(family.precisions),
                invocation.out_dir)
    return EXIT_OK


def _fit_record(diagnostics, hp, heuristic=None):
    record = diagnostics.as_dict()
    record['hyperparams'] = hp.as_dict()
    if heuristic is not None:
        record['heuristic'] = heuristic
    return record


def cmd_fit(invocation, args):
    form = _valid(FitForm.from_document(invocation.document()))
    data = form.cleaned_data
    cov = io.load_manifest(data['manifest'])
    heuristic = None
    if data['heuristic']:
        line = fit_scale_line(cov)
        rho, gamma = params_from_alpha(line, data['alpha'])
        hp = Hyperparams(rho, gamma, data['p'], data['penalize_diagonal'])
        heuristic = {'alpha': data['alpha'], 's0': line.s0, 's1': line.s1}
    else:
        hp = form.to_hyperparams()
    config = form.forms['solver'].to_config(_workers(args))
    try:
        decomposition, diagnostics = solve(cov, hp, config)
    except ConvergenceError as error:
        if error.decomposition is not None:
            io.write_decomposition(
                invocation.out_dir, error.decomposition,
                _fit_record(error.diagnostics, hp, heuristic))
        print(str(error), file=sys.stderr)
        return EXIT_NOT_CONVERGED
    io.write_decomposition(invocation.out_dir, decomposition,
                           _fit_record(diagnostics, hp, heuristic))
    return EXIT_OK


def cmd_extract(invocation, args):
    form = _valid(ExtractForm.from_document(invocation.document()))
    data = form.cleaned_data
    if data['eps0'] is not None:
        structure = extract_common_threshold(
            io.read_stack(data['input'], 'lambda'), data['eps0'])
    else:
        zero_tol = data['zero_tol']
        if zero_tol is None:
            zero_tol = conf.get('CSSL_ZERO_TOL')
        nonzero_tol = data['nonzero_tol']
        if nonzero_tol is None:
            nonzero_tol = zero_tol
        structure = extract_common_exact(
            io.read_decomposition(data['input']), zero_tol, nonzero_tol)
    io.write_common_structure(invocation.out_dir, structure)
    print('{0} common edges'.format(structure.n_edges))
    return EXIT_OK


def cmd_evaluate(invocation, args):
    form = _valid(EvaluateForm.from_document(invocation.document()))
    data = form.cleaned_data
    estimates = io.read_stack(data['estimates'], 'lambda')
    truth = io.read_stack(data['truth'], 'precision')
    zero_tol = data['zero_tol']
    if zero_tol is None:
        zero_tol = conf.get('CSSL_DENSITY_TOL')
    if data['eps0'] is not None:
        threshold = extract_common_threshold(estimates, data['eps0']).threshold
        eps = float(np.nextafter(threshold, math.inf))
    elif data['eps'] is not None:
        eps = data['eps']
    else:
        eps = conf.get('CSSL_ZERO_TOL')
    metrics = weighted_prf(estimates, truth, eps, zero_tol)
    os.makedirs(invocation.out_dir, exist_ok=True)
    record = dict(metrics.as_dict(), eps=eps)
    io.write_json(os.path.join(invocation.out_dir, 'metrics.json'), record)
    print(json.dumps(io.jsonable(record), sort_keys=True))
    return EXIT_OK


def cmd_anomaly(invocation, args):
    form = _valid(AnomalyForm.from_document(invocation.document()))
    data = form.cleaned_data
    normal = [io.read_matrix(path) for path in data['normal']]
    faulty = [io.read_matrix(path) for path in data['faulty']]
    labels = None
    if data['labels']:
        labels = np.zeros(normal[0].shape[0], dtype=bool)
        try:
            labels[data['labels']] = True
        except IndexError:
            raise ValidationError('A label is not a variable index.',
                                  code='labels')
    report = anomaly_scores_between(normal, faulty, labels)
    os.makedirs(invocation.out_dir, exist_ok=True)
    io.write_anomaly(os.path.join(invocation.out_dir, 'anomaly.csv'), report)
    if report.auc is not None:
        io.write_json(os.path.join(invocation.out_dir, 'anomaly.json'),
                      {'auc': report.auc})
        print('AUC {0:.4f}'.format(report.auc))
    return EXIT_OK


def cmd_bench(invocation, args):
    form = _valid(plan_form(invocation.document()))
    plan = form.to_plan(_workers(args))
    logger.info('running %s experiment: %d cells', plan.experiment,
                len(plan.jobs()))
    result = run_experiment(plan)
    metrics = ANOMALY_METRICS if plan.experiment == 'anomaly' \
        else STRUCTURE_METRICS
    os.makedirs(invocation.out_dir, exist_ok=True)
    io.write_table(os.path.join(invocation.out_dir, 'results.csv'),
                   result.rows)
    io.write_table(os.path.join(invocation.out_dir, 'sweep.csv'),
                   result.long_rows)
    io.write_json(os.path.join(invocation.out_dir, 'summary.json'), {
        'experiment': plan.experiment,
        'metrics': list(metrics),
        'cells': result.summary,
    })
    return EXIT_OK


def cmd_heuristic(invocation, args):
    form = _valid(HeuristicForm.from_document(invocation.document()))
    data = form.cleaned_data
    line = fit_scale_line(io.load_manifest(data['manifest']))
    record = {'s0': line.s0, 's1': line.s1}
    if data['alpha']:
        rho, gamma = params_from_alpha(line, data['alpha'])
        record.update(alpha=data['alpha'], rho=rho, gamma=gamma,
                      p=data['p'])
    print(json.dumps(io.jsonable(record), sort_keys=True))
    return EXIT_OK


COMMANDS = {
    'generate': cmd_generate,
    'fit': cmd_fit,
    'extract': cmd_extract,
    'evaluate': cmd_evaluate,
    'anomaly': cmd_anomaly,
    'bench': cmd_bench,
    'heuristic': cmd_heuristic,
}

# Flag destinations and the document keys they set.
FLAG_KEYS = {
    'generate': {'d': 'd', 'N': 'N', 'seed': 'seed'},
    'fit': {
        'manifest': 'manifest', 'rho': 'rho', 'gamma': 'gamma', 'p': 'p',
        'alpha': 'alpha', 'heuristic': 'heuristic',
        'max_iter': 'solver.max_iter', 'workers': 'solver.workers',
    },
    'extract': {'input': 'input', 'eps0': 'eps0'},
    'evaluate': {'estimates': 'estimates', 'truth': 'truth', 'eps': 'eps',
                 'eps0': 'eps0'},
    'anomaly': {'normal': 'normal', 'faulty': 'faulty', 'labels': 'labels'},
    'bench': {'runs': 'runs', 'workers': 'workers'},
    'heuristic': {'manifest': 'manifest', 'alpha': 'alpha', 'p': 'p'},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, '{0}: error: {1}\n'.format(self.prog,
                                                           message))


def _common(parser):
    parser.add_argument('--config', help='JSON configuration file')
    parser.add_argument('--set', dest='overrides', action='append',
                        default=[], metavar='KEY=VALUE',
                        help='override a (dotted) configuration key')
    parser.add_argument('--out-dir', default='.',
                        help='directory for the written files')
    parser.add_argument('--workers', type=int,
                        help='worker count (default: $CSSL_WORKERS or the '
                             'number of CPUs)')
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='log debug output')


def build_parser():
    parser = _Parser(prog='cssl', description=(
        'Learn the common substructure of several Gaussian graphical '
        'models.'))
    commands = parser.add_subparsers(dest='subcommand', required=True,
                                     parser_class=_Parser)

    generate = commands.add_parser('generate',
                                   help='generate a synthetic family')
    generate.add_argument('--d', type=int)
    generate.add_argument('--N', type=int)
    generate.add_argument('--seed', type=int)

    fit = commands.add_parser('fit', help='fit a decomposition')
    fit.add_argument('--manifest')
    fit.add_argument('--rho')
    fit.add_argument('--gamma', help='a number or "inf"')
    fit.add_argument('--p', help='1, 2 or "inf"')
    fit.add_argument('--alpha', type=float)
    fit.add_argument('--heuristic', action='store_true', default=None)
    fit.add_argument('--max-iter', type=int)

    extract = commands.add_parser('extract', help='extract common edges')
    extract.add_argument('--input', help='directory written by fit')
    extract.add_argument('--eps0', type=float)

    evaluate = commands.add_parser('evaluate',
                                   help='score estimates against truth')
    evaluate.add_argument('--estimates')
    evaluate.add_argument('--truth')
    evaluate.add_argument('--eps', type=float)
    evaluate.add_argument('--eps0', type=float)

    anomaly = commands.add_parser('anomaly', help='score variables')
    anomaly.add_argument('--normal', nargs='+')
    anomaly.add_argument('--faulty', nargs='+')
    anomaly.add_argument('--labels', nargs='+', type=int)

    bench = commands.add_parser('bench', help='run an experiment plan')
    bench.add_argument('--runs', type=int)

    heuristic = commands.add_parser('heuristic',
                                    help='print the scale line')
    heuristic.add_argument('--manifest')
    heuristic.add_argument('--alpha', type=float)
    heuristic.add_argument('--p')

    for sub in commands.choices.values():
        _common(sub)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    conf.setup()
    if args.verbose:
        logging.getLogger('cssl').setLevel(logging.DEBUG)
    try:
        invocation = Invocation(
            subcommand=args.subcommand,
            config_path=args.config,
            overrides=args.overrides,
            out_dir=args.out_dir,
            flags={key: getattr(args, dest) for dest, key in
                   FLAG_KEYS[args.subcommand].items()})
        return COMMANDS[args.subcommand](invocation, args)
    except ValidationError as error:
        for message in error.messages:
            print('error: {0}'.format(message), file=sys.stderr)
    except (InfeasibleProjectionError, NotPositiveDefiniteError, OSError,
            ValueError) as error:
        print('error: {0}'.format(error), file=sys.stderr)
    return EXIT_INVALID


if __name__ == '__main__':
    sys.exit(main())
