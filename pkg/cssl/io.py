"""
File formats read and written by the command line tools.

Matrices and datasets are dense CSV files without header, one row per line.
Every float is written with 17 significant digits so that results are
reproducible byte for byte.
"""
import csv
import json
import logging
import math
import os
import re

import numpy as np
from django.core.exceptions import ValidationError

from .core import CovarianceSet, Dataset, PrecisionDecomposition
from .forms import ManifestForm

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def format_float(value):
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return FLOAT_FORMAT % value


def write_matrix(path, matrix, fmt=FLOAT_FORMAT):
    np.savetxt(path, np.atleast_2d(matrix), fmt=fmt, delimiter=',')


def read_matrix(path):
    try:
        matrix = np.loadtxt(path, delimiter=',', ndmin=2)
    except ValueError as error:
        raise ValidationError(
            'Cannot parse {0}: {1}'.format(path, error), code='csv')
    logger.debug('read %s with shape %s', path, matrix.shape)
    return matrix


def jsonable(value):
    """
    Convert numpy values to plain Python; infinities become ``"inf"`` and
    ``"-inf"``, nan becomes ``None``.
    """
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    return value


def write_json(path, document):
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(jsonable(document), handle, indent=2, sort_keys=True)
        handle.write('\n')


def read_json(path):
    with open(path, encoding='utf-8') as handle:
        try:
            return json.load(handle)
        except ValueError as error:
            raise ValidationError(
                '{0} is not valid JSON: {1}'.format(path, error),
                code='json')


def _cell(value):
    if value is None:
        return ''
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return value


def write_table(path, rows, fieldnames=None):
    """
    Write dict rows as CSV. Columns follow ``fieldnames`` or the order in
    which keys first appear.
    """
    if fieldnames is None:
        fieldnames = []
        for row in rows:
            fieldnames.extend(key for key in row if key not in fieldnames)
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames,
                                extrasaction='ignore', lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(row.get(key)) for key in fieldnames})


def _resolve(base, paths):
    return [path if os.path.isabs(path) else os.path.join(base, path)
            for path in paths]


def load_manifest(path):
    """
    Read a covariance-set manifest and return the
    :class:`~cssl.core.CovarianceSet` it describes. File paths in the
    manifest are relative to its directory.
    """
    form = ManifestForm.from_document(read_json(path))
    form.raise_for_errors()
    data = form.cleaned_data
    base = os.path.dirname(os.path.abspath(path))
    if data['matrices']:
        matrices = np.stack([read_matrix(item) for item in
                             _resolve(base, data['matrices'])])
        if data['diag_load']:
            matrices = matrices + data['diag_load'] * np.eye(
                matrices.shape[-1])
        return CovarianceSet.normalized(matrices, data['weights'],
                                        data['n_points'])
    datasets = [Dataset(read_matrix(item)) for item in
                _resolve(base, data['datasets'])]
    return CovarianceSet.from_datasets(
        datasets, data['weights'], diag_load=data['diag_load'],
        center=data['center'], zero_mean=data['zero_mean'])


def _stack_index(name, prefix):
    match = re.match(r'^{0}_(\d+)\.csv$'.format(re.escape(prefix)), name)
    return int(match.group(1)) if match else None


def read_stack(directory, prefix):
    """
    Read ``{prefix}_1.csv``, ``{prefix}_2.csv``, ... from a directory into
    one ``N x d x d`` array.
    """
    found = sorted(
        (index, name) for index, name in
        ((_stack_index(name, prefix), name)
         for name in os.listdir(directory))
        if index is not None)
    if not found:
        raise ValidationError(
            'No {0}_<i>.csv files in {1}.'.format(prefix, directory),
            code='missing')
    if [index for index, _ in found] != list(range(1, len(found) + 1)):
        raise ValidationError(
            'The {0}_<i>.csv files in {1} are not numbered 1..{2}.'.format(
                prefix, directory, len(found)),
            code='missing')
    return np.stack([read_matrix(os.path.join(directory, name))
                     for _, name in found])


def write_stack(directory, prefix, matrices):
    for i, matrix in enumerate(matrices, start=1):
        write_matrix(os.path.join(directory, '{0}_{1}.csv'.format(prefix, i)),
                     matrix)


def write_family(directory, family):
    """
    Export a synthetic family: ``precision_i.csv``, ``dataset_i.csv``,
    ``common_mask.csv``, ``meta.json`` and a ``manifest.json`` for ``fit``.
    """
    os.makedirs(directory, exist_ok=True)
    write_stack(directory, 'precision', family.precisions)
    write_stack(directory, 'dataset',
                [dataset.samples for dataset in family.datasets])
    write_matrix(os.path.join(directory, 'common_mask.csv'),
                 family.common_mask.astype(int), fmt='%d')
    write_json(os.path.join(directory, 'meta.json'), family.meta)
    write_json(os.path.join(directory, 'manifest.json'), {
        'datasets': ['dataset_{0}.csv'.format(i) for i in
                     range(1, len(family.datasets) + 1)],
        'zero_mean': True,
    })


def write_decomposition(directory, decomposition, record):
    """
    Export ``theta.csv``, ``omega_i.csv``, ``lambda_i.csv`` and
    ``diagnostics.json``.
    """
    os.makedirs(directory, exist_ok=True)
    write_matrix(os.path.join(directory, 'theta.csv'), decomposition.theta)
    write_stack(directory, 'omega', decomposition.omegas)
    write_stack(directory, 'lambda', decomposition.precisions)
    write_json(os.path.join(directory, 'diagnostics.json'), record)


def read_decomposition(directory):
    return PrecisionDecomposition(
        read_matrix(os.path.join(directory, 'theta.csv')),
        read_stack(directory, 'omega'))


def write_common_structure(directory, structure):
    os.makedirs(directory, exist_ok=True)
    write_matrix(os.path.join(directory, 'common_mask.csv'),
                 structure.support.astype(int), fmt='%d')
    write_matrix(os.path.join(directory, 'theta_hat.csv'),
                 structure.theta_hat)
    write_json(os.path.join(directory, 'edges.json'), {
        'threshold': structure.threshold,
        'edges': structure.edges(),
    })


def write_anomaly(path, report):
    write_table(path, report.rows(), ['j', 'd_ab', 'd_ba', 'a'])
