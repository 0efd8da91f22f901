import json
import math
import os

import numpy as np
import pytest
from django.core.exceptions import ValidationError
from numpy.testing import assert_allclose

from cssl import io
from cssl.core import PrecisionDecomposition
from cssl.selection import extract_common_exact
from cssl.synthetic import GenConfig, generate_family


def write_json(path, document):
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(document, handle)


def test_matrix_round_trip_is_exact(tmp_path):
    matrix = np.random.default_rng(0).standard_normal((3, 3))
    path = str(tmp_path / 'm.csv')
    io.write_matrix(path, matrix)
    assert np.array_equal(io.read_matrix(path), matrix)


def test_unparsable_matrix(tmp_path):
    path = tmp_path / 'm.csv'
    path.write_text('1,2\nthree,4\n')
    with pytest.raises(ValidationError):
        io.read_matrix(str(path))


def test_jsonable():
    document = io.jsonable({
        'inf': math.inf, 'nan': np.nan, 'int': np.int64(3),
        'flag': np.bool_(True), 'array': np.eye(2), 1: (np.float32(0.5),)})
    assert document == {'inf': 'inf', 'nan': None, 'int': 3, 'flag': True,
                        'array': [[1.0, 0.0], [0.0, 1.0]], '1': [0.5]}
    json.dumps(document)


def test_write_json_is_sorted(tmp_path):
    path = str(tmp_path / 'out.json')
    io.write_json(path, {'b': 1, 'a': -math.inf})
    with open(path) as handle:
        text = handle.read()
    assert text == '{\n  "a": "-inf",\n  "b": 1\n}\n'
    assert io.read_json(path) == {'a': '-inf', 'b': 1}


def test_invalid_json(tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text('{')
    with pytest.raises(ValidationError):
        io.read_json(str(path))


def test_write_table(tmp_path):
    path = str(tmp_path / 'rows.csv')
    io.write_table(path, [{'method': 'SICS', 'f': 0.5},
                          {'method': 'MSICS', 'g': None, 'f': math.inf}])
    with open(path) as handle:
        assert handle.read() == 'method,f,g\nSICS,0.5,\nMSICS,inf,\n'


def test_stacks(tmp_path):
    directory = str(tmp_path)
    stack = np.stack([np.eye(2), 2 * np.eye(2)])
    io.write_stack(directory, 'lambda', stack)
    assert sorted(os.listdir(directory)) == ['lambda_1.csv', 'lambda_2.csv']
    assert np.array_equal(io.read_stack(directory, 'lambda'), stack)


def test_stack_numbering(tmp_path):
    directory = str(tmp_path)
    io.write_matrix(os.path.join(directory, 'lambda_2.csv'), np.eye(2))
    with pytest.raises(ValidationError):
        io.read_stack(directory, 'lambda')
    with pytest.raises(ValidationError):
        io.read_stack(directory, 'omega')


def test_manifest_of_matrices(tmp_path):
    io.write_matrix(str(tmp_path / 'a.csv'), np.eye(2))
    io.write_matrix(str(tmp_path / 'b.csv'), 3 * np.eye(2))
    manifest = str(tmp_path / 'manifest.json')
    write_json(manifest, {'matrices': ['a.csv', 'b.csv'],
                          'weights': [1, 3], 'diag_load': 0.5})
    cov = io.load_manifest(manifest)
    assert_allclose(cov.weights, [0.25, 0.75])
    assert_allclose(cov.matrices[1], 3.5 * np.eye(2))


def test_manifest_of_datasets(tmp_path):
    io.write_matrix(str(tmp_path / 'x.csv'), np.array([[1.0, 0.0]]))
    io.write_matrix(str(tmp_path / 'y.csv'),
                    np.array([[0.0, 1.0], [0.0, -1.0], [1.0, 0.0]]))
    manifest = str(tmp_path / 'manifest.json')
    write_json(manifest, {'datasets': ['x.csv', 'y.csv'], 'zero_mean': True})
    cov = io.load_manifest(manifest)
    assert_allclose(cov.weights, [0.25, 0.75])
    assert list(cov.n_points) == [1, 3]


def test_invalid_manifest(tmp_path):
    manifest = str(tmp_path / 'manifest.json')
    write_json(manifest, {'matrices': ['a.csv'], 'weights': [1, 2]})
    with pytest.raises(ValidationError):
        io.load_manifest(manifest)


def test_family_export(tmp_path):
    family = generate_family(GenConfig(d=6, N=2, seed=1, n_per_dataset=10))
    directory = str(tmp_path / 'family')
    io.write_family(directory, family)
    assert np.array_equal(io.read_stack(directory, 'precision'),
                          family.precisions)
    mask = io.read_matrix(os.path.join(directory, 'common_mask.csv'))
    assert np.array_equal(mask.astype(bool), family.common_mask)
    cov = io.load_manifest(os.path.join(directory, 'manifest.json'))
    assert cov.N == 2
    assert list(cov.n_points) == [10, 10]
    meta = io.read_json(os.path.join(directory, 'meta.json'))
    assert meta['config']['seed'] == 1


def test_decomposition_export(tmp_path):
    theta = np.array([[2.0, 0.5], [0.5, 2.0]])
    omegas = np.stack([0.1 * np.eye(2), np.zeros((2, 2))])
    decomposition = PrecisionDecomposition(theta, omegas)
    directory = str(tmp_path)
    io.write_decomposition(directory, decomposition, {'converged': True})
    again = io.read_decomposition(directory)
    assert np.array_equal(again.theta, theta)
    assert np.array_equal(again.precisions, decomposition.precisions)
    assert io.read_json(os.path.join(directory, 'diagnostics.json')) == \
        {'converged': True}

    io.write_common_structure(directory, extract_common_exact(again))
    edges = io.read_json(os.path.join(directory, 'edges.json'))
    assert edges == {'threshold': None,
                     'edges': [{'j': 0, 'k': 1, 'value': 0.5}]}
