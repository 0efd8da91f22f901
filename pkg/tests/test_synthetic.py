import numpy as np
import pytest
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from cssl.exceptions import NotPositiveDefiniteError
from cssl.synthetic import (
    GenConfig, couple_blocks, generate_family, givens_rotate,
    givens_sparse_orthonormal, inject_swap, make_rng, sample_gaussian,
    sparse_precision)


def assert_positive_definite(matrix):
    assert np.linalg.eigvalsh(matrix).min() > 0


class GenConfigTests(SimpleTestCase):
    def test_defaults(self):
        config = GenConfig(d=10, N=3)
        self.assertEqual(config.a, 2)
        self.assertEqual(config.n_per_dataset, 50)
        self.assertEqual(GenConfig(d=40, N=3).a, 3)
        self.assertEqual(GenConfig(d=80, N=3).a, 4)

    def test_blocks_are_capped_by_d(self):
        self.assertEqual(GenConfig(d=3, N=2, a=5).a, 3)

    def test_ranges(self):
        with self.assertRaises(ValidationError):
            GenConfig(d=0, N=2)
        with self.assertRaises(ValidationError):
            GenConfig(d=5, N=2, target_density=0.0)
        with self.assertRaises(ValidationError):
            GenConfig(d=5, N=2, eig_floor=0.0)
        with self.assertRaises(ValidationError):
            GenConfig(d=5, N=2, n_per_dataset=-1)


class GivensTests(SimpleTestCase):
    def test_rotation_is_orthonormal(self):
        V = givens_rotate(np.eye(3), 0, 2, 0.7)
        assert_allclose(V @ V.T, np.eye(3), atol=1e-15)
        self.assertEqual(V[1, 1], 1.0)

    def test_sparse_orthonormal(self):
        V = givens_sparse_orthonormal(8, 0.3, make_rng(0))
        assert_allclose(V @ V.T, np.eye(8), atol=1e-12)
        self.assertGreater(np.count_nonzero(V), 8)

    def test_zero_density_is_the_identity(self):
        V = givens_sparse_orthonormal(5, 0.0, make_rng(0))
        assert_allclose(V, np.eye(5))

    def test_density_range(self):
        with self.assertRaises(ValidationError):
            givens_sparse_orthonormal(5, 1.5, make_rng(0))

    def test_sparse_precision_spectrum(self):
        precision = sparse_precision(6, 0.4, 0.05, make_rng(1))
        values = np.linalg.eigvalsh(precision)
        self.assertGreaterEqual(values.min(), 0.05 - 1e-12)
        self.assertLessEqual(values.max(), 1.0 + 1e-12)


class CouplingTests(SimpleTestCase):
    def test_determinant_ratio(self):
        rng = make_rng(3)
        for b in (1, 2):
            psi1 = sparse_precision(5, 0.3, 0.05, rng)
            psi2 = sparse_precision(6, 0.3, 0.05, rng)
            coupled, mask = couple_blocks(psi1, psi2, b, rng)
            assert_positive_definite(coupled)
            ratio = np.linalg.det(coupled) / (
                np.linalg.det(psi1) * np.linalg.det(psi2))
            self.assertGreaterEqual(ratio, 0.36 ** b - 1e-9)
            self.assertLessEqual(ratio, 0.75 ** b + 1e-9)
            self.assertTrue(mask[:5, 5:].any())
            self.assertFalse(mask[:5, :5].any())
            assert_allclose(coupled[:5, :5], psi1)
            assert_allclose(coupled[5:, 5:], psi2)


class SamplingTests(SimpleTestCase):
    def test_shape(self):
        dataset = sample_gaussian(np.eye(3), 7, make_rng(0))
        self.assertEqual(dataset.samples.shape, (7, 3))

    def test_not_positive_definite(self):
        with self.assertRaises(NotPositiveDefiniteError):
            sample_gaussian(np.array([[1.0, 2.0], [2.0, 1.0]]), 3,
                            make_rng(0))

    def test_inject_swap(self):
        precision = np.array([[1.0, 0.1, 0.2],
                              [0.1, 2.0, 0.3],
                              [0.2, 0.3, 3.0]])
        swapped = inject_swap(precision, 0, 2)
        self.assertEqual(swapped[0, 0], 3.0)
        self.assertEqual(swapped[2, 2], 1.0)
        self.assertEqual(swapped[0, 1], 0.3)
        self.assertEqual(swapped[1, 2], 0.1)
        assert_allclose(np.linalg.eigvalsh(swapped),
                        np.linalg.eigvalsh(precision))


class FamilyTests(SimpleTestCase):
    def setUp(self):
        self.config = GenConfig(d=12, N=3, seed=7, n_per_dataset=20)
        self.family = generate_family(self.config)

    def test_shapes(self):
        self.assertEqual(self.family.precisions.shape, (3, 12, 12))
        self.assertEqual(self.family.N, 3)
        self.assertEqual(len(self.family.datasets), 3)
        self.assertEqual(self.family.datasets[0].samples.shape, (20, 12))

    def test_positive_definite(self):
        for precision in self.family.precisions:
            assert_positive_definite(precision)

    def test_common_part_is_shared_bitwise(self):
        mask = self.family.common_mask
        first = self.family.precisions[0]
        for precision in self.family.precisions[1:]:
            self.assertTrue(np.array_equal(precision[mask], first[mask]))

    def test_individual_parts_differ(self):
        precisions = self.family.precisions
        outside = ~self.family.common_mask
        self.assertFalse(np.array_equal(precisions[0][outside],
                                        precisions[1][outside]))

    def test_deterministic(self):
        again = generate_family(self.config)
        self.assertTrue(np.array_equal(again.precisions,
                                       self.family.precisions))
        self.assertTrue(np.array_equal(again.datasets[2].samples,
                                       self.family.datasets[2].samples))

    def test_seed_changes_the_family(self):
        other = generate_family(GenConfig(d=12, N=3, seed=8,
                                          n_per_dataset=20))
        self.assertFalse(np.array_equal(other.precisions,
                                        self.family.precisions))

    def test_meta(self):
        meta = self.family.meta
        self.assertEqual(meta['config']['seed'], 7)
        self.assertEqual(meta['rng'], 'numpy.random.PCG64')
        self.assertEqual(len(meta['densities']), 3)
        self.assertGreater(meta['mean_density'], 0)


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(100))
def test_desk_scale_families(seed):
    family = generate_family(GenConfig(d=25, N=5, seed=seed))
    mask = family.common_mask
    for precision in family.precisions:
        assert_positive_definite(precision)
        assert np.array_equal(precision[mask], family.precisions[0][mask])
    assert 0.10 <= family.meta['mean_density'] <= 0.20
