"""
Synthetic families of sparse precision matrices that share a planted common
substructure.

Each block ``Psi_k = V_k D_k V_k^T`` is built from a sparse orthonormal
``V_k`` (random Givens rotations applied to the identity) and eigenvalues
drawn from ``U[eig_floor, 1]``. The block-diagonal matrix of all blocks is
the common part. Every dataset then couples neighbouring blocks through a
low-rank off-diagonal block drawn independently per dataset, so the
couplings are the individual parts.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np
from django.core.exceptions import ValidationError
from scipy import linalg

from .core import Dataset, check_positive_definite
from .selection import estimate_density

logger = logging.getLogger(__name__)

RNG_ALGORITHM = 'numpy.random.PCG64'
ROTATIONS_PER_ENTRY = 20
CALIBRATION_ATTEMPTS = 6
DENSITY_SLACK = 0.3

# Stream labels mixed into the seed sequence.
BLOCK_STREAM = 0
COUPLING_STREAM = 1
SAMPLE_STREAM = 2


def make_rng(*entropy):
    return np.random.default_rng(np.random.SeedSequence(
        [int(value) for value in entropy]))


def default_blocks(d):
    if d <= 25:
        return 2
    if d <= 50:
        return 3
    return 4


@dataclass(frozen=True)
class GenConfig:
    d: int
    N: int
    a: Optional[int] = None
    b: int = 2
    target_density: float = 0.15
    eig_floor: float = 0.05
    seed: int = 0
    n_per_dataset: Optional[int] = None

    def __post_init__(self):
        if self.d < 1 or self.N < 1:
            raise ValidationError('d and N must be at least 1.',
                                  code='shape')
        a = default_blocks(self.d) if self.a is None else self.a
        if a < 1 or self.b < 1:
            raise ValidationError('a and b must be at least 1.',
                                  code='blocks')
        if not 0 < self.target_density < 1:
            raise ValidationError('target_density must lie in (0, 1).',
                                  code='density')
        if not 0 < self.eig_floor <= 1:
            raise ValidationError('eig_floor must lie in (0, 1].',
                                  code='eig_floor')
        n = 5 * self.d if self.n_per_dataset is None else self.n_per_dataset
        if n < 0:
            raise ValidationError('n_per_dataset must be nonnegative.',
                                  code='n_per_dataset')
        object.__setattr__(self, 'a', min(a, self.d))
        object.__setattr__(self, 'n_per_dataset', n)

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SyntheticFamily:
    precisions: np.ndarray
    common_mask: np.ndarray
    datasets: Tuple[Dataset, ...]
    meta: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.precisions.shape[0]


@dataclass
class _Block:
    """
    A PD matrix with its exact eigen-decomposition ``V diag(sigma) V^T``.
    """

    matrix: np.ndarray
    vectors: np.ndarray
    sigma: np.ndarray


def _rotate_rows(V, j, k, theta):
    c, s = math.cos(theta), math.sin(theta)
    row_j, row_k = V[j].copy(), V[k].copy()
    V[j] = c * row_j - s * row_k
    V[k] = s * row_j + c * row_k


def givens_rotate(V, j, k, theta):
    """
    Return ``G V`` where ``G`` rotates the ``(j, k)`` plane by ``theta``.
    """
    rotated = np.array(V, dtype=float)
    _rotate_rows(rotated, j, k, theta)
    return rotated


def _sparse_rotation(dim, target, rng, max_rotations=None):
    """
    Rotate the identity until the pattern ``V V^T != 0`` reaches the target
    off-diagonal density. The support of every row is tracked exactly, so
    the pattern is the one ``V D V^T`` will have. A rotation that would
    overshoot is kept only when it ends closer to the target.
    """
    V = np.eye(dim)
    if dim < 2 or target <= 0:
        return V, 0.0
    support = np.eye(dim, dtype=bool)
    pattern = np.eye(dim, dtype=bool)
    pairs = dim * (dim - 1)
    count = 0
    limit = ROTATIONS_PER_ENTRY * dim * dim if max_rotations is None \
        else max_rotations
    for _ in range(limit):
        if count >= target * pairs:
            break
        j, k = rng.choice(dim, size=2, replace=False)
        theta = rng.uniform(0.0, 2 * math.pi)
        merged = support[j] | support[k]
        hits = support[:, merged].any(axis=1)
        trial = pattern.copy()
        trial[j] = trial[k] = hits
        trial[:, j] = trial[:, k] = hits
        trial_count = int(trial.sum()) - dim
        if trial_count > target * pairs and \
                abs(trial_count - target * pairs) > \
                abs(count - target * pairs):
            break
        _rotate_rows(V, j, k, theta)
        support[j] = support[k] = merged
        pattern, count = trial, trial_count
    return V, count / pairs


def givens_sparse_orthonormal(dim, target_col_density, rng,
                              max_rotations=None):
    """
    Sparse orthonormal ``dim x dim`` matrix from random Givens rotations of
    the identity, with angles drawn from ``U[0, 2 pi]``. At most
    ``20 dim^2`` rotations are applied unless ``max_rotations`` says
    otherwise.
    """
    if not 0 <= target_col_density <= 1:
        raise ValidationError('The target density must lie in [0, 1].',
                              code='density')
    return _sparse_rotation(dim, target_col_density, rng, max_rotations)[0]


def _sparse_block(dim, density, eig_floor, rng):
    vectors, _ = _sparse_rotation(dim, density, rng)
    sigma = rng.uniform(eig_floor, 1.0, size=dim)
    matrix = (vectors * sigma) @ vectors.T
    return _Block((matrix + matrix.T) / 2, vectors, sigma)


def sparse_precision(dim, density, eig_floor, rng):
    """
    ``V D V^T`` with a sparse orthonormal ``V`` and eigenvalues drawn from
    ``U[eig_floor, 1]``.
    """
    return _sparse_block(dim, density, eig_floor, rng).matrix


def _top_pool(sigma, b):
    size = max(math.ceil(len(sigma) / 3), b)
    return np.argsort(-sigma, kind='stable')[:size]


def _couple(first, second, b, rng):
    """
    Join two blocks with the off-diagonal block
    ``Phi = sum_m xi_m v_m w_m^T`` where ``v_m`` and ``w_m`` are eigenvectors
    from the top third of each spectrum and ``xi_m = xi0_m sqrt(s_m r_m)``
    with ``|xi0_m|`` in ``[0.5, 0.8]``.
    """
    n1, n2 = len(first.sigma), len(second.sigma)
    b = min(b, n1, n2)
    picks1 = rng.choice(_top_pool(first.sigma, b), size=b, replace=False)
    picks2 = rng.choice(_top_pool(second.sigma, b), size=b, replace=False)
    xi0 = rng.uniform(0.5, 0.8, size=b) * rng.choice([-1.0, 1.0], size=b)
    s1, s2 = first.sigma[picks1], second.sigma[picks2]
    xi = xi0 * np.sqrt(s1 * s2)
    phi = (first.vectors[:, picks1] * xi) @ second.vectors[:, picks2].T

    factors = s1 - xi ** 2 / s2
    if not np.prod(factors) > 0:
        raise RuntimeError(
            'Coupling factors {0!r} violate the determinant condition.'
            .format(factors.tolist()))
    matrix = np.block([[first.matrix, phi], [phi.T, second.matrix]])
    smallest = float(np.linalg.eigvalsh(matrix).min())
    if not smallest > 0:
        raise RuntimeError(
            'Coupled matrix has smallest eigenvalue {0!r}.'.format(smallest))

    vectors = linalg.block_diag(first.vectors, second.vectors)
    sigma = np.concatenate([first.sigma, second.sigma])
    for m in range(b):
        i, j = picks1[m], n1 + picks2[m]
        values, rotation = np.linalg.eigh(
            [[sigma[i], xi[m]], [xi[m], sigma[j]]])
        pair = vectors[:, [i, j]] @ rotation
        vectors[:, i], vectors[:, j] = pair[:, 0], pair[:, 1]
        sigma[i], sigma[j] = values
    mask = np.zeros(matrix.shape, dtype=bool)
    mask[:n1, n1:] = phi != 0
    mask[n1:, :n1] = (phi != 0).T
    return _Block(matrix, vectors, sigma), mask


def couple_blocks(psi1, psi2, b, rng):
    """
    Return ``([[Psi1, Phi], [Phi^T, Psi2]], mask)`` where ``mask`` marks the
    support of ``Phi``.

    Raises ``RuntimeError`` if the coupled matrix is not positive definite,
    which the bound ``|xi0| <= 0.8`` rules out.
    """
    blocks = []
    for psi in (psi1, psi2):
        psi = np.asarray(psi, dtype=float)
        sigma, vectors = np.linalg.eigh(psi)
        blocks.append(_Block(psi, vectors, sigma))
    coupled, mask = _couple(blocks[0], blocks[1], b, rng)
    return coupled.matrix, mask


def sample_gaussian(precision, n, rng):
    """
    ``n`` draws from ``N(0, precision^-1)`` through the Cholesky factor of
    the covariance.
    """
    precision = np.asarray(precision, dtype=float)
    d = precision.shape[0]
    check_positive_definite(precision, 'precision')
    covariance = linalg.cho_solve(linalg.cho_factor(precision), np.eye(d))
    factor = np.linalg.cholesky((covariance + covariance.T) / 2)
    samples = rng.standard_normal((n, d)) @ factor.T
    return Dataset(samples)


def inject_swap(precision, j, k):
    """
    Exchange the roles of variables ``j`` and ``k``.
    """
    order = np.arange(precision.shape[0])
    order[[j, k]] = order[[k, j]]
    return np.asarray(precision)[np.ix_(order, order)]


def _build(config, block_density, attempt):
    sizes = [len(chunk) for chunk in
             np.array_split(np.arange(config.d), config.a)]
    rng = make_rng(config.seed, attempt, BLOCK_STREAM)
    blocks = [_sparse_block(size, block_density, config.eig_floor, rng)
              for size in sizes]
    common = linalg.block_diag(*[block.matrix for block in blocks])
    precisions = []
    for i in range(config.N):
        rng = make_rng(config.seed, attempt, COUPLING_STREAM, i)
        coupled = blocks[0]
        for block in blocks[1:]:
            coupled, _ = _couple(coupled, block, config.b, rng)
        precisions.append(coupled.matrix)
    return common, np.stack(precisions)


def generate_family(config):
    """
    Build ``N`` precisions that agree bitwise on the block-diagonal common
    part, then draw ``n_per_dataset`` samples from each.

    The within-block density is calibrated over a few deterministic attempts
    so the mean density of the family approaches ``target_density``; the
    closest attempt is kept.
    """
    pairs = config.d * (config.d - 1) / 2
    sizes = [len(chunk) for chunk in
             np.array_split(np.arange(config.d), config.a)]
    within = sum(size * (size - 1) / 2 for size in sizes)
    target = config.target_density
    block_density = min(target * pairs / within, 0.95) if within else 0.0
    best = None
    for attempt in range(CALIBRATION_ATTEMPTS):
        common, precisions = _build(config, block_density, attempt)
        achieved = estimate_density(precisions, tol=0.0)
        if best is None or abs(achieved - target) < abs(best[0] - target):
            best = (achieved, block_density, attempt, common, precisions)
        if not within or not achieved or \
                abs(achieved - target) <= 0.02 * target:
            break
        block_density = min(max(block_density * target / achieved, 0.01),
                            0.95)
    achieved, block_density, attempt, common, precisions = best

    warning = None
    if pairs and abs(achieved - target) > DENSITY_SLACK * target:
        warning = ('Mean density {0:.3f} misses the target {1:.3f}.'
                   .format(achieved, target))
        logger.warning(warning)
    for precision in precisions:
        check_positive_definite(precision, 'generated precision')
    datasets = tuple(
        sample_gaussian(precision, config.n_per_dataset,
                        make_rng(config.seed, SAMPLE_STREAM, i))
        for i, precision in enumerate(precisions))
    meta = {
        'config': config.as_dict(),
        'rng': RNG_ALGORITHM,
        'block_density': block_density,
        'calibration_attempt': attempt,
        'mean_density': achieved,
        'densities': [estimate_density(precision[None], tol=0.0)
                      for precision in precisions],
        'density_warning': warning,
    }
    return SyntheticFamily(precisions, common != 0, datasets, meta)
