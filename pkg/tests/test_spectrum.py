import numpy as np
import pytest

from tests.conftest import random_spd
from warpgraph.engine.errors import NotSPD
from warpgraph.engine.solver import (
    block_jacobi,
    condition_number,
    exact_inverse_factor,
    from_factor,
    lanczos_extremes,
)


def test_condition_number_of_a_diagonal_matrix():
    A = np.diag(np.arange(1.0, 13.0))
    estimate = condition_number(A)
    assert estimate.converged
    assert estimate.lambda_min == pytest.approx(1.0, rel=1e-4)
    assert estimate.lambda_max == pytest.approx(12.0, rel=1e-4)
    assert estimate.kappa == pytest.approx(12.0, rel=1e-4)


def test_matches_dense_eigenvalues(spd_system):
    A, _ = spd_system
    eigs = np.linalg.eigvalsh(A)
    assert condition_number(A).kappa == pytest.approx(eigs[-1] / eigs[0], rel=1e-4)


def test_perfect_preconditioner_has_unit_condition_number(spd_system):
    A, _ = spd_system
    M = from_factor("dense", exact_inverse_factor(A))
    estimate = condition_number(A, M)
    assert estimate.kappa == pytest.approx(1.0, abs=1e-6)


def test_block_jacobi_fixes_bad_block_scaling(rng):
    scales = np.repeat(10.0 ** np.arange(4), 6)
    A = random_spd(rng, 24, spread=0.5) * np.outer(scales, scales)
    plain = condition_number(A).kappa
    preconditioned = condition_number(A, block_jacobi(A)).kappa
    assert plain > 1e4
    assert preconditioned < plain / 100


def test_estimate_is_deterministic_per_seed(spd_system):
    A, _ = spd_system
    assert condition_number(A, seed=5).kappa == condition_number(A, seed=5).kappa


def test_indefinite_inner_product_is_rejected():
    with pytest.raises(NotSPD):
        lanczos_extremes(lambda v, bv: v, 6, apply_inner=lambda v: -v)
