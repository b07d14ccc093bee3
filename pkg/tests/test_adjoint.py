import numpy as np
import pytest

from tests.conftest import random_spd
from warpgraph.engine.adjoint import finite_diff_check, solve_adjoint, unrolled_pcg_grad
from warpgraph.engine.errors import DimensionMismatch, NonFinite
from warpgraph.engine.solver import BlockSparseMatrix, block_jacobi, dense_direct_solve, pcg_solve


@pytest.fixture
def small_system(rng):
    A = random_spd(rng, 12, spread=3.0)
    return A, rng.standard_normal(12), rng.standard_normal(12)


def test_adjoint_right_hand_side_gradient(small_system):
    A, b, c = small_system
    x = dense_direct_solve(A, b)
    grads = solve_adjoint(A, x, c)
    np.testing.assert_allclose(grads.grad_b, np.linalg.solve(A, c), rtol=1e-6, atol=1e-9)
    report = finite_diff_check(
        lambda bb: c @ dense_direct_solve(A, bb), b, grads.grad_b, floor=1e-3
    )
    assert report.passed(1e-6)


def test_adjoint_matrix_gradient_on_the_lower_triangle(small_system):
    A, b, c = small_system
    x = dense_direct_solve(A, b)
    grads = solve_adjoint(A, x, c, with_dense=True)
    full = -np.outer(grads.grad_b, x)
    np.testing.assert_allclose(grads.grad_A_dense, full)

    lower = grads.grad_A.toarray()
    assert np.all(np.triu(lower, 1) == 0)
    np.testing.assert_allclose(np.diag(lower), np.diag(full), rtol=1e-12)
    np.testing.assert_allclose(lower[5, 2], full[5, 2] + full[2, 5], rtol=1e-12)

    def f(theta):
        perturbed = A.copy()
        perturbed[5, 2] += theta[0]
        perturbed[2, 5] += theta[0]
        return c @ dense_direct_solve(perturbed, b)

    assert finite_diff_check(f, np.zeros(1), [lower[5, 2]], floor=1e-3).passed(1e-6)


def test_adjoint_follows_the_block_sparse_pattern(small_system):
    A, b, c = small_system
    A = A.copy()
    A[6:, :6] = A[:6, 6:] = 0.0
    block = BlockSparseMatrix.from_dense(A)
    x = dense_direct_solve(A, b)
    grads = solve_adjoint(block, x, c, M=block_jacobi(block))
    assert grads.grad_A.nnz == 2 * 21
    assert grads.grad_A[8, 3] == 0.0


def test_adjoint_shape_checks(small_system):
    A, b, c = small_system
    with pytest.raises(DimensionMismatch):
        solve_adjoint(A, b[:3], c)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_unrolled_gradient_matches_finite_differences(small_system, k):
    A, b, c = small_system
    M = block_jacobi(A)
    grad_b, grad_A = unrolled_pcg_grad(A, b, M, k, c)

    def run(AA, bb):
        x, _ = pcg_solve(AA, bb, M, max_iters=k, tol=0.0)
        return c @ x

    assert finite_diff_check(lambda bb: run(A, bb), b, grad_b, floor=1e-3).passed(1e-5)
    entries = [0, 13, 40, 77, 143]

    def f(theta):
        perturbed = A.copy().ravel()
        perturbed[entries] += theta
        return run(perturbed.reshape(A.shape), b)

    report = finite_diff_check(f, np.zeros(len(entries)), grad_A.ravel()[entries], floor=1e-3)
    assert report.passed(1e-5)


def test_unrolled_gradient_converges_to_the_adjoint(small_system):
    A, b, c = small_system
    x = dense_direct_solve(A, b)
    # finite-precision CG needs more than n steps to settle the free gradient
    grad_b, grad_A = unrolled_pcg_grad(A, b, None, 40, c)
    exact = solve_adjoint(A, x, c, with_dense=True)
    np.testing.assert_allclose(grad_b, exact.grad_b, rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(grad_A, exact.grad_A_dense, rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(
        grad_A + grad_A.T, exact.grad_A_dense + exact.grad_A_dense.T, rtol=1e-5, atol=1e-7
    )


def test_unrolled_zero_right_hand_side(small_system):
    A, _, c = small_system
    grad_b, grad_A = unrolled_pcg_grad(A, np.zeros(12), None, 3, c)
    np.testing.assert_array_equal(grad_b, 0.0)
    np.testing.assert_array_equal(grad_A, 0.0)


def test_unrolled_argument_checks(small_system):
    A, b, c = small_system
    with pytest.raises(DimensionMismatch):
        unrolled_pcg_grad(A, b, None, 0, c)
    with pytest.raises(DimensionMismatch):
        unrolled_pcg_grad(A, b, None, 2, c[:4])


def test_finite_diff_check_on_a_quadratic():
    Q = np.array([[2.0, 1.0], [1.0, 3.0]])
    x0 = np.array([0.3, -0.7])
    report = finite_diff_check(lambda x: 0.5 * x @ Q @ x, x0, Q @ x0)
    assert report.max_rel_error < 1e-6
    np.testing.assert_allclose(report.numeric_grad, Q @ x0, rtol=1e-6)

    wrong = finite_diff_check(lambda x: 0.5 * x @ Q @ x, x0, 2 * Q @ x0)
    assert not wrong.passed(1e-3)

    partial = finite_diff_check(lambda x: 0.5 * x @ Q @ x, x0, Q @ x0, indices=[1])
    assert partial.numeric_grad[0] == 0.0


def test_finite_diff_check_rejects_non_finite_functions():
    with pytest.raises(NonFinite):
        finite_diff_check(lambda x: float("nan"), np.zeros(2), np.zeros(2))
    with pytest.raises(DimensionMismatch):
        finite_diff_check(lambda x: 0.0, np.zeros(2), np.zeros(3))
