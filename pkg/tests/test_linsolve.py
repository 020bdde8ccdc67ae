import numpy as np
import pytest
import scipy.sparse as sp

from semilinear_dpg.linsolve import SingularMatrixError, factor_solve


def test_identity():
    b = np.arange(5.0)
    assert np.array_equal(factor_solve(sp.identity(5), b), b)


def test_two_by_two():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    assert np.allclose(factor_solve(A, [3.0, 5.0]), [0.8, 1.4])


def test_singular_raises():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularMatrixError) as info:
        factor_solve(A, [1.0, 2.0])
    assert isinstance(info.value, np.linalg.LinAlgError)


def test_zero_diagonal_needs_pivoting():
    # symmetric indefinite with zero diagonal entries
    A = sp.csr_matrix(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 2.0], [0.0, 2.0, 1.0]]))
    x = np.array([1.0, -2.0, 0.5])
    assert np.allclose(factor_solve(A, A @ x), x, atol=1e-13)


def test_input_validation():
    with pytest.raises(ValueError):
        factor_solve(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ValueError):
        factor_solve(np.eye(2), np.ones(3))
    with pytest.raises(ValueError):
        factor_solve(np.array([[np.nan, 0.0], [0.0, 1.0]]), np.ones(2))
    assert factor_solve(sp.csr_matrix((0, 0)), np.zeros(0)).shape == (0,)


@pytest.mark.parametrize("n", [10, 200, 2000])
@pytest.mark.parametrize("definite", [True, False])
def test_random_sparse_symmetric(n, definite):
    rng = np.random.default_rng(n + definite)
    R = sp.random(n, n, density=min(1.0, 8.0 / n), random_state=rng.integers(1 << 31))
    S = R + R.T
    shift = abs(S).sum(axis=1).A.ravel() + 1.0
    if not definite:
        shift *= np.where(rng.random(n) < 0.5, -1.0, 1.0)
    A = (S + sp.diags(shift)).tocsr()
    x = rng.normal(size=n)
    got = factor_solve(A, A @ x)
    assert np.linalg.norm(got - x) <= 1e-9 * np.linalg.norm(x)
