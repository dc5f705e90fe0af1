import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from fraclod.sparse_linalg import (NotPSDError, NotSPDError, SaddleFactor, SaddleSystem, SingularPatchError,
                                   as_csr, check_csr, energy_norm, estimate_eoc, independent_rows,
                                   is_symmetric, solve_saddle, solve_spd, spmv)


def random_spd(n, seed):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=min(1.0, 5.0 / n), random_state=rng)
    A = A + A.T
    return as_csr(A + sp.diags(np.asarray(abs(A).sum(axis=1)).ravel() + 1.0))


# ---------------------------------------------------------------- spmv

def test_spmv_identity():
    assert np.array_equal(spmv(sp.identity(3, format="csr"), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_spmv_zero_matrix():
    assert np.array_equal(spmv(sp.csr_matrix((3, 3)), [4.0, -1.0, 2.0]), np.zeros(3))


def test_spmv_hand_example():
    assert np.array_equal(spmv(sp.csr_matrix([[2.0, 1.0], [1.0, 3.0]]), [1.0, 1.0]), [3.0, 4.0])


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        spmv(sp.identity(3, format="csr"), np.ones(2))


@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_spmv_bitwise_deterministic(n, seed):
    A = random_spd(n, seed)
    x = np.random.default_rng(seed).standard_normal(n)
    assert spmv(A, x).tobytes() == spmv(A.copy(), x.copy()).tobytes()


# ---------------------------------------------------------------- CSR structure

@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_as_csr_invariants(n, seed):
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, n, 3 * n)
    cols = rng.integers(0, n, 3 * n)
    A = as_csr(sp.coo_matrix((rng.standard_normal(3 * n), (rows, cols)), shape=(n, n)))
    check_csr(A)
    assert A.indptr[-1] == A.indices.size


def test_check_csr_rejects_unsorted_columns():
    A = sp.csr_matrix((np.ones(2), np.array([1, 0]), np.array([0, 2])), shape=(1, 2))
    with pytest.raises(ValueError, match="strictly increasing"):
        check_csr(A)


def test_is_symmetric():
    assert is_symmetric(sp.csr_matrix([[2.0, 1.0], [1.0, 3.0]]))
    assert not is_symmetric(sp.csr_matrix([[2.0, 1.0], [0.0, 3.0]]))


# ---------------------------------------------------------------- SPD solves

def test_solve_spd_identity():
    b = np.array([1.0, -2.0, 5.0])
    assert np.allclose(solve_spd(sp.identity(3, format="csr"), b), b, rtol=0, atol=1e-15)


def test_solve_spd_hand_example():
    x = solve_spd(sp.csr_matrix([[2.0, 1.0], [1.0, 3.0]]), np.array([3.0, 4.0]))
    assert np.allclose(x, [1.0, 1.0], rtol=0, atol=1e-14)


def test_solve_spd_laplacian_1d():
    A = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(3, 3), format="csr")
    assert np.allclose(solve_spd(A, np.ones(3)), [1.5, 2.0, 1.5], rtol=0, atol=1e-14)


def test_solve_spd_zero_rhs():
    assert np.array_equal(solve_spd(sp.identity(4, format="csr"), np.zeros(4)), np.zeros(4))


def test_solve_spd_rejects_indefinite():
    with pytest.raises(NotSPDError, match="not SPD"):
        solve_spd(sp.csr_matrix([[1.0, 0.0], [0.0, -1.0]]), np.ones(2))


@given(st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_solve_spd_residual(n, seed):
    A = random_spd(n, seed)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    x = solve_spd(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


# ---------------------------------------------------------------- saddle solves

def test_saddle_hand_example():
    w, mu = solve_saddle(SaddleSystem(sp.identity(2, format="csr"), sp.csr_matrix([[1.0, 0.0]]),
                                      np.array([1.0, 1.0]), np.array([0.0])))
    assert np.allclose(w, [0.0, 1.0], atol=1e-14)
    assert np.allclose(mu, [1.0], atol=1e-14)


def test_saddle_without_constraints_is_spd_solve():
    K = random_spd(10, 3)
    f = np.arange(10.0)
    w, mu = solve_saddle(SaddleSystem(K, sp.csr_matrix((0, 10)), f, np.zeros(0)))
    assert mu.size == 0
    assert np.allclose(w, solve_spd(K, f), rtol=1e-12, atol=1e-14)


def test_saddle_homogeneous():
    w, mu = solve_saddle(SaddleSystem(random_spd(5, 1), sp.csr_matrix(np.ones((2, 5))), np.zeros(5), np.zeros(2)))
    assert not np.any(w) and not np.any(mu)


def test_saddle_drops_zero_and_dependent_rows():
    K = random_spd(6, 2)
    C = sp.csr_matrix(np.array([[1.0, 1, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0], [2.0, 2, 0, 0, 0, 0], [0, 0, 1, 0, 0, 1]]))
    fac = SaddleFactor(K, C)
    assert list(fac.kept) == [0, 3]
    f = np.arange(6.0)
    w, mu = fac.solve(f)
    assert np.abs(C @ w).max() <= 1e-12
    assert np.allclose(K @ w + C.T @ mu, f, atol=1e-10)


def test_saddle_inconsistent_dependent_rows():
    K = sp.identity(3, format="csr")
    C = sp.csr_matrix(np.array([[1.0, 0, 0], [2.0, 0, 0]]))
    with pytest.raises(SingularPatchError, match="singular patch problem"):
        SaddleFactor(K, C, name="T7").solve(np.ones(3), np.array([1.0, 0.0]))


@pytest.mark.parametrize("method", ["schur", "lu"])
@given(st.integers(4, 80), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_saddle_residuals(method, n, m, seed):
    rng = np.random.default_rng(seed)
    K = random_spd(n, seed)
    C = sp.csr_matrix(rng.standard_normal((min(m, n - 1), n)))
    f = rng.standard_normal(n)
    g = rng.standard_normal(C.shape[0])
    w, mu = SaddleFactor(K, C, method=method).solve(f, g)
    assert np.abs(C @ w - g).max() <= 1e-9
    r = K @ w + C.T @ mu - f
    assert np.linalg.norm(r) <= 1e-9 * max(np.linalg.norm(f), 1.0)


def test_saddle_methods_agree():
    rng = np.random.default_rng(0)
    K = random_spd(30, 5)
    C = sp.csr_matrix(rng.standard_normal((4, 30)))
    f = rng.standard_normal((30, 3))
    w1, mu1 = SaddleFactor(K, C, method="schur").solve(f)
    w2, mu2 = SaddleFactor(K, C, method="lu").solve(f)
    assert np.allclose(w1, w2, atol=1e-12)
    assert np.allclose(mu1, mu2, atol=1e-10)


def test_independent_rows():
    C = np.array([[1.0, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1]])
    kept = independent_rows(C)
    assert kept.size == 3
    assert np.linalg.matrix_rank(C[kept]) == 3


# ---------------------------------------------------------------- norms and rates

def test_energy_norm_examples():
    assert energy_norm(sp.identity(2, format="csr"), [3.0, 4.0]) == pytest.approx(5.0, abs=1e-15)
    assert energy_norm(sp.identity(2, format="csr"), [0.0, 0.0]) == 0.0
    assert energy_norm(sp.diags([2.0, 2.0]), [1.0, 1.0]) == pytest.approx(2.0, abs=1e-15)


def test_energy_norm_rejects_negative():
    with pytest.raises(NotPSDError, match="not PSD"):
        energy_norm(sp.diags([-1.0, 1.0]), [1.0, 0.0])


def test_energy_norm_clamps_roundoff():
    assert energy_norm(sp.diags([-1e-14, 1.0]), [1.0, 0.0]) == 0.0


@given(st.floats(-1e3, 1e3, allow_nan=False), st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_energy_norm_homogeneous(alpha, n, seed):
    A = random_spd(n, seed)
    v = np.random.default_rng(seed).standard_normal(n)
    assert energy_norm(A, alpha * v) == pytest.approx(abs(alpha) * energy_norm(A, v), rel=1e-12, abs=1e-300)


def test_estimate_eoc_examples():
    assert np.allclose(estimate_eoc([0.4, 0.2], [0.2, 0.1]), [1.0])
    assert np.allclose(estimate_eoc([0.4, 0.1], [0.2, 0.1]), [2.0])
    assert np.allclose(estimate_eoc([1e-1, 2.5e-2, 6.25e-3], [1.0, 0.5, 0.25]), [2.0, 2.0])


@pytest.mark.parametrize("errors", [[0.1, 0.0], [0.1, -0.2]])
def test_estimate_eoc_rejects_nonpositive(errors):
    with pytest.raises(ValueError, match="positive"):
        estimate_eoc(errors, [0.2, 0.1])
