import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from neurothermo.linalg import ConvergenceError, StructuralError, log_det_lu, sym_eig


def _check_invariants(a, dec):
    n = a.shape[0]
    v, lam = dec.eigenvectors, dec.eigenvalues
    assert np.max(np.abs(v.T @ v - np.eye(n))) < 1e-9
    scale = max(np.max(np.abs(a)), 1e-300)
    assert np.max(np.abs(a @ v - v * lam)) < 1e-8 * scale
    assert np.all(np.diff(lam) <= 0)


def test_identity():
    dec = sym_eig(np.eye(3))
    np.testing.assert_allclose(dec.eigenvalues, [1, 1, 1], atol=1e-15)
    _check_invariants(np.eye(3), dec)


def test_two_by_two():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    dec = sym_eig(a)
    np.testing.assert_allclose(dec.eigenvalues, [3.0, 1.0], atol=1e-14)
    _check_invariants(a, dec)


def test_edge_operator_golden_ratio():
    a = np.array([[2.0, -1.0], [-1.0, 1.0]])
    dec = sym_eig(a)
    np.testing.assert_allclose(dec.eigenvalues, [(3 + 5 ** 0.5) / 2, (3 - 5 ** 0.5) / 2], atol=1e-14)
    assert abs(dec.eigenvalues[0] - 2.6180) < 1e-4 and abs(dec.eigenvalues[1] - 0.3820) < 1e-4


@pytest.mark.parametrize("n", [1, 2, 5, 17, 64, 200])
def test_reconstruction_and_lapack_agreement(n):
    rng = np.random.default_rng(n)
    b = rng.standard_normal((n, n))
    a = (b + b.T) / 2
    dec = sym_eig(a)
    _check_invariants(a, dec)
    assert np.max(np.abs(dec.reconstruct() - a)) < 1e-8
    # independent oracle: LAPACK
    np.testing.assert_allclose(dec.eigenvalues, np.linalg.eigvalsh(a)[::-1], atol=1e-10)


def test_determinant_matches_lu():
    rng = np.random.default_rng(3)
    for n in (3, 10, 40):
        b = rng.standard_normal((n, n))
        a = b @ b.T + n * np.eye(n)
        dec = sym_eig(a)
        sign, logdet = log_det_lu(a)
        assert sign == 1.0
        assert abs(np.sum(np.log(dec.eigenvalues)) - logdet) < 1e-6 * abs(logdet)


def test_repeated_and_degenerate_spectra():
    a = np.diag([5.0, 5.0, 1.0, 1.0, 1.0])
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((5, 5)))
    b = q @ a @ q.T
    dec = sym_eig((b + b.T) / 2)
    np.testing.assert_allclose(dec.eigenvalues, [5, 5, 1, 1, 1], atol=1e-12)
    np.testing.assert_allclose(sym_eig(np.zeros((4, 4))).eigenvalues, 0.0)


def test_structural_errors():
    with pytest.raises(StructuralError):
        sym_eig(np.ones((2, 3)))
    with pytest.raises(StructuralError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(StructuralError):
        sym_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(StructuralError):
        sym_eig(np.ones(3))


def test_tiny_asymmetry_tolerated():
    a = np.array([[2.0, 1.0], [1.0 + 1e-13, 2.0]])
    np.testing.assert_allclose(sym_eig(a).eigenvalues, [3.0, 1.0], atol=1e-12)


def test_convergence_error_carries_residual():
    rng = np.random.default_rng(1)
    b = rng.standard_normal((30, 30))
    with pytest.raises(ConvergenceError) as info:
        sym_eig(b + b.T, max_sweeps=1)
    assert info.value.residual > 0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(-10, 10)))
def test_property_random_symmetric(b):
    a = (b + b.T) / 2
    dec = sym_eig(a)
    _check_invariants(a, dec)
    assert np.max(np.abs(dec.reconstruct() - a)) < 1e-8 * max(1.0, np.max(np.abs(a)))
