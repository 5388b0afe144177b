import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectomo.forward import (
    ForwardOperator,
    apply_adjoint,
    apply_forward,
    assemble_block,
    densities_to_fourier,
    fourier_to_densities,
    fourier_to_measurements,
    khatri_rao,
    measurements_to_fourier,
)
from tests.helpers import crandn, rel


def loop_forward(P, H, A):
    """Literal triple sum over species, depth and plane."""
    Ns, Nx, Nz = P.shape
    Nf, _, Nk, _ = A.shape
    S = np.zeros((Nf, Nx, Nk), complex)
    for f in range(Nf):
        for q in range(Nx):
            for m in range(Nk):
                S[f, q, m] = sum(H[m, s] * np.dot(A[f, q, m], P[s, q]) for s in range(Ns))
    return S


# Khatri-Rao -------------------------------------------------------------------

def test_khatri_rao_example():
    A = np.array([[1, 2], [3, 4]])
    B = np.array([[5, 6, 7], [8, 9, 10]])
    np.testing.assert_array_equal(khatri_rao(A, B),
                                  [[5, 6, 7, 10, 12, 14], [24, 27, 30, 32, 36, 40]])


def test_khatri_rao_ones_is_identity_action():
    B = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(khatri_rao(np.ones((2, 1)), B), B)


def test_khatri_rao_row_mismatch():
    with pytest.raises(ValueError):
        khatri_rao(np.ones((2, 2)), np.ones((3, 2)))


def test_khatri_rao_rejects_vectors():
    with pytest.raises(ValueError):
        khatri_rao(np.ones(2), np.ones((2, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_khatri_rao_rank_bound(rows, a, b, seed):
    rng = np.random.default_rng(seed)
    ra = rng.integers(1, a + 1)
    rb = rng.integers(1, b + 1)
    A = rng.standard_normal((rows, ra)) @ rng.standard_normal((ra, a))
    B = rng.standard_normal((rows, rb)) @ rng.standard_normal((rb, b))
    K = khatri_rao(A, B)
    assert K.shape == (rows, a * b)
    assert np.linalg.matrix_rank(K) <= min(np.linalg.matrix_rank(A) * np.linalg.matrix_rank(B), rows)


# forward operator -----------------------------------------------------------------

def test_forward_matches_loop(small_table, rng):
    Nf, Nx, Nk, Nz = small_table.shape
    H = crandn(rng, Nk, 3)
    P = crandn(rng, 3, Nx, Nz)
    assert rel(apply_forward(P, H, small_table), loop_forward(P, H, small_table.coefficients)) < 1e-13


def test_forward_matches_dense_blocks(small_table, rng):
    Nf, Nx, Nk, Nz = small_table.shape
    H = crandn(rng, Nk, 2)
    P = crandn(rng, 2, Nx, Nz)
    S = apply_forward(P, H, small_table)
    for q in range(Nx):
        expect = assemble_block(q, H, small_table) @ P[:, q].reshape(-1)
        np.testing.assert_allclose(S[:, q].reshape(-1), expect, rtol=1e-12, atol=1e-14)


def test_dense_block_is_khatri_rao(small_table, rng):
    Nf, Nx, Nk, Nz = small_table.shape
    H = crandn(rng, Nk, 2)
    np.testing.assert_array_equal(assemble_block(2, H, small_table),
                                  khatri_rao(np.tile(H, (Nf, 1)), small_table.stacked(2)))


def test_single_species_unit_spectrum_reduces_to_kernel(small_table, rng):
    Nf, Nx, Nk, Nz = small_table.shape
    P = crandn(rng, 1, Nx, Nz)
    S = apply_forward(P, np.ones((Nk, 1)), small_table)
    expect = np.einsum("fqmn,qn->fqm", small_table.coefficients, P[0])
    assert rel(S, expect) < 1e-13


def test_identical_species_add(small_table, rng):
    Nf, Nx, Nk, Nz = small_table.shape
    h = crandn(rng, Nk, 1)
    P = crandn(rng, 2, Nx, Nz)
    a = apply_forward(P, np.hstack([h, h]), small_table)
    b = apply_forward(P.sum(0, keepdims=True), h, small_table)
    assert rel(a, b) < 1e-13


def test_adjoint_identity(small_table, rng):
    Nf, Nx, Nk, Nz = small_table.shape
    H = crandn(rng, Nk, 3)
    P = crandn(rng, 3, Nx, Nz)
    S = crandn(rng, Nf, Nx, Nk)
    lhs = np.vdot(S, apply_forward(P, H, small_table))
    rhs = np.vdot(apply_adjoint(S, H, small_table), P)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_adjoint_matches_dense_hermitian(small_table, rng):
    Nf, Nx, Nk, Nz = small_table.shape
    H = crandn(rng, Nk, 2)
    S = crandn(rng, Nf, Nx, Nk)
    W = apply_adjoint(S, H, small_table)
    for q in (0, 3):
        expect = assemble_block(q, H, small_table).conj().T @ S[:, q].reshape(-1)
        np.testing.assert_allclose(W[:, q].reshape(-1), expect, rtol=1e-12, atol=1e-13)


def test_blocks_do_not_mix(small_table, rng):
    Nf, Nx, Nk, Nz = small_table.shape
    H = crandn(rng, Nk, 2)
    P = np.zeros((2, Nx, Nz), complex)
    P[:, 5] = crandn(rng, 2, Nz)
    S = apply_forward(P, H, small_table)
    others = np.delete(S, 5, axis=1)
    assert np.all(others == 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1),
       st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_superposition(small_table, seed, c):
    rng = np.random.default_rng(seed)
    Nf, Nx, Nk, Nz = small_table.shape
    H = crandn(rng, Nk, 2)
    P1, P2 = crandn(rng, 2, Nx, Nz), crandn(rng, 2, Nx, Nz)
    lhs = apply_forward(P1 + c * P2, H, small_table)
    rhs = apply_forward(P1, H, small_table) + c * apply_forward(P2, H, small_table)
    assert rel(lhs, rhs) < 1e-12


def test_workers_do_not_change_result(small_table, rng):
    Nf, Nx, Nk, Nz = small_table.shape
    H = crandn(rng, Nk, 2)
    P = crandn(rng, 2, Nx, Nz)
    S = crandn(rng, Nf, Nx, Nk)
    for w in (2, 3, 16):
        np.testing.assert_allclose(apply_forward(P, H, small_table, workers=w),
                                   apply_forward(P, H, small_table), rtol=1e-14, atol=0)
        np.testing.assert_allclose(apply_adjoint(S, H, small_table, workers=w),
                                   apply_adjoint(S, H, small_table), rtol=1e-14, atol=0)


def test_zero_density_gives_zero_data(small_table, rng):
    Nf, Nx, Nk, Nz = small_table.shape
    assert np.all(apply_forward(np.zeros((2, Nx, Nz)), crandn(rng, Nk, 2), small_table) == 0)


@pytest.mark.parametrize("Pshape,Hshape", [((2, 8, 15), (16, 2)), ((2, 8, 16), (15, 2)),
                                           ((3, 8, 16), (16, 2))])
def test_forward_shape_errors(small_table, Pshape, Hshape):
    with pytest.raises(ValueError):
        apply_forward(np.zeros(Pshape), np.zeros(Hshape), small_table)


def test_adjoint_shape_error(small_table):
    with pytest.raises(ValueError):
        apply_adjoint(np.zeros((3, 8, 15)), np.zeros((16, 2)), small_table)


def test_block_index_error(small_table):
    with pytest.raises(IndexError):
        assemble_block(8, np.ones((16, 1)), small_table)


def test_norm_estimate_matches_largest_block_norm(small_table, rng):
    Nf, Nx, Nk, Nz = small_table.shape
    op = ForwardOperator(crandn(rng, Nk, 2), small_table)
    exact = op.block_norms().max()
    assert op.norm_estimate(iters=200) == pytest.approx(exact, rel=1e-3)
    assert op.norm_estimate(iters=200) <= exact * (1 + 1e-12)


# DFT conventions ------------------------------------------------------------------

def test_dft_examples():
    x = np.zeros((1, 4, 1))
    x[0, 0, 0] = 1
    np.testing.assert_allclose(measurements_to_fourier(x)[0, :, 0], np.ones(4))
    x = np.ones((1, 4, 1))
    np.testing.assert_allclose(measurements_to_fourier(x)[0, :, 0], [4, 0, 0, 0], atol=1e-15)


def test_dft_rejects_wrong_rank():
    with pytest.raises(ValueError):
        measurements_to_fourier(np.zeros((2, 3)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 9), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3)))
def test_dft_round_trip(x):
    np.testing.assert_allclose(fourier_to_measurements(measurements_to_fourier(x)).real, x,
                               atol=1e-9)
    np.testing.assert_allclose(fourier_to_densities(densities_to_fourier(x)).real, x, atol=1e-9)


def test_real_density_has_conjugate_symmetric_spectrum(rng):
    p = rng.standard_normal((2, 8, 5))
    P = densities_to_fourier(p)
    for q in range(8):
        np.testing.assert_allclose(P[:, q], P[:, (-q) % 8].conj(), atol=1e-12)
