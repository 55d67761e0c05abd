import numpy as np
import pytest

from szegolab.errors import ConfigError, NumericError, QuadratureError
from szegolab.lattices import EnsembleSpec, HermitianOperator, LatticeBox, build_operator
from szegolab.spectral import (DEFAULT_GRID, QuadratureGrid, ScalarFunction,
                               apply_scalar_function, hs_apply, hs_discrepancy,
                               hs_extension, matrix_function, resolvent,
                               spectral_decompose)
from tests.conftest import rand_hermitian


def test_decompose_sorts_eigenvalues():
    dec = spectral_decompose(HermitianOperator.from_matrix(np.diag([3.0, 1.0, 2.0])))
    assert np.allclose(dec.eigenvalues, [1.0, 2.0, 3.0], atol=1e-14)


def test_decompose_identity():
    dec = spectral_decompose(HermitianOperator.from_matrix(np.eye(5)))
    assert np.allclose(dec.eigenvalues, np.ones(5), atol=1e-14)
    u = dec.eigenvectors
    assert np.max(np.abs(u.conj().T @ u - np.eye(5))) < 1e-10


def test_decompose_free_chain_matches_closed_form():
    op = build_operator(EnsembleSpec("free"), LatticeBox.interval(1, 8), 0)
    dec = spectral_decompose(op)
    expected = np.sort(2.0 - 2.0 * np.cos(np.arange(1, 9) * np.pi / 9))
    assert np.max(np.abs(dec.eigenvalues - expected)) < 1e-10
    recon = (dec.eigenvectors * dec.eigenvalues[None, :]) @ dec.eigenvectors.conj().T
    assert np.max(np.abs(recon - op.matrix)) < 1e-9 * np.abs(op.matrix).max()


def test_apply_identity_reconstructs(rng):
    op = HermitianOperator.from_matrix(rand_hermitian(rng, 7, complex_entries=True))
    out = matrix_function(op, ScalarFunction.identity())
    assert np.max(np.abs(out.matrix - op.matrix)) < 1e-9


def test_apply_indicator_diag():
    dec = spectral_decompose(HermitianOperator.from_matrix(np.diag([1.0, 2.0, 3.0])))
    out = apply_scalar_function(dec, ScalarFunction.indicator(-np.inf, 2.0))
    assert np.allclose(out.matrix, np.diag([1.0, 1.0, 0.0]), atol=1e-12)


def test_apply_square_on_involution():
    op = HermitianOperator.from_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    out = matrix_function(op, ScalarFunction.poly((0.0, 0.0, 1.0)))
    assert np.allclose(out.matrix, np.eye(2), atol=1e-12)


def test_spectral_mapping(rng):
    op = HermitianOperator.from_matrix(rand_hermitian(rng, 9))
    f = ScalarFunction.poly((0.5, -1.0, 2.0))
    lam = np.linalg.eigvalsh(op.matrix)
    out = matrix_function(op, f)
    got = np.sort(np.linalg.eigvalsh(out.matrix))
    assert np.max(np.abs(got - np.sort(f(lam)))) < 1e-9


def test_composition_of_polynomials(rng):
    op = HermitianOperator.from_matrix(rand_hermitian(rng, 6))
    inner = ScalarFunction.poly((0.0, 0.0, 1.0))          # x^2
    outer = ScalarFunction.poly((1.0, 2.0))               # 1 + 2x
    combined = ScalarFunction.compose_poly(outer, inner)  # 1 + 2x^2
    oneshot = matrix_function(op, combined)
    twostep = matrix_function(matrix_function(op, inner), outer)
    assert np.max(np.abs(oneshot.matrix - twostep.matrix)) < 1e-9


def test_resolvent_scalar_cases():
    op = HermitianOperator.from_matrix(np.zeros((1, 1)))
    assert abs(resolvent(op, 1j)[0, 0] - 1j) < 1e-14
    op1 = HermitianOperator.from_matrix(np.eye(1))
    assert abs(resolvent(op1, 0.0)[0, 0] - 1.0) < 1e-14


def test_resolvent_norm_identity(rng):
    op = HermitianOperator.from_matrix(rand_hermitian(rng, 6, complex_entries=True))
    lam = np.linalg.eigvalsh(op.matrix)
    z = lam.max() + 1.0
    r = resolvent(op, z)
    norm = np.linalg.norm(r, ord=2)
    dist = np.min(np.abs(lam - z))
    assert abs(norm - 1.0 / dist) <= 1e-8 * (1.0 / dist)


def test_resolvent_rejects_spectrum_point():
    op = HermitianOperator.from_matrix(np.diag([1.0, 2.0]))
    with pytest.raises(NumericError):
        resolvent(op, 1.0 + 1e-14)


def test_envelope_verified_on_construction():
    ScalarFunction.poly((0.0, 1.0), envelope=(1.0, 1.0), support=(-1.0, 1.0))
    with pytest.raises(ConfigError):
        ScalarFunction.poly((0.0, 3.0), envelope=(1.0, 1.0), support=(-1.0, 1.0))


def test_bump_smoothness_class():
    # (1 - t^2)^(k+1) has vanishing derivatives up to order k at the seam
    f = ScalarFunction.bump(0.0, 2.0, 4)
    for r in range(5):
        vals = f.derivative(r)(np.array([-1.0 + 1e-9, 1.0 - 1e-9]))
        assert np.max(np.abs(vals)) < 1e-5   # vanishing to order 4 at the seam
    assert f(np.array([0.0]))[0] == 1.0
    assert f(np.array([2.0]))[0] == 0.0


def test_indicator_has_no_derivatives():
    f = ScalarFunction.indicator(0.0, 1.0)
    with pytest.raises(ConfigError):
        f.derivative(1)


# ---------------------------------------------------------------------------
# quasi-analytic extension
# ---------------------------------------------------------------------------

def test_hs_extension_zero_function():
    z = ScalarFunction.bump(0.0, 2.0, 4)
    zero = ScalarFunction.poly((0.0,), support=(-1.0, 1.0))
    ext = hs_extension(zero, 2)
    xs = np.linspace(-2, 2, 21)[None, :]
    ys = np.linspace(0.01, 1, 7)[:, None]
    assert np.max(np.abs(ext.omega(xs, ys))) == 0.0


def test_hs_extension_bound_reported_and_finite():
    f = ScalarFunction.bump(0.0, 2.0, 4)
    ext = hs_extension(f, 2)
    assert np.isfinite(ext.bound_constant) and ext.bound_constant > 0
    # |omega| <= C |y|^(n-1) re-checked on a shifted grid
    xs = np.linspace(*ext.x_support, 173)[None, :]
    ys = np.linspace(2e-3, 0.97, 89)[:, None]
    w = ext.omega(xs, ys)
    assert np.max(np.abs(w) / np.abs(ys) ** (ext.order - 1)) <= ext.bound_constant * 1.05


def test_hs_omega_vanishes_outside_support():
    f = ScalarFunction.bump(1.0, 2.0, 6)
    ext = hs_extension(f, 3)
    xs = np.array([-1.5, -0.5, 2.5, 3.5])[None, :]   # outside supp f = [0, 2]
    ys = np.linspace(0.05, 0.95, 11)[:, None]
    assert np.max(np.abs(ext.omega(xs, ys))) == 0.0


def test_hs_extension_requires_order_two():
    f = ScalarFunction.bump(0.0, 2.0, 6)
    with pytest.raises(ConfigError):
        hs_extension(f, 1)
    with pytest.raises(ConfigError):
        hs_extension(ScalarFunction.indicator(0.0, 1.0), 2)


# ---------------------------------------------------------------------------
# hs_apply against the spectral route
# ---------------------------------------------------------------------------

def test_hs_apply_zero_function_gives_zero():
    zero = ScalarFunction.poly((0.0,), support=(-1.0, 1.0))
    ext = hs_extension(zero, 2)
    op = HermitianOperator.from_matrix(np.diag([0.2, -0.1]))
    out = hs_apply(op, ext, QuadratureGrid(61, 31, 1e-2))
    assert np.max(np.abs(out.matrix)) < 1e-14


def test_hs_apply_scalar_oracle():
    f = ScalarFunction.bump(0.0, 2.0, 6)
    ext = hs_extension(f, 4)
    for lam in (0.0, 0.37, -0.61):
        op = HermitianOperator.from_matrix(np.array([[lam]]))
        got = hs_apply(op, ext).matrix[0, 0]
        assert abs(got - float(f(lam))) <= 1e-6


def test_hs_apply_matches_spectral_route(rng):
    f = ScalarFunction.bump(0.0, 2.0, 6)
    ext = hs_extension(f, 4)
    m = rand_hermitian(rng, 8, complex_entries=True)
    m *= 0.8 / np.abs(np.linalg.eigvalsh(m)).max()
    op = HermitianOperator.from_matrix(m)
    assert hs_discrepancy(op, ext) <= 1e-5


def test_hs_refinement_near_monotone(rng):
    f = ScalarFunction.bump(0.0, 2.0, 6)
    ext = hs_extension(f, 4)
    m = rand_hermitian(rng, 6)
    m *= 0.7 / np.abs(np.linalg.eigvalsh(m)).max()
    op = HermitianOperator.from_matrix(m)
    grids = [QuadratureGrid(61, 31, 1e-3), QuadratureGrid(121, 61, 1e-3),
             QuadratureGrid(241, 121, 1e-3)]
    errs = [hs_discrepancy(op, ext, grid) for grid in grids]
    for a, b in zip(errs, errs[1:]):
        assert b <= 4.0 * a + 1e-12     # factor-4 non-monotonicity slack


def test_hs_apply_rejects_spectrum_outside_support():
    f = ScalarFunction.bump(0.0, 1.0, 4)
    ext = hs_extension(f, 2)
    op = HermitianOperator.from_matrix(np.diag([5.0]))
    with pytest.raises(ConfigError):
        hs_apply(op, ext)


def test_hs_apply_coarse_grid_detected():
    f = ScalarFunction.bump(0.0, 2.0, 6)
    ext = hs_extension(f, 4)
    op = HermitianOperator.from_matrix(np.array([[0.3]]))
    with pytest.raises(QuadratureError):
        hs_apply(op, ext, QuadratureGrid(17, 9, 1e-2), rtol=1e-10)
