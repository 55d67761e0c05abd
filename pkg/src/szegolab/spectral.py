"""Functional calculus: spectral route and the resolvent-integral route.

``apply_scalar_function`` is the direct route through the eigendecomposition.
``hs_apply`` evaluates the same operator function as a two-dimensional
quadrature of resolvents against the d-bar derivative of a quasi-analytic
extension, built from a Taylor sum with a smooth cutoff in the imaginary
direction.  The two routes are kept algorithmically independent (the
quadrature solves shifted linear systems and never touches eigenvectors), so
one can serve as an oracle for the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from numpy.polynomial import Polynomial

from .errors import ConfigError, NumericError, QuadratureError
from .lattices import HermitianOperator, LatticeBox

# ---------------------------------------------------------------------------
# scalar functions with derivative data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarFunction:
    """Real scalar function with optional derivatives, support and envelope.

    Built-ins: ``poly``, ``bump`` (compactly supported piecewise-polynomial
    bump of prescribed smoothness class), ``indicator``, ``entire`` (truncated
    power series).  A declared growth envelope ``|h(x)| <= C |x|^gamma`` is
    verified by sampling at construction time.
    """

    form: str
    eval_fn: Callable = field(repr=False)
    deriv_fn: Optional[Callable] = field(default=None, repr=False)  # order -> callable
    support: Optional[Tuple[float, float]] = None
    smoothness: Optional[int] = None  # C^k class; None means C^infinity or none
    envelope: Optional[Tuple[float, float]] = None  # (C_h, gamma_h)
    is_identity: bool = False
    params: Tuple = ()

    def __post_init__(self):
        if self.envelope is not None:
            c_h, gamma_h = self.envelope
            lo, hi = self.support if self.support else (-1.0, 1.0)
            xs = np.linspace(lo, hi, 1000)
            vals = np.abs(self(xs))
            bound = c_h * np.abs(xs) ** gamma_h
            if np.any(vals > bound + 1e-12 * max(1.0, vals.max())):
                raise ConfigError("declared envelope (C_h, gamma_h) violated on samples")

    def __call__(self, x):
        return self.eval_fn(np.asarray(x, dtype=float))

    def derivative(self, order: int) -> Callable:
        if order == 0:
            return self.eval_fn
        if self.deriv_fn is None:
            raise ConfigError(f"{self.form} has no derivatives")
        return self.deriv_fn(order)

    @property
    def value_at_zero(self) -> float:
        return float(self(0.0))

    # -- built-ins ----------------------------------------------------------

    @staticmethod
    def poly(coeffs, envelope=None, support=None) -> "ScalarFunction":
        p = Polynomial(list(coeffs))
        is_id = list(p.coef) == [0.0, 1.0]

        def deriv(order):
            q = p.deriv(order)
            return lambda x: q(np.asarray(x, dtype=float))

        return ScalarFunction("poly", lambda x: p(x), deriv, support=support,
                              smoothness=None, envelope=envelope,
                              is_identity=is_id, params=tuple(float(c) for c in coeffs))

    @staticmethod
    def entire(series, support=None) -> "ScalarFunction":
        f = ScalarFunction.poly(series, support=support)
        return ScalarFunction("entire", f.eval_fn, f.deriv_fn, support=support,
                              params=tuple(float(c) for c in series))

    @staticmethod
    def identity() -> "ScalarFunction":
        return ScalarFunction.poly((0.0, 1.0))

    @staticmethod
    def zero() -> "ScalarFunction":
        return ScalarFunction.poly((0.0,))

    @staticmethod
    def bump(center: float, width: float, smoothness: int) -> "ScalarFunction":
        """Bump ``(1 - t^2)^(k+1)`` on ``|t| <= 1``, ``t = (x-center)/(width/2)``.

        The power k+1 makes the function exactly of class C^k across the
        support edges; all derivatives are evaluated from the exact polynomial
        piece, one-sided at the seam.
        """
        if width <= 0 or smoothness < 0:
            raise ConfigError("bump needs width > 0 and smoothness >= 0")
        half = width / 2.0
        p = Polynomial([1.0, 0.0, -1.0]) ** (smoothness + 1)

        def make(q, scale):
            def f(x):
                t = (np.asarray(x, dtype=float) - center) / half
                out = np.zeros_like(t)
                inside = np.abs(t) <= 1.0
                out[inside] = q(t[inside]) * scale
                return out
            return f

        def deriv(order):
            return make(p.deriv(order), half ** (-order))

        return ScalarFunction("bump", make(p, 1.0), deriv,
                              support=(center - half, center + half),
                              smoothness=smoothness,
                              params=(float(center), float(width), int(smoothness)))

    @staticmethod
    def indicator(a: float, b: float) -> "ScalarFunction":
        lo, hi = float(a), float(b)

        def f(x):
            x = np.asarray(x, dtype=float)
            return ((x >= lo) & (x <= hi)).astype(float)

        sup = (lo if math.isfinite(lo) else -1e30, hi if math.isfinite(hi) else 1e30)
        return ScalarFunction("indicator", f, None, support=sup, params=(lo, hi))

    @staticmethod
    def compose_poly(outer: "ScalarFunction", inner: "ScalarFunction") -> "ScalarFunction":
        """Polynomial composition outer(inner(x)) for polynomial built-ins."""
        if outer.form not in ("poly", "entire") or inner.form not in ("poly", "entire"):
            raise ConfigError("compose_poly needs polynomial built-ins")
        po = Polynomial(list(outer.params))
        pi = Polynomial(list(inner.params))
        return ScalarFunction.poly((po(pi)).coef)


# ---------------------------------------------------------------------------
# spectral route
# ---------------------------------------------------------------------------

@dataclass
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    box: LatticeBox
    label: str = ""


def spectral_decompose(op: HermitianOperator) -> SpectralDecomposition:
    """Eigendecomposition with ascending eigenvalues."""
    try:
        w, u = np.linalg.eigh(op.matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed on {op.label!r}: {exc}") from exc
    return SpectralDecomposition(w, u, op.box, op.label)


def apply_scalar_function(dec: SpectralDecomposition, f: ScalarFunction) -> HermitianOperator:
    """U f(lambda) U^dagger; Hermitian whenever f is real on the spectrum."""
    vals = np.asarray(f(dec.eigenvalues))
    if not np.all(np.isfinite(vals)):
        raise NumericError("function undefined (non-finite) at an eigenvalue")
    u = dec.eigenvectors
    m = (u * vals[None, :]) @ u.conj().T
    return HermitianOperator(dec.box, m, label=f"{f.form}({dec.label})")


def matrix_function(op: HermitianOperator, f: ScalarFunction) -> HermitianOperator:
    return apply_scalar_function(spectral_decompose(op), f)


def resolvent(op: HermitianOperator, z: complex) -> np.ndarray:
    """(M - z)^(-1) through the eigendecomposition."""
    dec = spectral_decompose(op)
    gap = np.min(np.abs(dec.eigenvalues - z))
    if gap < 1e-12:
        raise NumericError(f"z={z} within 1e-12 of the spectrum")
    u = dec.eigenvectors
    return (u * (1.0 / (dec.eigenvalues - z))[None, :]) @ u.conj().T


# ---------------------------------------------------------------------------
# quasi-analytic extension
# ---------------------------------------------------------------------------

def _smoothstep(order: int) -> Polynomial:
    """Polynomial S with S(0)=0, S(1)=1 and C^order matching at both ends."""
    n = order
    coeffs = np.zeros(2 * n + 2)
    for k in range(n + 1):
        coeffs[n + 1 + k] = math.comb(n + k, k) * math.comb(2 * n + 1, n - k) * (-1) ** k
    return Polynomial(coeffs)


@dataclass
class QuasiAnalyticExtension:
    """d-bar data of the Taylor-sum extension of a compactly supported C^n f.

    The extension is ``ftilde(x+iy) = [sum_{r<=n} f^(r)(x) (iy)^r / r!] tau(y)``
    with ``tau`` an even polynomial smoothstep cutoff, 1 for |y| <= 1/2 and 0
    for |y| >= 1.  ``omega = (d_x + i d_y) ftilde`` vanishes to order n-1 at
    the real axis; the constant in ``|omega| <= C |y|^(n-1)`` is certified on
    a grid and reported, not derived symbolically.
    """

    f: ScalarFunction
    order: int
    x_support: Tuple[float, float]
    bound_constant: float = 0.0

    def tau(self, y):
        y = np.abs(np.atleast_1d(np.asarray(y, dtype=float)))
        out = np.zeros_like(y)
        out[y <= 0.5] = 1.0
        mid = (y > 0.5) & (y < 1.0)
        out[mid] = self._step(2.0 * (1.0 - y[mid]))
        return out

    def tau_prime(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        ay = np.abs(y)
        out = np.zeros_like(ay)
        mid = (ay > 0.5) & (ay < 1.0)
        out[mid] = self._step_d(2.0 * (1.0 - ay[mid])) * (-2.0) * np.sign(y[mid])
        return out

    def __post_init__(self):
        step = _smoothstep(self.order + 2)
        object.__setattr__(self, "_step", step)
        object.__setattr__(self, "_step_d", step.deriv(1))

    def omega(self, x, y) -> np.ndarray:
        """(d_x + i d_y) ftilde on a broadcastable (x, y) grid."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n = self.order
        iy = 1j * y
        taylor = np.zeros(np.broadcast(x, y).shape, dtype=complex)
        for r in range(n + 1):
            taylor = taylor + self.f.derivative(r)(x) * iy ** r / math.factorial(r)
        lead = self.f.derivative(n + 1)(x) * iy ** n / math.factorial(n)
        return lead * self.tau(y) + 1j * taylor * self.tau_prime(y)

    def certify(self, nx: int = 200, ny: int = 200) -> float:
        """Grid maximum of |omega| / |y|^(n-1); stored and returned."""
        xs = np.linspace(self.x_support[0], self.x_support[1], nx)
        ys = np.linspace(1e-6, 1.0, ny)
        w = self.omega(xs[None, :], ys[:, None])
        c = float(np.max(np.abs(w) / np.abs(ys[:, None]) ** (self.order - 1)))
        self.bound_constant = c
        return c


def hs_extension(f: ScalarFunction, n: int) -> QuasiAnalyticExtension:
    """Quasi-analytic extension data for a compactly supported C^n function."""
    if n < 2:
        raise ConfigError("extension order n must be >= 2")
    if f.support is None or f.support[0] < -1e29 or f.support[1] > 1e29:
        raise ConfigError("quasi-analytic extension needs compact support")
    try:
        for r in range(n + 2):
            f.derivative(r)
    except ConfigError as exc:
        raise ConfigError(f"derivatives unavailable to order {n}: {exc}") from exc
    ext = QuasiAnalyticExtension(f, n, (f.support[0] - 1.0, f.support[1] + 1.0))
    ext.certify()
    return ext


# ---------------------------------------------------------------------------
# resolvent-integral route
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureGrid:
    nx: int = 481
    ny: int = 241
    y_min: float = 1e-3

    def halved(self) -> "QuadratureGrid":
        return QuadratureGrid(max(self.nx // 2, 9), max(self.ny // 2, 9), self.y_min)


DEFAULT_GRID = QuadratureGrid()


def _trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    w = np.zeros_like(nodes)
    if nodes.size == 1:
        return w
    d = np.diff(nodes)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def _hs_quadrature(matrix: np.ndarray, ext: QuasiAnalyticExtension,
                   grid: QuadratureGrid, chunk: int = 4096) -> np.ndarray:
    n = matrix.shape[0]
    lo, hi = ext.f.support
    xs = np.linspace(lo - 0.25, hi + 0.25, grid.nx)
    ys = np.linspace(grid.y_min, 1.0, grid.ny)
    wx = _trapezoid_weights(xs)
    wy = _trapezoid_weights(ys)
    omega = ext.omega(xs[None, :], ys[:, None])           # (ny, nx)
    weights = (wy[:, None] * wx[None, :]) * omega
    zs = (xs[None, :] + 1j * ys[:, None]).ravel()
    wz = weights.ravel()
    keep = np.abs(wz) > 1e-300
    zs, wz = zs[keep], wz[keep]

    acc = np.zeros((n, n), dtype=complex)
    eye = np.eye(n, dtype=complex)
    for start in range(0, zs.size, chunk):
        zc = zs[start:start + chunk]
        shifted = matrix[None, :, :] - zc[:, None, None] * eye[None, :, :]
        rez = np.linalg.solve(shifted, np.broadcast_to(eye, (zc.size, n, n)))
        acc += np.einsum("k,kij->ij", wz[start:start + chunk], rez)
    # y < 0 half plane contributes the Hermitian adjoint for real f
    return (acc + acc.conj().T) / (2.0 * np.pi)


def hs_apply(op: HermitianOperator, ext: QuasiAnalyticExtension,
             grid: QuadratureGrid = DEFAULT_GRID, rtol: Optional[float] = None
             ) -> HermitianOperator:
    """Operator function as a tensor-trapezoidal integral of resolvents.

    The strip |y| < y_min is excluded; since |omega| <= C |y|^(n-1) and the
    resolvent norm is at most 1/|y| there, the omitted mass is O(y_min^(n-1)).
    With ``rtol`` set, the quadrature is repeated on a halved grid and a
    discrepancy above ``rtol`` raises ``QuadratureError``.
    """
    lo, hi = ext.f.support
    spec = np.linalg.eigvalsh(op.matrix)
    if spec.min() <= ext.x_support[0] or spec.max() >= ext.x_support[1]:
        raise ConfigError("operator spectrum is not inside the extension's x-support")
    result = _hs_quadrature(op.matrix, ext, grid)
    if rtol is not None:
        coarse = _hs_quadrature(op.matrix, ext, grid.halved())
        err = np.abs(result - coarse).max()
        if err > rtol:
            raise QuadratureError(
                f"grid too coarse: refinement discrepancy {err:.3e} > rtol {rtol:.3e}")
    if np.abs(result.imag).max() <= 1e-13 * max(1.0, np.abs(result).max()):
        result = result.real.copy()
    return HermitianOperator(op.box, result, label=f"hs[{ext.f.form}]({op.label})")


def hs_discrepancy(op: HermitianOperator, ext: QuasiAnalyticExtension,
                   grid: QuadratureGrid = DEFAULT_GRID) -> float:
    """Operator-norm gap between the quadrature route and the spectral route."""
    via_hs = hs_apply(op, ext, grid)
    via_spec = matrix_function(op, ext.f)
    return float(np.linalg.norm(via_hs.matrix - via_spec.matrix, ord=2))
