"""Finite boxes on Z^d and Hermitian realizations of ergodic operator ensembles.

Cell convention: lattice site ``s`` stands for the unit cell ``[s, s+1)`` in each
coordinate, so the continuum interval ``[0, L]`` corresponds to the ``L`` sites
``{0, ..., L-1}`` and the slab ``x_i in [0, 1]`` to the single layer ``x_i = 0``.
Reflection of a box about its own center is always a site bijection, which is
what the corner-decomposition machinery in :mod:`szegolab.coefficients` needs.

Disorder is drawn from a counter-based generator keyed on
``(base seed, sample id, absolute site coordinates)``: enlarging a box extends a
sample instead of reshuffling it, and results are reproducible across runs and
worker counts.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError, ModelError

# Dense matrices only; refuse boxes that would not fit in memory.
MAX_SITES = 20_000


# ---------------------------------------------------------------------------
# boxes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeBox:
    """Axis-aligned box ``{lo_1..hi_1} x ... x {lo_d..hi_d}`` of lattice sites.

    Sites are enumerated in row-major order (last coordinate fastest), which
    fixes the bijection between sites and matrix indices ``0..N-1``.
    """

    lo: Tuple[int, ...]
    hi: Tuple[int, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ConfigError("box corners must have equal dimension")
        if not 1 <= len(self.lo) <= 3:
            raise ConfigError(f"dimension {len(self.lo)} not in 1..3")
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ConfigError(f"empty box {self.lo}..{self.hi}")
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(int(v) for v in self.hi))

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def site_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def strides(self) -> Tuple[int, ...]:
        s = []
        acc = 1
        for n in reversed(self.shape):
            s.append(acc)
            acc *= n
        return tuple(reversed(s))

    def sites(self) -> np.ndarray:
        """All sites as an ``(N, d)`` int array in row-major order."""
        return _box_sites(self)

    def index_of(self, site) -> int:
        site = tuple(int(v) for v in site)
        if not self.contains(site):
            raise ConfigError(f"site {site} outside box {self.lo}..{self.hi}")
        return int(sum((s - l) * st for s, l, st in zip(site, self.lo, self.strides)))

    def indices_of(self, coords: np.ndarray) -> np.ndarray:
        """Vectorized row-major index of an ``(N, d)`` coordinate array."""
        coords = np.asarray(coords, dtype=np.int64)
        rel = coords - np.asarray(self.lo, dtype=np.int64)
        if np.any(rel < 0) or np.any(rel >= np.asarray(self.shape)):
            raise ConfigError("coordinates outside box")
        return rel @ np.asarray(self.strides, dtype=np.int64)

    def contains(self, site) -> bool:
        return all(l <= s <= h for s, l, h in zip(site, self.lo, self.hi))

    def translate(self, j: Tuple[int, ...]) -> "LatticeBox":
        return LatticeBox(tuple(l + v for l, v in zip(self.lo, j)),
                          tuple(h + v for h, v in zip(self.hi, j)))

    # common constructions -------------------------------------------------

    @staticmethod
    def interval(lo: int, hi: int) -> "LatticeBox":
        return LatticeBox((lo,), (hi,))

    @staticmethod
    def cube(d: int, lo: int, hi: int) -> "LatticeBox":
        return LatticeBox((lo,) * d, (hi,) * d)

    @staticmethod
    def centered(d: int, half_side: int) -> "LatticeBox":
        """The box ``{-R..R-1}^d``: even side ``2R``, symmetric about -1/2."""
        return LatticeBox((-half_side,) * d, (half_side - 1,) * d)


@functools.lru_cache(maxsize=256)
def _box_sites(box: LatticeBox) -> np.ndarray:
    grids = np.meshgrid(*(np.arange(l, h + 1) for l, h in zip(box.lo, box.hi)),
                        indexing="ij")
    out = np.stack([g.reshape(-1) for g in grids], axis=1).astype(np.int64)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# 1-D symbols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Symbol1D:
    """Function on the torus given by finitely many Fourier coefficients a_k."""

    coeffs: Tuple[Tuple[int, complex], ...]
    is_real_positive: bool = False

    @staticmethod
    def from_dict(coeffs: Dict[int, complex], is_real_positive: bool = False) -> "Symbol1D":
        items = tuple(sorted((int(k), complex(v)) for k, v in coeffs.items()))
        return Symbol1D(items, is_real_positive)

    def as_dict(self) -> Dict[int, complex]:
        return {k: v for k, v in self.coeffs}

    def eval(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape, dtype=complex)
        for k, a in self.coeffs:
            out += a * np.exp(1j * k * theta)
        return out

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        """True iff a_{-k} = conj(a_k), i.e. the symbol is real-valued."""
        table = self.as_dict()
        scale = max((abs(v) for v in table.values()), default=1.0)
        for k, a in table.items():
            if abs(table.get(-k, 0.0) - np.conj(a)) > tol * max(scale, 1.0):
                return False
        return True

    def min_real_on_grid(self, n: int = 4096) -> float:
        vals = self.eval(2 * np.pi * np.arange(n) / n)
        return float(vals.real.min())

    def log_coeffs(self, k_max: int, n_quad: int = 0) -> Dict[int, complex]:
        """Fourier coefficients of log(symbol); requires a positive symbol."""
        n_quad = n_quad or max(4 * k_max, 256)
        theta = 2 * np.pi * np.arange(n_quad) / n_quad
        vals = self.eval(theta)
        if vals.real.min() <= 0 or np.abs(vals.imag).max() > 1e-9 * max(1.0, np.abs(vals).max()):
            raise ConfigError("log of a symbol requires a positive real symbol")
        lg = np.log(vals.real)
        return {k: complex(np.mean(lg * np.exp(-1j * k * theta)))
                for k in range(-k_max, k_max + 1)}


def symbol_fourier_coefficients(eval_fn: Callable, k_max: int, n_quad: int) -> Symbol1D:
    """Fourier coefficients of a periodic function by uniform quadrature.

    The uniform rule on ``[0, 2pi)`` is exact for band-limited inputs with
    bandwidth below ``n_quad - k_max``; the precondition ``n_quad >= 4*k_max``
    refuses grids that would silently alias.
    """
    if k_max < 0:
        raise ConfigError("k_max must be >= 0")
    if n_quad < max(4 * k_max, 4):
        raise ConfigError(f"n_quad={n_quad} too small for k_max={k_max} (need >= {4 * k_max})")
    theta = 2 * np.pi * np.arange(n_quad) / n_quad
    vals = np.asarray(eval_fn(theta), dtype=complex)
    if vals.shape != theta.shape:
        vals = np.array([eval_fn(t) for t in theta], dtype=complex)
    coeffs = {}
    for k in range(-k_max, k_max + 1):
        coeffs[k] = complex(np.mean(vals * np.exp(-1j * k * theta)))
    real = bool(np.abs(vals.imag).max() <= 1e-12 * max(1.0, np.abs(vals).max()))
    positive = real and vals.real.min() > 0
    return Symbol1D.from_dict(coeffs, is_real_positive=positive)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

_KINDS = ("anderson", "periodic", "free", "toeplitz1d")


@dataclass(frozen=True)
class EnsembleSpec:
    """Parametric description of an operator ensemble plus its seeding scheme.

    ``anderson``   -Delta + V with V iid uniform on [-W/2, W/2]
    ``periodic``   -Delta + V with V periodic, given by one cell of values
    ``free``       -Delta alone
    ``toeplitz1d`` Toeplitz matrix of a 1-D symbol (d = 1 only)
    """

    kind: str
    W: float = 0.0
    hopping: float = 1.0
    seed: int = 0
    period: Optional[Tuple[int, ...]] = None
    potential_cell: Optional[Tuple[float, ...]] = None
    symbol: Optional[Symbol1D] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown ensemble kind {self.kind!r}")
        if self.W < 0:
            raise ConfigError("disorder W must be >= 0")
        if self.kind == "periodic":
            if not self.period or not self.potential_cell:
                raise ConfigError("periodic ensemble needs period and potential_cell")
            if any(p < 1 for p in self.period):
                raise ConfigError("period entries must be >= 1")
            if len(self.potential_cell) != int(np.prod(self.period)):
                raise ConfigError("potential_cell length must equal prod(period)")
        if self.kind == "toeplitz1d" and self.symbol is None:
            raise ConfigError("toeplitz1d ensemble needs a symbol")

    def validate_for(self, box: LatticeBox):
        if self.kind == "toeplitz1d" and box.d != 1:
            raise ModelError("toeplitz1d ensemble is only defined for d = 1")
        if self.kind == "periodic" and len(self.period) != box.d:
            raise ModelError("period vector dimension does not match the box")

    # -- flat key/value serialization (config files) -----------------------
    # keys: kind, W, hopping, seed, period, potential_cell, symbol.coeffs

    def to_config(self) -> Dict[str, str]:
        out = {"kind": self.kind, "W": repr(float(self.W)),
               "hopping": repr(float(self.hopping)), "seed": str(int(self.seed))}
        if self.period:
            out["period"] = " ".join(str(p) for p in self.period)
        if self.potential_cell:
            out["potential_cell"] = " ".join(repr(float(v)) for v in self.potential_cell)
        if self.symbol is not None:
            out["symbol.coeffs"] = " ".join(
                f"{k}:{v.real!r}{v.imag:+}j" for k, v in self.symbol.coeffs)
        return out

    @staticmethod
    def from_config(block: Dict[str, str]) -> "EnsembleSpec":
        try:
            kind = block["kind"].strip()
        except KeyError:
            raise ConfigError("ensemble block needs a 'kind' key")
        period = tuple(int(v) for v in block["period"].split()) if "period" in block else None
        cell = (tuple(float(v) for v in block["potential_cell"].split())
                if "potential_cell" in block else None)
        symbol = None
        if "symbol.coeffs" in block:
            coeffs = {}
            for item in block["symbol.coeffs"].split():
                k, v = item.split(":", 1)
                coeffs[int(k)] = complex(v)
            symbol = Symbol1D.from_dict(coeffs)
        return EnsembleSpec(kind=kind,
                            W=float(block.get("W", 0.0)),
                            hopping=float(block.get("hopping", 1.0)),
                            seed=int(block.get("seed", 0)),
                            period=period, potential_cell=cell, symbol=symbol)


# ---------------------------------------------------------------------------
# counter-based RNG (splitmix64 finalizer chain)
# ---------------------------------------------------------------------------

_K0 = np.uint64(0x9E3779B97F4A7C15)
_K1 = np.uint64(0xBF58476D1CE4E5B9)
_K2 = np.uint64(0x94D049BB133111EB)


def _mix64(x: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps mod 2^64 by design
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * _K1
        x = (x ^ (x >> np.uint64(27))) * _K2
        return x ^ (x >> np.uint64(31))


def site_uniforms(seed: int, sample_id: int, coords: np.ndarray) -> np.ndarray:
    """Uniform [0,1) variates addressed by absolute site coordinates.

    Pure function of ``(seed, sample_id, coordinates)``: the draw at a site does
    not depend on the enclosing box, which gives the nesting property for
    restricted samples.
    """
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim == 1:
        coords = coords[:, None]
    with np.errstate(over="ignore"):
        h0 = _mix64(np.int64(seed).astype(np.uint64) ^ _K0)
        h0 = _mix64(h0 ^ (np.int64(sample_id).astype(np.uint64) * _K1 + _K0))
        acc = np.full(coords.shape[0], h0, dtype=np.uint64)
        for j in range(coords.shape[1]):
            cj = coords[:, j].astype(np.uint64)
            acc = _mix64(acc ^ (cj * _K1 + np.uint64(j + 1) * _K2))
    return (acc >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

@dataclass
class HermitianOperator:
    """Dense Hermitian matrix indexed by the sites of a box."""

    box: LatticeBox
    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix)
        n = self.box.site_count
        if self.matrix.shape != (n, n):
            raise ModelError(f"matrix shape {self.matrix.shape} != site count {n}")

    @property
    def n(self) -> int:
        return self.box.site_count

    def hermiticity_defect(self) -> float:
        m = self.matrix
        scale = max(np.abs(m).max(), 1e-300)
        return float(np.abs(m - m.conj().T).max() / scale)

    @staticmethod
    def from_matrix(matrix: np.ndarray, label: str = "", box: Optional[LatticeBox] = None
                    ) -> "HermitianOperator":
        matrix = np.asarray(matrix)
        if box is None:
            box = LatticeBox.interval(0, matrix.shape[0] - 1)
        return HermitianOperator(box, matrix, label)


def potential_values(spec: EnsembleSpec, box: LatticeBox, sample_id: int) -> np.ndarray:
    coords = box.sites()
    if spec.kind == "free" or (spec.kind == "anderson" and spec.W == 0.0):
        return np.zeros(box.site_count)
    if spec.kind == "anderson":
        u = site_uniforms(spec.seed, sample_id, coords)
        return spec.W * (u - 0.5)
    if spec.kind == "periodic":
        period = np.asarray(spec.period, dtype=np.int64)
        rel = np.mod(coords, period)
        strides = []
        acc = 1
        for n in reversed(spec.period):
            strides.append(acc)
            acc *= n
        idx = rel @ np.asarray(strides[::-1], dtype=np.int64)
        return np.asarray(spec.potential_cell, dtype=float)[idx]
    raise ModelError(f"no potential for ensemble kind {spec.kind!r}")


def build_operator(spec: EnsembleSpec, box: LatticeBox, sample_id: int) -> HermitianOperator:
    """Finite Hermitian realization of one ensemble sample on a box.

    Schroedinger kinds produce the Dirichlet-truncated graph Laplacian plus the
    diagonal potential: diagonal ``2 d hopping + V(site)``, off-diagonal
    ``-hopping`` between nearest neighbors inside the box.
    """
    spec.validate_for(box)
    n = box.site_count
    if n > MAX_SITES:
        raise ModelError(f"site count {n} exceeds the configured maximum {MAX_SITES}")

    if spec.kind == "toeplitz1d":
        op = toeplitz_matrix(spec.symbol, n)
        return HermitianOperator(box, op.matrix,
                                 label=f"toeplitz1d L={n} sample={sample_id}")

    m = np.zeros((n, n), dtype=float)
    sites = box.sites()
    strides = box.strides
    hop = float(spec.hopping)
    flat = np.arange(n)
    for axis in range(box.d):
        inside = sites[:, axis] < box.hi[axis]
        rows = flat[inside]
        cols = rows + strides[axis]
        m[rows, cols] = -hop
        m[cols, rows] = -hop
    diag = 2.0 * box.d * hop + potential_values(spec, box, sample_id)
    m[flat, flat] = diag
    label = f"{spec.kind}(W={spec.W},hop={spec.hopping}) seed={spec.seed} sample={sample_id}"
    return HermitianOperator(box, m, label)


def toeplitz_matrix(symbol: Symbol1D, L: int) -> HermitianOperator:
    """Truncated Toeplitz matrix ``(a_{j-k})_{j,k=0..L-1}`` of a real symbol."""
    if L < 1:
        raise ConfigError("L must be >= 1")
    if not symbol.is_hermitian():
        raise ModelError("symbol is not real-valued; matrix would not be Hermitian")
    kernel = np.zeros(2 * L - 1, dtype=complex)
    for k, a in symbol.coeffs:
        if -(L - 1) <= k <= L - 1:
            kernel[k + L - 1] = a
    idx = np.arange(L)
    m = kernel[idx[:, None] - idx[None, :] + L - 1]
    if np.abs(m.imag).max() <= 1e-15 * max(1.0, np.abs(m).max()):
        m = m.real.copy()
    return HermitianOperator(LatticeBox.interval(0, L - 1), m, label=f"toeplitz L={L}")


# ---------------------------------------------------------------------------
# symmetry actions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetryAction:
    """Translation, coordinate permutation, or reflection of a box operator.

    ``permute``: ``perm`` is the 0-based map with ``(U psi)(x) = psi(x_perm)``,
    ``x_perm[i] = x[perm[i]]``.  ``reflect``: ``bits[i] = 1`` flips coordinate i
    about the box center.  ``translate``: relabels sites by ``vector``.
    """

    kind: str
    vector: Optional[Tuple[int, ...]] = None
    perm: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.kind not in ("translate", "permute", "reflect"):
            raise ConfigError(f"unknown symmetry action {self.kind!r}")
        if self.kind in ("translate", "reflect") and self.vector is None:
            raise ConfigError(f"{self.kind} action needs a vector")
        if self.kind == "permute":
            if self.perm is None or sorted(self.perm) != list(range(len(self.perm))):
                raise ConfigError("permute action needs a permutation of 0..d-1")

    @staticmethod
    def translate(vector) -> "SymmetryAction":
        return SymmetryAction("translate", vector=tuple(int(v) for v in vector))

    @staticmethod
    def permute(perm) -> "SymmetryAction":
        return SymmetryAction("permute", perm=tuple(int(v) for v in perm))

    @staticmethod
    def reflect(bits) -> "SymmetryAction":
        return SymmetryAction("reflect", vector=tuple(int(v) for v in bits))


def _conjugation_indices(box: LatticeBox, mapped_coords: np.ndarray) -> np.ndarray:
    return box.indices_of(mapped_coords)


def apply_symmetry(op: HermitianOperator, action: SymmetryAction) -> HermitianOperator:
    """Conjugate by the site-permutation unitary of the action.

    Permutations and reflections require the box to be invariant under the
    action; translations relabel the box.  Spectra are preserved exactly.
    """
    box = op.box
    if action.kind == "translate":
        new_box = box.translate(action.vector)
        return HermitianOperator(new_box, op.matrix,
                                 label=op.label + f" |T{action.vector}")
    sites = box.sites()
    if action.kind == "permute":
        perm = action.perm
        if len(perm) != box.d:
            raise ModelError("permutation dimension does not match the box")
        lo = tuple(box.lo[p] for p in perm)
        hi = tuple(box.hi[p] for p in perm)
        if lo != box.lo or hi != box.hi:
            raise ModelError("box is not invariant under the permutation")
        mapped = sites[:, list(perm)]
        tag = f" |P{perm}"
    else:
        bits = action.vector
        if len(bits) != box.d:
            raise ModelError("reflection dimension does not match the box")
        mapped = sites.copy()
        for i, b in enumerate(bits):
            if b:
                mapped[:, i] = box.lo[i] + box.hi[i] - mapped[:, i]
        tag = f" |R{bits}"
    p = _conjugation_indices(box, mapped)
    new = op.matrix[np.ix_(p, p)]
    return HermitianOperator(box, new, label=op.label + tag)
