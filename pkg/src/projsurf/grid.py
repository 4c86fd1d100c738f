"""Grid fields and fourth-order finite differences.

Fields live on a rectangular node lattice stored row-major with ``y``
varying slowest, so ``values[j, i]`` sits at ``(x0 + i*hx, y0 + j*hy)``.
Every field carries a validity mask; masked nodes never enter norms and
any stencil touching a masked node masks its output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

#: relative threshold for divisions (scaled by the sup-norm of the divisor)
EPS_DIV_REL = 1e-10

MIN_NODES = 8


class GridError(ValueError):
    """Raised for grids or fields that violate the lattice contract."""


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    x0: float = 0.0
    y0: float = 0.0
    hx: float = 1.0 / 32
    hy: float = 1.0 / 32

    def __post_init__(self):
        if self.nx < MIN_NODES or self.ny < MIN_NODES:
            raise GridError(f"grid {self.nx}x{self.ny} is below the {MIN_NODES}-node stencil support")
        if not (self.hx > 0 and self.hy > 0):
            raise GridError("grid spacings must be positive")

    @classmethod
    def square(cls, n: int, lo: float = 0.0, hi: float = 1.0, y_lo: float | None = None) -> "GridSpec":
        """``n``x``n`` nodes covering ``[lo, hi]`` in x and the same width in y."""
        h = (hi - lo) / (n - 1)
        return cls(n, n, lo, lo if y_lo is None else y_lo, h, h)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.hx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.hy * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y)

    def spacing(self, axis: str) -> float:
        return self.hx if _axis(axis) == "x" else self.hy

    def as_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "x0": self.x0, "y0": self.y0, "hx": self.hx, "hy": self.hy}


def _axis(axis: str) -> str:
    if axis not in ("x", "y"):
        raise GridError(f"axis must be 'x' or 'y', got {axis!r}")
    return axis


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values on a :class:`GridSpec` together with a validity mask."""

    grid: GridSpec
    values: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if self.valid is None:
            valid = np.isfinite(vals)
        else:
            valid = np.array(self.valid, dtype=bool) & np.isfinite(vals)
        vals.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid", valid)

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: GridSpec, func) -> "ScalarField":
        """Sample ``func(X, Y)`` on the grid nodes."""
        X, Y = grid.mesh()
        with np.errstate(all="ignore"):
            vals = np.broadcast_to(np.asarray(func(X, Y), dtype=float), grid.shape)
        return cls(grid, vals)

    def with_values(self, values, valid=None) -> "ScalarField":
        return ScalarField(self.grid, values, self.valid if valid is None else valid)

    def masked(self, mask) -> "ScalarField":
        """Copy with the nodes where ``mask`` is true additionally invalidated."""
        return ScalarField(self.grid, self.values, self.valid & ~np.asarray(mask, dtype=bool))

    def filled(self, fill: float = 0.0) -> np.ndarray:
        return np.where(self.valid, self.values, fill)

    # norms --------------------------------------------------------------
    def valid_values(self) -> np.ndarray:
        return self.values[self.valid]

    def sup(self) -> float:
        v = self.valid_values()
        return float(np.max(np.abs(v))) if v.size else 0.0

    def rms(self) -> float:
        v = self.valid_values()
        # np.sum reduces pairwise, independent of any row partitioning
        return float(np.sqrt(np.sum(v * v) / v.size)) if v.size else 0.0

    @property
    def fully_masked(self) -> bool:
        return not self.valid.any()

    # arithmetic ---------------------------------------------------------
    def _binary(self, other, op):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise GridError("fields live on different grids")
            valid = self.valid & other.valid
            with np.errstate(all="ignore"):
                vals = op(self.filled(), other.filled())
        else:
            valid = self.valid
            with np.errstate(all="ignore"):
                vals = op(self.filled(), other)
        vals = np.asarray(vals, dtype=float)
        valid = valid & np.isfinite(vals)
        return ScalarField(self.grid, np.where(valid, vals, 0.0), valid)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __radd__(self, other):
        return self._binary(other, lambda a, b: b + a)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    def __rmul__(self, other):
        return self._binary(other, lambda a, b: b * a)

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __rtruediv__(self, other):
        return self._binary(other, lambda a, b: b / a)

    def __pow__(self, p):
        return self._binary(p, np.power)

    def __neg__(self):
        return ScalarField(self.grid, -self.values, self.valid)

    def apply(self, func) -> "ScalarField":
        with np.errstate(all="ignore"):
            vals = np.asarray(func(self.filled()), dtype=float)
        valid = self.valid & np.isfinite(vals)
        return ScalarField(self.grid, np.where(valid, vals, 0.0), valid)

    def __abs__(self):
        return self.apply(np.abs)

    def __repr__(self):
        return f"ScalarField({self.grid.nx}x{self.grid.ny}, sup={self.sup():.3g}, valid={int(self.valid.sum())})"


def as_field(grid: GridSpec, value) -> ScalarField:
    if isinstance(value, ScalarField):
        return value
    if callable(value):
        return ScalarField.from_function(grid, value)
    return ScalarField(grid, np.broadcast_to(np.asarray(value, dtype=float), grid.shape))


# ---------------------------------------------------------------------------
# stencils


def fd_weights(offsets, order: int) -> list[Fraction]:
    """Exact weights of ``sum w_k f(x + o_k h) ~ h**order f^(order)(x)``."""
    offs = [Fraction(o) for o in offsets]
    n = len(offs)
    # Solve the Taylor moment system sum_k w_k o_k^m = m! delta_{m,order}
    A = [[o ** m for o in offs] for m in range(n)]
    b = [Fraction(0)] * n
    fact = 1
    for m in range(1, order + 1):
        fact *= m
    b[order] = Fraction(fact)
    # Gauss-Jordan elimination over the rationals
    M = [row[:] + [b[i]] for i, row in enumerate(A)]
    for col in range(n):
        piv = next(r for r in range(col, n) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        p = M[col][col]
        M[col] = [v / p for v in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [a - f * c for a, c in zip(M[r], M[col])]
    return [M[i][n] for i in range(n)]


_CENTRAL_HALF = {1: 2, 2: 2, 3: 3}
# one-sided closures are one order higher than the interior so that boundary
# rows do not dominate sup-norm residuals of smooth fields
_ONE_SIDED = {1: 6, 2: 7, 3: 8}


@lru_cache(maxsize=None)
def _stencil_rows(n: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit-spacing differentiation matrix and its support for ``n`` nodes."""
    if order not in _CENTRAL_HALF:
        raise GridError(f"derivative order must be 1..3, got {order}")
    half = _CENTRAL_HALF[order]
    width = _ONE_SIDED[order]
    if n < width:
        raise GridError(f"{n} nodes cannot support the order-{order} boundary stencil")
    D = np.zeros((n, n))
    for i in range(n):
        if half <= i < n - half:
            start, offsets = i - half, range(-half, half + 1)
        else:
            start = 0 if i < half else n - width
            offsets = range(start - i, start - i + width)
        w = fd_weights(list(offsets), order)
        D[i, start:start + len(w)] = [float(v) for v in w]
    support = D != 0
    D.setflags(write=False)
    support.setflags(write=False)
    return D, support


def partial_derivative(f: ScalarField, axis: str, order: int = 1) -> ScalarField:
    """Fourth-order finite-difference derivative of ``f`` along ``axis``."""
    axis = _axis(axis)
    if not 1 <= order <= 3:
        raise GridError(f"derivative order must be 1..3, got {order}")
    if not np.all(np.isfinite(f.values[f.valid])):
        raise GridError("non-finite values at valid nodes")
    g = f.grid
    n = g.nx if axis == "x" else g.ny
    D, support = _stencil_rows(n, order)
    h = g.spacing(axis) ** order
    vals = f.filled(0.0)
    bad = (~f.valid).astype(float)
    if axis == "x":
        out = vals @ D.T / h
        tainted = bad @ support.T.astype(float)
    else:
        out = D @ vals / h
        tainted = support.astype(float) @ bad
    valid = tainted == 0
    return ScalarField(g, np.where(valid, out, 0.0), valid)


def d(f: ScalarField, spec: str) -> ScalarField:
    """Derivative by a string of axis letters, e.g. ``d(f, "xxy")``.

    Pure derivatives up to order 3 use one dedicated stencil; mixed
    derivatives apply the x-part first, then the y-part.
    """
    nx_, ny_ = spec.count("x"), spec.count("y")
    if nx_ + ny_ != len(spec) or not spec:
        raise GridError(f"bad derivative spec {spec!r}")
    out = f
    for axis, k in (("x", nx_), ("y", ny_)):
        while k > 0:
            step = min(k, 3)
            out = partial_derivative(out, axis, step)
            k -= step
    return out


def eps_div(f: ScalarField) -> float:
    return EPS_DIV_REL * f.sup()


def safe_divisor(f: ScalarField) -> ScalarField:
    """Mask the nodes where ``|f|`` falls below the division threshold."""
    thr = eps_div(f)
    return f.masked(np.abs(f.values) < thr) if thr > 0 else f.masked(np.ones(f.grid.shape, bool))


def log_derivative(f: ScalarField, axis: str) -> ScalarField:
    """``(ln|f|)_axis`` computed as ``f_axis / f``."""
    fs = safe_divisor(f)
    return partial_derivative(fs, axis, 1) / fs


def log_second_derivative(f: ScalarField, axis: str) -> ScalarField:
    """``(ln|f|)_{axis axis}`` as ``f'' / f - (f' / f)**2``."""
    fs = safe_divisor(f)
    r1 = partial_derivative(fs, axis, 1) / fs
    return partial_derivative(fs, axis, 2) / fs - r1 * r1


def log_mixed_derivative(f: ScalarField) -> ScalarField:
    """``(ln|f|)_xy`` as ``f_xy/f - f_x f_y / f**2``; no logarithms taken."""
    fs = safe_divisor(f)
    fx = partial_derivative(fs, "x", 1)
    fy = partial_derivative(fs, "y", 1)
    return d(fs, "xy") / fs - fx * fy / (fs * fs)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Grow a boolean mask by ``radius`` nodes in the max-norm."""
    out = mask.copy()
    for _ in range(radius):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        grown[1:, 1:] |= out[:-1, :-1]
        grown[:-1, :-1] |= out[1:, 1:]
        grown[1:, :-1] |= out[:-1, 1:]
        grown[:-1, 1:] |= out[1:, :-1]
        out = grown
    return out


def diff_array(values: np.ndarray, grid: GridSpec, axis: str, order: int = 1) -> np.ndarray:
    """Derivative of an array shaped ``(ny, nx, ...)`` along a grid axis (no masking)."""
    axis = _axis(axis)
    n = grid.nx if axis == "x" else grid.ny
    D, _ = _stencil_rows(n, order)
    h = grid.spacing(axis) ** order
    ax = 1 if axis == "x" else 0
    out = np.tensordot(D, values, axes=(1, ax)) / h
    return np.moveaxis(out, 0, ax)


def mask_support(valid: np.ndarray, axis: str, order: int = 1) -> np.ndarray:
    """Nodes whose ``order`` stencil along ``axis`` touches only valid nodes."""
    axis = _axis(axis)
    n = valid.shape[1] if axis == "x" else valid.shape[0]
    _, support = _stencil_rows(n, order)
    bad = (~valid).astype(float)
    tainted = bad @ support.T.astype(float) if axis == "x" else support.astype(float) @ bad
    return tainted == 0


def interior(f: ScalarField, band: int) -> ScalarField:
    """Mask every node within ``band`` nodes of the grid boundary."""
    if band <= 0:
        return f
    keep = np.zeros(f.grid.shape, bool)
    keep[band:-band, band:-band] = True
    return f.masked(~keep)
