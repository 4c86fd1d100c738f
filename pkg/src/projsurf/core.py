"""Coefficient fields of a surface and their compatibility, symmetries and classes.

A surface in projective 3-space is encoded by four functions
``beta, gamma, V, W`` of asymptotic coordinates ``x, y`` through the linear
system

    r_xx = beta r_y + (V - beta_y) r / 2,
    r_yy = gamma r_x + (W - gamma_x) r / 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import (
    GridError,
    GridSpec,
    ScalarField,
    as_field,
    d,
    log_derivative,
    log_mixed_derivative,
    log_second_derivative,
    partial_derivative,
    safe_divisor,
)


#: default tolerance for class preconditions of transports and transforms
PRECONDITION_TOL = 1e-4


class PreconditionError(ValueError):
    """A mathematical precondition (class membership, sign, degeneracy) failed."""


@dataclass(frozen=True)
class Coeffs:
    beta: ScalarField
    gamma: ScalarField
    V: ScalarField
    W: ScalarField

    def __post_init__(self):
        grids = {f.grid for f in (self.beta, self.gamma, self.V, self.W)}
        if len(grids) != 1:
            raise GridError("coefficient fields must share one grid")

    @classmethod
    def from_values(cls, grid: GridSpec, beta, gamma, V, W) -> "Coeffs":
        """Build from constants, arrays, callables ``f(X, Y)`` or fields."""
        return cls(*(as_field(grid, v) for v in (beta, gamma, V, W)))

    @property
    def grid(self) -> GridSpec:
        return self.beta.grid

    def fields(self) -> tuple[ScalarField, ScalarField, ScalarField, ScalarField]:
        return (self.beta, self.gamma, self.V, self.W)

    def replace(self, **kw) -> "Coeffs":
        vals = dict(beta=self.beta, gamma=self.gamma, V=self.V, W=self.W)
        vals.update(kw)
        return Coeffs(**vals)

    @property
    def valid(self) -> np.ndarray:
        return self.beta.valid & self.gamma.valid & self.V.valid & self.W.valid


@dataclass(frozen=True)
class Derived:
    """The quantities k, l, a, b built from logarithmic derivatives of beta, gamma."""

    k: ScalarField
    l: ScalarField
    a: ScalarField
    b: ScalarField


@dataclass(frozen=True)
class ResidualReport:
    """Sup and RMS norms of named residual fields over their valid nodes."""

    components: dict[str, tuple[float, float]]
    grid: GridSpec
    tolerance: float | None = None
    valid_nodes: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_fields(cls, fields: dict[str, ScalarField], tolerance: float | None = None) -> "ResidualReport":
        comps, counts = {}, {}
        grid = None
        for name, f in fields.items():
            comps[name] = (f.sup(), f.rms())
            counts[name] = int(f.valid.sum())
            grid = f.grid
        return cls(comps, grid, tolerance, counts)

    def sup(self, name: str | None = None) -> float:
        if name is not None:
            return self.components[name][0]
        return max((s for s, _ in self.components.values()), default=0.0)

    def rms(self, name: str) -> float:
        return self.components[name][1]

    def passed(self, tol: float | None = None) -> bool:
        tol = self.tolerance if tol is None else tol
        if tol is None:
            raise ValueError("no tolerance given")
        return self.sup() <= tol

    def with_tolerance(self, tol: float) -> "ResidualReport":
        return ResidualReport(self.components, self.grid, tol, self.valid_nodes)

    def as_dict(self) -> dict:
        return {
            "components": {k: {"sup": s, "rms": r} for k, (s, r) in self.components.items()},
            "valid_nodes": dict(self.valid_nodes),
            "grid": self.grid.as_dict(),
            "tolerance": self.tolerance,
        }


# ---------------------------------------------------------------------------
# compatibility


def gc1_fields(c: Coeffs) -> dict[str, ScalarField]:
    be, ga, V, W = c.fields()
    lhs = d(be, "yyy") - 2 * d(be, "y") * W - be * d(W, "y")
    rhs = d(ga, "xxx") - 2 * d(ga, "x") * V - ga * d(V, "x")
    return {
        "R1": lhs - rhs,
        "R2": d(W, "x") - 2 * ga * d(be, "y") - be * d(ga, "y"),
        "R3": d(V, "y") - 2 * be * d(ga, "x") - ga * d(be, "x"),
    }


def gc1_residual(c: Coeffs, tol: float | None = None) -> ResidualReport:
    """Residuals of the three projective Gauss-Codazzi equations."""
    return ResidualReport.from_fields(gc1_fields(c), tol)


def derived_quantities(c: Coeffs) -> Derived:
    be, ga, V, W = c.fields()
    bg = be * ga
    ly = log_derivative(be, "y")
    lx = log_derivative(ga, "x")
    return Derived(
        k=bg - log_mixed_derivative(be),
        l=bg - log_mixed_derivative(ga),
        a=W - log_second_derivative(be, "y") - 0.5 * ly * ly,
        b=V - log_second_derivative(ga, "x") - 0.5 * lx * lx,
    )


def reconstruct_VW(c: Coeffs, dq: Derived) -> tuple[ScalarField, ScalarField]:
    """Invert the definitions of a, b back to V, W."""
    ly = log_derivative(c.beta, "y")
    lx = log_derivative(c.gamma, "x")
    V = dq.b + log_second_derivative(c.gamma, "x") + 0.5 * lx * lx
    W = dq.a + log_second_derivative(c.beta, "y") + 0.5 * ly * ly
    return V, W


def gc2_fields(c: Coeffs, dq: Derived) -> dict[str, ScalarField]:
    be, ga = c.beta, c.gamma
    k, l, a, b = dq.k, dq.l, dq.a, dq.b
    bg = be * ga
    return {
        "E1": log_mixed_derivative(be) - bg + k,
        "E2": log_mixed_derivative(ga) - bg + l,
        "E3": d(a, "x") - d(k, "y") - log_derivative(be, "y") * k,
        "E4": d(b, "y") - d(l, "x") - log_derivative(ga, "x") * l,
        "E5": be * d(a, "y") + 2 * a * d(be, "y") - ga * d(b, "x") - 2 * b * d(ga, "x"),
    }


def gc2_residual(c: Coeffs, dq: Derived | None = None, tol: float | None = None) -> ResidualReport:
    """Residuals of the equivalent (k, l, a, b) form of the compatibility conditions."""
    dq = derived_quantities(c) if dq is None else dq
    return ResidualReport.from_fields(gc2_fields(c, dq), tol)


# ---------------------------------------------------------------------------
# symmetries


@dataclass(frozen=True)
class GaugePair:
    """Reparametrisation ``x* = f(x), y* = g(y)``.

    ``f`` and ``g`` are sequences ``(h, h', h'', h''')`` of vectorised
    callables.
    """

    f: tuple[Callable, Callable, Callable, Callable]
    g: tuple[Callable, Callable, Callable, Callable]

    @classmethod
    def identity(cls) -> "GaugePair":
        one = (lambda t: np.asarray(t, float), np.ones_like, np.zeros_like, np.zeros_like)
        return cls(one, one)

    @staticmethod
    def schwarzian(fn, t):
        f1, f2, f3 = fn[1](t), fn[2](t), fn[3](t)
        return f3 / f1 - 1.5 * (f2 / f1) ** 2


def _resample_axis(vals: np.ndarray, valid: np.ndarray, nodes: np.ndarray, h: float, x0: float,
                   targets: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Six-point Lagrange interpolation along ``axis`` at coordinates ``targets``."""
    n = len(nodes)
    out_shape = list(vals.shape)
    out_shape[axis] = len(targets)
    out = np.zeros(out_shape)
    ok = np.zeros(out_shape, bool)
    v = np.moveaxis(vals, axis, 0)
    m = np.moveaxis(valid, axis, 0)
    o = np.moveaxis(out, axis, 0)
    okm = np.moveaxis(ok, axis, 0)
    for t_idx, t in enumerate(targets):
        s = (t - x0) / h
        j = int(round(s))
        if abs(s - j) <= 1e-9 and 0 <= j < n:
            o[t_idx] = v[j]
            okm[t_idx] = m[j]
            continue
        lo = min(max(int(np.floor(s)) - 2, 0), n - 6)
        idx = np.arange(lo, lo + 6)
        w = np.ones(6)
        for a in range(6):
            for b in range(6):
                if a != b:
                    w[a] *= (s - idx[b]) / (idx[a] - idx[b])
        o[t_idx] = np.tensordot(w, v[idx], axes=(0, 0))
        okm[t_idx] = m[idx].all(axis=0)
    return out, ok


def _preimage(fn, targets: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Invert a monotone increasing ``fn[0]`` on ``[lo, hi]`` by safeguarded Newton."""
    a = np.full_like(targets, lo)
    b = np.full_like(targets, hi)
    t = lo + (targets - fn[0](lo)) / (fn[0](hi) - fn[0](lo)) * (hi - lo)
    for _ in range(100):
        val = fn[0](t) - targets
        a = np.where(val < 0, t, a)
        b = np.where(val > 0, t, b)
        step = val / fn[1](t)
        t_new = t - step
        outside = (t_new <= a) | (t_new >= b)
        t_new = np.where(outside, 0.5 * (a + b), t_new)
        if np.max(np.abs(t_new - t)) <= 1e-15 * max(1.0, abs(hi), abs(lo)):
            t = t_new
            break
        t = t_new
    return t


def gauge_transform(c: Coeffs, gauge: GaugePair, resample: bool = True) -> Coeffs:
    """Apply a reparametrisation of the asymptotic coordinates.

    With ``resample=False`` the transformed coefficient values are returned on
    the original nodes (before mapping to the new coordinates); otherwise they
    are interpolated onto a regular grid in ``(f(x), g(y))``.
    """
    g0 = c.grid
    x, y = g0.x, g0.y
    fp, gp = gauge.f[1](x), gauge.g[1](y)
    if np.any(fp <= 0) or np.any(gp <= 0):
        raise PreconditionError("gauge maps must be strictly increasing on the grid")
    Sf = GaugePair.schwarzian(gauge.f, x)
    Sg = GaugePair.schwarzian(gauge.g, y)
    FP = fp[None, :]
    GP = gp[:, None]
    be, ga, V, W = c.fields()
    new = Coeffs(
        be * (GP / FP**2),
        ga * (FP / GP**2),
        (V + Sf[None, :]) / FP**2,
        (W + Sg[:, None]) / GP**2,
    )
    if not resample:
        return new

    grid_kw = {}
    arrays = [(f.values.copy(), f.valid.copy()) for f in new.fields()]
    for axis_name, fn, nodes, h, start, axis in (
        ("x", gauge.f, x, g0.hx, g0.x0, 1),
        ("y", gauge.g, y, g0.hy, g0.y0, 0),
    ):
        img = fn[0](nodes)
        step = (img[-1] - img[0]) / (len(nodes) - 1)
        if np.any(np.diff(img) <= 0):
            raise PreconditionError(f"gauge map along {axis_name} is not monotone")
        uniform = np.allclose(np.diff(img), step, rtol=1e-12, atol=0.0)
        if uniform:
            grid_kw[axis_name] = (float(img[0]), float(img[1] - img[0]))
            continue
        targets = img[0] + step * np.arange(len(nodes))
        pre = _preimage(fn, targets, nodes[0], nodes[-1])
        pre[0], pre[-1] = nodes[0], nodes[-1]
        arrays = [_resample_axis(v, m, nodes, h, start, pre, axis) for v, m in arrays]
        grid_kw[axis_name] = (float(img[0]), float(step))
    gx, gy = grid_kw["x"], grid_kw["y"]
    grid = GridSpec(g0.nx, g0.ny, gx[0], gy[0], gx[1], gy[1])
    return Coeffs(*(ScalarField(grid, v, m) for v, m in arrays))


def spectral_scale(c: Coeffs, lam: float) -> Coeffs:
    """``(beta, gamma) -> (lam beta, gamma / lam)``."""
    if lam == 0:
        raise ValueError("spectral scaling needs a nonzero parameter")
    return c.replace(beta=c.beta * lam, gamma=c.gamma / lam)


def dual(c: Coeffs) -> Coeffs:
    """Coefficients of the dual surface: ``(beta, gamma) -> (-beta, -gamma)``."""
    return c.replace(beta=-c.beta, gamma=-c.gamma)


# ---------------------------------------------------------------------------
# invariant forms and area


@dataclass(frozen=True)
class InvariantForms:
    metric: ScalarField
    cubic: tuple[ScalarField, ScalarField]
    omega1: ScalarField
    omega2: ScalarField
    quadratic: tuple[ScalarField, ScalarField]
    quartic: tuple[ScalarField, ScalarField]


def projective_invariants(c: Coeffs, dq: Derived | None = None) -> InvariantForms:
    """Densities of the projective metric, Darboux cubic form and related forms.

    Quadratic and quartic densities need :class:`Derived`; they are fully
    masked when ``beta`` or ``gamma`` vanishes identically.
    """
    be, ga = c.beta, c.gamma
    if dq is None:
        try:
            dq = derived_quantities(c)
        except GridError:
            dq = None
    cbrt = lambda f: f.apply(np.cbrt)
    if dq is None:
        empty = ScalarField(c.grid, np.zeros(c.grid.shape), np.zeros(c.grid.shape, bool))
        quad = (empty, empty)
        quart = (empty, empty)
    else:
        quad = (dq.b, dq.a)
        quart = (dq.a * be * be, dq.b * ga * ga)
    return InvariantForms(
        metric=2 * be * ga,
        cubic=(be, ga),
        omega1=cbrt(ga * be * be),
        omega2=cbrt(be * ga * ga),
        quadratic=quad,
        quartic=quart,
    )


def trapezoid_weights(valid: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Node weights of the 2-D trapezoid rule restricted to fully valid cells."""
    cell = valid[:-1, :-1] & valid[1:, :-1] & valid[:-1, 1:] & valid[1:, 1:]
    w = np.zeros(valid.shape)
    q = 0.25 * hx * hy * cell
    w[:-1, :-1] += q
    w[1:, :-1] += q
    w[:-1, 1:] += q
    w[1:, 1:] += q
    return w


def projective_area(c: Coeffs) -> float:
    """Trapezoidal quadrature of ``beta * gamma`` over the valid cells."""
    bg = c.beta * c.gamma
    if bg.fully_masked:
        raise GridError("projective area of a fully masked field")
    w = trapezoid_weights(bg.valid, c.grid.hx, c.grid.hy)
    if not w.any():
        raise GridError("no fully valid cell to integrate over")
    return float(np.sum((w * bg.filled()).ravel()))


# ---------------------------------------------------------------------------
# classes

CLASS_NAMES = (
    "isothermally_asymptotic",
    "R0_x",
    "R0_y",
    "R",
    "jonas",
    "projectively_minimal",
    "godeaux_rozet",
    "demoulin",
    "linear_complex_x",
    "linear_complex_y",
)


def _relative(diff: ScalarField, *terms: ScalarField) -> float:
    """Sup of ``diff`` relative to the sup of its terms, floored at scale 1."""
    if diff.fully_masked:
        raise GridError("class residual is fully masked")
    scale = max([1.0] + [t.sup() for t in terms])
    return diff.sup() / scale


def _mask_like(f: ScalarField, *others: ScalarField) -> ScalarField:
    valid = f.valid.copy()
    for o in others:
        valid &= o.valid
    return ScalarField(f.grid, f.values, valid)


def class_residual(c: Coeffs, name: str, dq: Derived | None = None) -> float:
    """Scale-aware residual of the defining condition of one surface class."""
    be, ga = c.beta, c.gamma
    if name == "isothermally_asymptotic":
        lb, lg = log_mixed_derivative(be), log_mixed_derivative(ga)
        return _relative(lb - lg, lb, lg)
    if name == "R0_x":
        bs = safe_divisor(be)
        t1, t2 = d(bs, "xy") / bs, d(bs, "x") * d(bs, "y") / (bs * bs)
        return _relative(t1 - t2, t1, t2)
    if name == "R0_y":
        gs = safe_divisor(ga)
        t1, t2 = d(gs, "xy") / gs, d(gs, "x") * d(gs, "y") / (gs * gs)
        return _relative(t1 - t2, t1, t2)
    if name == "R":
        by, gx = d(be, "y"), d(ga, "x")
        return _relative(by - gx, by, gx)
    if name == "jonas":
        bx, gy = d(be, "x"), d(ga, "y")
        return _relative(bx - gy, bx, gy)
    if name == "projectively_minimal":
        return _projmin_residual(c)
    dq = derived_quantities(c) if dq is None else dq
    if name == "godeaux_rozet":
        return max(_relative(dq.a, c.W), _projmin_residual(c))
    if name == "demoulin":
        kb = dq.k * be
        lg = dq.l * ga
        return max(
            _relative(dq.a, c.W),
            _relative(dq.b, c.V),
            _relative(d(kb, "y"), kb),
            _relative(d(lg, "x"), lg),
        )
    if name == "linear_complex_x":
        return _relative(dq.k, be * ga)
    if name == "linear_complex_y":
        return _relative(dq.l, be * ga)
    raise KeyError(f"unknown class {name!r}")


def _projmin_residual(c: Coeffs) -> float:
    be, ga, V, W = c.fields()
    t = [d(be, "yyy"), 2 * d(be, "y") * W, be * d(W, "y")]
    s = [d(ga, "xxx"), 2 * d(ga, "x") * V, ga * d(V, "x")]
    return max(_relative(t[0] - t[1] - t[2], *t), _relative(s[0] - s[1] - s[2], *s))


@dataclass(frozen=True)
class ClassReport:
    residuals: dict[str, float]
    tolerance: float

    @property
    def verdicts(self) -> dict[str, bool]:
        return {k: v <= self.tolerance for k, v in self.residuals.items()}

    def __getitem__(self, name: str) -> bool:
        return self.residuals[name] <= self.tolerance

    def as_dict(self) -> dict:
        return {k: {"member": self[k], "residual": v} for k, v in self.residuals.items()} | {
            "tolerance": self.tolerance
        }


def classify(c: Coeffs, tol: float = 1e-6) -> ClassReport:
    """Test every surface class; classes needing k, l, a, b require beta, gamma != 0."""
    dq = derived_quantities(c)
    return ClassReport({name: class_residual(c, name, dq) for name in CLASS_NAMES}, tol)


def stationary_mvn_residual(c: Coeffs, tol: float | None = None) -> ResidualReport:
    """Compatibility residuals of an isothermally asymptotic field written through beta alone."""
    be, V, W = c.beta, c.V, c.W
    b2 = be * be
    fields = {
        "R1": (d(be, "yyy") - 2 * d(be, "y") * W - be * d(W, "y"))
        - (d(be, "xxx") - 2 * d(be, "x") * V - be * d(V, "x")),
        "R2": d(W, "x") - 1.5 * d(b2, "y"),
        "R3": d(V, "y") - 1.5 * d(b2, "x"),
        "beta_minus_gamma": c.beta - c.gamma,
    }
    return ResidualReport.from_fields(fields, tol)
