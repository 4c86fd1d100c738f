"""Exact and constructible families of coefficient fields, and a Goursat solver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import RectBivariateSpline

from .core import (
    PRECONDITION_TOL,
    Coeffs,
    PreconditionError,
    ResidualReport,
    class_residual,
    gc1_residual,
)
from .frames import MatrixField, integrate_matrices
from .grid import (
    GridError,
    GridSpec,
    ScalarField,
    as_field,
    d,
    log_derivative,
    log_mixed_derivative,
    log_second_derivative,
    safe_divisor,
)


class ConvergenceError(RuntimeError):
    """An iteration failed to reach its tolerance."""


# ---------------------------------------------------------------------------
# Goursat problems


def _interval_weights(n: int, h: float, points: int = 6) -> np.ndarray:
    """Rows ``i`` hold quadrature weights for the integral over ``[x_i, x_{i+1}]``.

    Each row integrates the Lagrange interpolant through ``points`` nodes
    centred on the interval (shifted inwards at the ends).
    """
    points = min(points, n)
    W = np.zeros((n - 1, n))
    for i in range(n - 1):
        lo = min(max(i - (points // 2 - 1), 0), n - points)
        nodes = np.arange(lo, lo + points) - i
        for a in range(points):
            others = np.delete(nodes, a)
            poly = np.poly1d(others, r=True) / np.prod(nodes[a] - others)
            antider = poly.integ()
            W[i, lo + a] = antider(1.0) - antider(0.0)
    return W * h


def cumulative_matrix(n: int, h: float, method: str = "lagrange6") -> np.ndarray:
    """Matrix ``C`` with ``(C f)_k`` approximating the integral from node 0 to node ``k``."""
    if method == "trapezoid":
        W = np.zeros((n - 1, n))
        idx = np.arange(n - 1)
        W[idx, idx] = W[idx, idx + 1] = 0.5 * h
    elif method == "lagrange6":
        W = _interval_weights(n, h, 6)
    else:
        raise ValueError(f"unknown quadrature {method!r}")
    return np.vstack([np.zeros(n), np.cumsum(W, axis=0)])


def _rhs_catalog(name: str, params: dict) -> Callable:
    if name == "tzitzeica":
        c = params.get("c", -1.0)
        return lambda u: np.exp(2 * u) + c * np.exp(-u)
    if name == "coupled-tzitzeica":
        sb, sg = params.get("sign_beta", -1.0), params.get("sign_gamma", -1.0)

        def f(u):
            bg = sb * sg * np.exp(u[0] + u[1])
            return np.stack([bg + sb * np.exp(-u[0]), bg + sg * np.exp(-u[1])])

        return f
    if name == "sine-gordon":
        return lambda u: -np.sin(u)
    if name == "sinh-gordon":
        return lambda u: -np.sinh(u)
    if name == "cosh-rnet4":
        return np.cosh
    if name == "liouville":
        return np.exp
    raise ValueError(f"unknown Goursat right-hand side {name!r}")


GOURSAT_RHS = ("tzitzeica", "coupled-tzitzeica", "sine-gordon", "sinh-gordon", "cosh-rnet4", "liouville", "custom")


@dataclass(frozen=True)
class GoursatProblem:
    """``u_xy = F(u)`` with ``u`` given on the bottom edge and the left edge.

    ``bottom`` and ``left`` are callables of ``x`` (resp. ``y``) or arrays
    sampled on the grid; for systems they carry a leading component axis.
    ``rhs`` names a catalogue entry or is ``"custom"`` with ``func``.
    """

    rhs: str
    bottom: object
    left: object
    params: dict = field(default_factory=dict)
    func: Callable | None = None
    tol: float = 1e-12
    max_iter: int = 200
    quadrature: str = "lagrange6"


@dataclass(frozen=True)
class GoursatResult:
    u: np.ndarray
    grid: GridSpec
    iterations: int
    last_change: float

    def field(self, comp: int | None = None) -> ScalarField:
        vals = self.u if comp is None else self.u[comp]
        return ScalarField(self.grid, vals)


def _sample_edge(data, coords: np.ndarray) -> np.ndarray:
    if callable(data):
        return np.asarray(data(coords), float)
    arr = np.asarray(data, float)
    if arr.shape[-1] != len(coords):
        raise GridError(f"edge data has {arr.shape[-1]} samples, expected {len(coords)}")
    return arr


def solve_goursat(p: GoursatProblem, grid: GridSpec) -> GoursatResult:
    """Picard iteration of the integral form with cumulative quadrature.

    The default quadrature integrates sixth-order local interpolants; the
    trapezoidal rule is available as ``quadrature="trapezoid"``.
    """
    if p.rhs == "custom":
        if p.func is None:
            raise ValueError("custom right-hand side needs func")
        F = p.func
    else:
        F = _rhs_catalog(p.rhs, p.params)
    bottom = _sample_edge(p.bottom, grid.x)
    left = _sample_edge(p.left, grid.y)
    if bottom.shape[:-1] != left.shape[:-1]:
        raise GridError("edge data have different component counts")
    if not np.allclose(bottom[..., 0], left[..., 0], rtol=1e-12, atol=1e-12):
        raise GridError("edge data disagree at the corner")
    base = bottom[..., None, :] + left[..., :, None] - bottom[..., :1][..., None, :]
    Cx = cumulative_matrix(grid.nx, grid.hx, p.quadrature)
    Cy = cumulative_matrix(grid.ny, grid.hy, p.quadrature)
    u = base.copy()
    change = np.inf
    for it in range(1, p.max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            rhs = np.asarray(F(u), float)
        with np.errstate(over="ignore", invalid="ignore"):
            new = base + Cy @ rhs @ Cx.T
        if not np.all(np.isfinite(new)):
            raise ConvergenceError(f"Goursat iteration diverged after {it} steps")
        change = float(np.max(np.abs(new - u)))
        u = new
        if change <= p.tol:
            return GoursatResult(u, grid, it, change)
    raise ConvergenceError(f"Goursat iteration did not converge in {p.max_iter} steps; last change {change:.3e}")


# ---------------------------------------------------------------------------
# simple families


def make_constant(beta0: float, gamma0: float, V0: float, W0: float, grid: GridSpec) -> Coeffs:
    return Coeffs.from_values(grid, beta0, gamma0, V0, W0)


def make_rotation(profile: Callable, c: float, grid: GridSpec) -> Coeffs:
    """``beta = gamma = profile(x + y)`` and ``V = W = 3/2 beta**2 + c``."""
    X, Y = grid.mesh()
    be = np.broadcast_to(np.asarray(profile(X + Y), float), grid.shape)
    vw = 1.5 * be**2 + c
    return Coeffs.from_values(grid, be, be, vw, vw)


def make_godeaux_rozet_const(beta0: float, grid: GridSpec) -> Coeffs:
    if beta0 == 0:
        raise ValueError("beta0 must be nonzero")
    return Coeffs.from_values(grid, beta0, -1.0 / beta0**2, beta0**4, 0.0)


def make_projmin_const(beta0: float, gamma0: float, grid: GridSpec) -> Coeffs:
    if beta0 == 0 or gamma0 == 0:
        raise ValueError("beta0 and gamma0 must be nonzero")
    return Coeffs.from_values(grid, beta0, gamma0, 1.0 / gamma0**2, 1.0 / beta0**2)


def lambda_shift(c: Coeffs, lam: float, kind: str, tol: float = PRECONDITION_TOL) -> Coeffs:
    """Shift the free constant of an R0 or R field.

    For ``r0`` the field must satisfy ``(ln beta)_xy = 0``, so ``beta`` splits
    as ``X(x) Y(y)``; ``W`` is shifted by ``lam / Y**2`` with ``Y``
    normalised to 1 at the grid origin, which is ``W + lam`` when
    ``beta = 1``. For ``r`` both ``V`` and ``W`` are shifted by ``lam``.
    """
    if kind == "r0":
        res = class_residual(c, "R0_x")
        if res > tol:
            raise PreconditionError(f"r0 shift needs (ln beta)_xy = 0; residual {res:.3e}")
        col = c.beta.values[:, 0]
        if np.any(col == 0):
            raise PreconditionError("beta vanishes on the reference column")
        Y = col / col[0]
        return c.replace(W=c.W + (lam / Y**2)[:, None])
    if kind == "r":
        res = class_residual(c, "R")
        if res > tol:
            raise PreconditionError(f"r shift needs beta_y = gamma_x; residual {res:.3e}")
        return c.replace(V=c.V + lam, W=c.W + lam)
    raise ValueError(f"unknown shift kind {kind!r}")


# ---------------------------------------------------------------------------
# Roman surface, cubic constraints, Kummer quartics


@dataclass(frozen=True)
class RomanSpec:
    """Roman surface data: ``(f')**3 = q(f)**2`` and ``(g')**3 = q~(g)**2``.

    ``q(f) = a0 + a1 f + a2 f**2`` and ``q~(g) = a0 - a1 g + a2 g**2``. ``f0``
    and ``g0`` are the values at the grid origin (default: the origin
    coordinates themselves). The real cube root is single valued, so the
    derivatives carry no branch choice; ``sign`` picks the sign of beta.
    """

    a0: float = 1.0
    a1: float = 0.0
    a2: float = 0.0
    f0: float | None = None
    g0: float | None = None
    sign: float = 1.0


@dataclass(frozen=True)
class KummerSpec:
    """Kummer quartic data: ``(f')**3 = P(f)``, ``(g')**3 = P(-g)``.

    ``coeffs`` lists P from the constant term upwards (degree at most 6).
    ``c`` is the constant in ``(ln beta**2)_xy = c beta**2``, which the
    Kummer conditions fix at 8/9.
    """

    coeffs: tuple = (1.0,)
    f0: float | None = None
    g0: float | None = None
    c: float = 8.0 / 9.0
    sign: float = 1.0


def _integrate_ode(rhs: Callable, start: float, nodes: np.ndarray) -> np.ndarray:
    """Solve ``u' = rhs(u)`` on the grid nodes from ``u(nodes[0]) = start``."""
    if len(nodes) < 2:
        return np.array([start])
    sol = solve_ivp(lambda t, u: [rhs(u[0])], (nodes[0], nodes[-1]), [start], method="DOP853",
                    t_eval=nodes, rtol=1e-13, atol=1e-14)
    if not sol.success:
        raise PreconditionError(f"ODE integration failed: {sol.message}")
    return sol.y[0]


def _liouville_fields(grid: GridSpec, f, fp, fpp, fppp, g, gp, gpp, gppp, K: float, sign: float):
    """``beta**2 = K f' g' / (f + g)**2`` with exact log-derivatives of beta."""
    F, G = f[None, :], g[:, None]
    Fp, Fpp, Fppp = fp[None, :], fpp[None, :], fppp[None, :]
    Gp, Gpp, Gppp = gp[:, None], gpp[:, None], gppp[:, None]
    s = F + G
    prod = K * Fp * Gp
    valid = (np.abs(s) > 1e-10 * max(1.0, np.max(np.abs(s)))) & (prod > 0)
    s_safe = np.where(valid, s, 1.0)
    beta = np.where(valid, sign * np.sqrt(np.where(valid, prod, 1.0)) / np.abs(s_safe), 0.0)
    Fp_s = np.where(valid, Fp, 1.0)
    Gp_s = np.where(valid, Gp, 1.0)
    lx = 0.5 * Fpp / Fp_s - Fp / s_safe
    ly = 0.5 * Gpp / Gp_s - Gp / s_safe
    lxx = 0.5 * (Fppp / Fp_s - (Fpp / Fp_s) ** 2) - Fpp / s_safe + (Fp / s_safe) ** 2
    lyy = 0.5 * (Gppp / Gp_s - (Gpp / Gp_s) ** 2) - Gpp / s_safe + (Gp / s_safe) ** 2
    bc = lambda a: np.broadcast_to(a, grid.shape)
    return valid, bc(beta), bc(lx), bc(ly), bc(lxx), bc(lyy)


def make_roman(spec: RomanSpec, grid: GridSpec) -> Coeffs:
    """Roman surface of Steiner from the integrated ``f, g`` and exact derivatives."""
    a0, a1, a2 = spec.a0, spec.a1, spec.a2
    qf = lambda u: a0 + a1 * u + a2 * u * u
    qg = lambda u: a0 - a1 * u + a2 * u * u
    f0 = grid.x0 if spec.f0 is None else spec.f0
    g0 = grid.y0 if spec.g0 is None else spec.g0

    def derivs(q, dq, t0, nodes):
        u = _integrate_ode(lambda v: np.abs(q(v)) ** (2.0 / 3.0), t0, nodes)
        qv, q1 = q(u), dq(u)
        return u, np.abs(qv) ** (2.0 / 3.0), (2.0 / 3.0) * np.cbrt(qv) * q1, (2.0 / 9.0) * q1**2 + (4.0 / 3.0) * a2 * qv

    f, fp, fpp, fppp = derivs(qf, lambda u: a1 + 2 * a2 * u, f0, grid.x)
    g, gp, gpp, gppp = derivs(qg, lambda u: -a1 + 2 * a2 * u, g0, grid.y)
    valid, be, lx, ly, lxx, lyy = _liouville_fields(grid, f, fp, fpp, fppp, g, gp, gpp, gppp, 9.0 / 4.0, spec.sign)
    V = -0.5 * lxx + 0.125 * lx**2 - 2.5 * be * ly
    W = -0.5 * lyy + 0.125 * ly**2 - 2.5 * be * lx
    mk = lambda a: ScalarField(grid, np.where(valid, a, 0.0), valid)
    return Coeffs(mk(be), mk(be), mk(V), mk(W))


def _check_isothermal(c: Coeffs, tol: float, what: str) -> None:
    if (c.beta - c.gamma).sup() > tol * max(1.0, c.beta.sup()):
        raise PreconditionError(f"{what} needs an isothermally asymptotic field (beta = gamma)")


def cubic_constraint_residual(c: Coeffs, form: str = "cubic", tol: float = PRECONDITION_TOL) -> ResidualReport:
    """``V`` and ``W`` minus their cubic-surface (or Roman, ``form="roman"``) expressions."""
    _check_isothermal(c, tol, "the cubic constraint")
    sgn = {"cubic": 2.5, "roman": -2.5}[form]
    be = c.beta
    lx, ly = log_derivative(be, "x"), log_derivative(be, "y")
    return ResidualReport.from_fields({
        "V": c.V - (-0.5 * log_second_derivative(be, "x") + 0.125 * lx * lx + sgn * d(be, "y")),
        "W": c.W - (-0.5 * log_second_derivative(be, "y") + 0.125 * ly * ly + sgn * d(be, "x")),
    })


def roman_residual(c: Coeffs) -> ResidualReport:
    """The three equations satisfied by beta on a Roman surface."""
    be = c.beta
    return ResidualReport.from_fields({
        "beta_xx": d(be, "xx") + (4.0 / 3.0) * be * d(be, "y"),
        "beta_yy": d(be, "yy") + (4.0 / 3.0) * be * d(be, "x"),
        "liouville": log_mixed_derivative(be) - (4.0 / 9.0) * be * be,
    })


def make_kummer(spec: KummerSpec, grid: GridSpec) -> Coeffs:
    """Kummer quartic from ``(f')**3 = P(f)``, ``(g')**3 = P(-g)`` with exact derivatives."""
    coeffs = tuple(float(v) for v in spec.coeffs)
    if len(coeffs) > 7:
        raise ValueError("P has degree at most 6")
    P = np.polynomial.Polynomial(coeffs)
    P1, P2 = P.deriv(1), P.deriv(2)
    f0 = grid.x0 if spec.f0 is None else spec.f0
    g0 = grid.y0 if spec.g0 is None else spec.g0
    if not np.isclose(spec.c, 8.0 / 9.0, rtol=0, atol=1e-12):
        raise ValueError("Kummer quartics have (ln beta^2)_xy = (8/9) beta^2; c must be 8/9")

    def rhs_f(u):
        v = P(u)
        if v <= 0:
            raise PreconditionError(f"P(f) = {v:.3e} is not positive along the range")
        return np.cbrt(v)

    def rhs_g(u):
        v = P(-u)
        if v <= 0:
            raise PreconditionError(f"P(-g) = {v:.3e} is not positive along the range")
        return np.cbrt(v)

    f = _integrate_ode(rhs_f, f0, grid.x)
    g = _integrate_ode(rhs_g, g0, grid.y)
    Pf, Pg = P(f), P(-g)
    if np.any(Pf <= 0) or np.any(Pg <= 0):
        raise PreconditionError("P is not positive along the integrated range")
    fp, gp = np.cbrt(Pf), np.cbrt(Pg)
    fpp = P1(f) / (3 * fp)
    gpp = -P1(-g) / (3 * gp)
    fppp = P2(f) / 3 - P1(f) ** 2 / (9 * Pf)
    gppp = P2(-g) / 3 - P1(-g) ** 2 / (9 * Pg)
    K = 2.0 / spec.c
    valid, be, lx, ly, lxx, lyy = _liouville_fields(grid, f, fp, fpp, fppp, g, gp, gpp, gppp, K, spec.sign)
    V = (11.0 / 8.0) * lxx + 2 * lx**2
    W = (11.0 / 8.0) * lyy + 2 * ly**2
    mk = lambda a: ScalarField(grid, np.where(valid, a, 0.0), valid)
    return Coeffs(mk(be), mk(be), mk(V), mk(W))


def _kummer_p(b2: ScalarField) -> ScalarField:
    """``((b2 (b2)_y)_y / b2)_y - ((b2 (b2)_x)_x / b2)_x`` expanded into direct derivatives."""
    out = []
    for ax in ("y", "x"):
        b1, bb, bbb = d(b2, ax), d(b2, ax * 2), d(b2, ax * 3)
        out.append(2 * b1 * bb / b2 - b1 * b1 * b1 / (b2 * b2) + bbb)
    return out[0] - out[1]


def kummer_residual(c: Coeffs) -> ResidualReport:
    """Kummer conditions on V, W and the fourth-order equation for beta**2."""
    be = c.beta
    b2 = be * be
    lx, ly = log_derivative(be, "x"), log_derivative(be, "y")
    return ResidualReport.from_fields({
        "V": c.V - ((11.0 / 8.0) * log_second_derivative(be, "x") + 2 * lx * lx),
        "W": c.W - ((11.0 / 8.0) * log_second_derivative(be, "y") + 2 * ly * ly),
        "liouville": log_mixed_derivative(be) - (4.0 / 9.0) * b2,
        "p": _kummer_p(b2),
    })


def constant_curvature_metric(f, fp, g, gp, c: float, grid: GridSpec) -> ScalarField:
    """``beta = sqrt(f' g' / c) / |f + g|``, the general solution of ``(ln beta)_xy = c beta**2``."""
    F = np.asarray(f(grid.x), float)[None, :]
    G = np.asarray(g(grid.y), float)[:, None]
    prod = np.asarray(fp(grid.x), float)[None, :] * np.asarray(gp(grid.y), float)[:, None] / c
    ok = prod > 0
    return ScalarField(grid, np.sqrt(np.where(ok, prod, 1.0)) / np.abs(F + G), ok)


@dataclass(frozen=True)
class ExtensionState:
    A: ScalarField
    B: ScalarField
    F: ScalarField
    defects: dict


def extension_system(beta: ScalarField, c: float) -> tuple[MatrixField, MatrixField]:
    """Affine first-order system for ``(A, B, F, 1)``."""
    b2 = beta * beta
    lx, ly = 2 * log_derivative(beta, "x"), 2 * log_derivative(beta, "y")
    k = 1.5 * (1 - c)
    bx, by = d(b2, "x"), d(b2, "y")
    Gx = bx * bx / b2 + d(b2, "xx")
    Gy = by * by / b2 + d(b2, "yy")
    parts = (b2, lx, ly, Gx, Gy, bx, by)
    valid = np.logical_and.reduce([p.valid for p in parts])
    b2, lx, ly, Gx, Gy, bx, by = (p.filled() for p in parts)
    g = beta.grid
    X = np.zeros(g.shape + (4, 4))
    Y = np.zeros(g.shape + (4, 4))
    X[..., 0, 0], X[..., 0, 2] = -lx, 1.0
    X[..., 1, 3] = k * by
    X[..., 2, 1], X[..., 2, 3] = 2 * c * b2, k * Gy
    Y[..., 0, 3] = k * bx
    Y[..., 1, 1], Y[..., 1, 2] = -ly, 1.0
    Y[..., 2, 0], Y[..., 2, 3] = 2 * c * b2, k * Gx
    return MatrixField(g, X, valid), MatrixField(g, Y, valid)


def constant_curvature_extension(beta: ScalarField, c: float, A0: float = 0.0, B0: float = 0.0,
                                 F0: float = 0.0, tol: float = 1e-3) -> tuple[Coeffs, ExtensionState]:
    """Three-parameter family of projectively applicable surfaces over ``beta``.

    ``beta`` must satisfy ``(ln beta)_xy = c beta**2``; in this normalisation
    Kummer quartics have ``c = 4/9``. ``A, B, F`` are transported over the grid by the same sweep integrator as
    the frames; ``V, W`` follow from ``A, B``.
    """
    if c == 1:
        raise PreconditionError("c = 1 is the improper affine sphere case; A = B = 0 there")
    beta = safe_divisor(beta)
    defect = (log_mixed_derivative(beta) - c * beta * beta).sup() / max(1.0, (c * beta * beta).sup())
    if defect > tol:
        raise PreconditionError(f"beta does not satisfy (ln beta)_xy = c beta^2; defect {defect:.3e}")
    X, Y = extension_system(beta, c)
    fr = integrate_matrices(X, Y, np.array([[A0], [B0], [F0], [1.0]]))
    g = beta.grid
    A = ScalarField(g, fr.values[..., 0, 0], fr.valid)
    B = ScalarField(g, fr.values[..., 1, 0], fr.valid)
    F = ScalarField(g, fr.values[..., 2, 0], fr.valid)
    b2 = beta * beta
    defects = {
        "A_y": (d(A, "y") - 1.5 * (1 - c) * d(b2, "x")).sup(),
        "B_x": (d(B, "x") - 1.5 * (1 - c) * d(b2, "y")).sup(),
        "AB": (d(b2, "x") * A + b2 * d(A, "x") - d(b2, "y") * B - b2 * d(B, "y")).sup(),
    }
    worst = max(defects.values())
    if worst > tol * max(1.0, (beta * beta).sup()):
        raise PreconditionError(f"compatibility defect {worst:.3e} of the A, B, F system exceeds tolerance")
    lx, ly = log_derivative(beta, "x"), log_derivative(beta, "y")
    V = log_second_derivative(beta, "x") + 0.5 * lx * lx + A
    W = log_second_derivative(beta, "y") + 0.5 * ly * ly + B
    return Coeffs(beta, beta, V, W), ExtensionState(A, B, F, defects)


# ---------------------------------------------------------------------------
# affine spheres, pseudospherical and R-net families


def tzitzeica_residual(beta: ScalarField, c: float) -> ScalarField:
    return log_mixed_derivative(beta) - beta * beta - c / safe_divisor(beta)


def make_affine_sphere(beta, c: float, grid: GridSpec | None = None, tol: float = 1e-6) -> Coeffs:
    """Affine sphere with Tzitzeica ``beta`` (a field, or a constant on ``grid``)."""
    if not isinstance(beta, ScalarField):
        if grid is None:
            raise ValueError("a constant beta needs a grid")
        beta = ScalarField.constant(grid, float(beta))
    res = tzitzeica_residual(beta, c)
    scale = max(1.0, (beta * beta).sup(), abs(c) / max(np.min(np.abs(beta.valid_values())), 1e-300))
    if res.sup() > tol * scale:
        raise PreconditionError(f"beta fails the Tzitzeica equation; residual {res.sup():.3e}")
    lx, ly = log_derivative(beta, "x"), log_derivative(beta, "y")
    V = log_second_derivative(beta, "x") + 0.5 * lx * lx
    W = log_second_derivative(beta, "y") + 0.5 * ly * ly
    return Coeffs(beta, beta, V, W)


def _phi_parts(phi, grid: GridSpec | None, derivs: dict | None):
    """Return the potential and its first and second derivatives as fields."""
    if not isinstance(phi, ScalarField):
        phi = as_field(grid, phi)
    derivs = derivs or {}
    g = phi.grid
    out = {"": phi}
    for k in ("x", "y", "xx", "yy", "xy"):
        out[k] = as_field(g, derivs[k]) if k in derivs else d(phi, k)
    return out


def sine_gordon_kink(a: float = 1.0):
    """``phi = 4 arctan(exp(a x - y / a))`` and its derivatives as callables of ``(X, Y)``."""
    th = lambda X, Y: a * X - Y / a
    phi = lambda X, Y: 4 * np.arctan(np.exp(th(X, Y)))
    s = lambda X, Y: 2 / np.cosh(th(X, Y))
    ds = lambda X, Y: -2 * np.tanh(th(X, Y)) / np.cosh(th(X, Y))
    return phi, {
        "x": lambda X, Y: a * s(X, Y), "y": lambda X, Y: -s(X, Y) / a,
        "xx": lambda X, Y: a * a * ds(X, Y), "yy": lambda X, Y: ds(X, Y) / (a * a),
        "xy": lambda X, Y: -ds(X, Y),
    }


def make_pseudospherical(kind: str, phi, grid: GridSpec | None = None, derivs: dict | None = None,
                         tol: float = 1e-4) -> Coeffs:
    """Projective transforms of K = -1 (``trig``) or Lorentzian K = +1 (``hyperbolic``) surfaces."""
    if kind not in ("trig", "hyperbolic"):
        raise ValueError("kind must be 'trig' or 'hyperbolic'")
    sn, cs = (np.sin, np.cos) if kind == "trig" else (np.sinh, np.cosh)
    p = _phi_parts(phi, grid, derivs)
    res = (p["xy"] + p[""].apply(sn)).sup()
    if res > tol:
        raise PreconditionError(f"phi fails phi_xy = -{sn.__name__}(phi); residual {res:.3e}")
    s = safe_divisor(p[""].apply(sn))
    co = p[""].apply(cs)
    be = -p["x"] / s
    ga = -p["y"] / s
    # (beta cos)_x and (gamma cos)_y by the product and quotient rules
    sx = co * p["x"]
    sy = co * p["y"]
    cx = (-1.0 if kind == "trig" else 1.0) * s * p["x"]
    cy = (-1.0 if kind == "trig" else 1.0) * s * p["y"]
    bex = -(p["xx"] / s - p["x"] * sx / (s * s))
    gay = -(p["yy"] / s - p["y"] * sy / (s * s))
    V = 1 + 0.5 * be * be * co * co + bex * co + be * cx
    W = 1 + 0.5 * ga * ga * co * co + gay * co + ga * cy
    return Coeffs(be, ga, V, W)


def solve_rnet4(grid: GridSpec, xi_data=0.0, eta_data=0.0, refine: int = 2, tol: float = 1e-12,
                max_iter: int = 200) -> GoursatResult:
    """Solve ``phi_xi eta = cosh phi`` on the characteristic box covering ``grid``.

    ``xi_data`` is ``phi`` on the edge ``eta = eta_min`` as a function of
    ``xi``; ``eta_data`` is ``phi`` on ``xi = xi_min`` as a function of ``eta``.
    """
    x1 = grid.x0 + (grid.nx - 1) * grid.hx
    y1 = grid.y0 + (grid.ny - 1) * grid.hy
    xi0, xi1 = grid.x0 + grid.y0, x1 + y1
    et0, et1 = grid.x0 - y1, x1 - grid.y0
    h = min(grid.hx, grid.hy) / refine
    nxi = int(np.ceil((xi1 - xi0) / h - 1e-9)) + 1
    net = int(np.ceil((et1 - et0) / h - 1e-9)) + 1
    cg = GridSpec(max(nxi, 7), max(net, 7), xi0, et0, (xi1 - xi0) / (max(nxi, 7) - 1), (et1 - et0) / (max(net, 7) - 1))
    edge = lambda v: (lambda t: np.full_like(t, float(v))) if np.isscalar(v) else v
    prob = GoursatProblem("cosh-rnet4", bottom=edge(xi_data), left=edge(eta_data), tol=tol, max_iter=max_iter)
    return solve_goursat(prob, cg)


def make_rnet4(grid: GridSpec, phi=None, xi_data=0.0, eta_data=0.0, tol: float = 1e-3) -> Coeffs:
    """Surfaces with an R-net of period 4.

    ``phi`` may be supplied directly (field, callable or constant);
    otherwise it is solved in characteristic coordinates from the edge data
    and resampled by quintic splines.
    """
    if phi is None:
        sol = solve_rnet4(grid, xi_data, eta_data)
        spl = RectBivariateSpline(sol.grid.y, sol.grid.x, sol.u, kx=5, ky=5)
        X, Y = grid.mesh()
        xi, eta = X + Y, X - Y
        vals = spl.ev(eta, xi)
        phi_x = spl.ev(eta, xi, dy=1) + spl.ev(eta, xi, dx=1)
        phi_y = spl.ev(eta, xi, dy=1) - spl.ev(eta, xi, dx=1)
        p = {"": ScalarField(grid, vals), "x": ScalarField(grid, phi_x), "y": ScalarField(grid, phi_y)}
    else:
        f = phi if isinstance(phi, ScalarField) else as_field(grid, phi)
        p = {"": f, "x": d(f, "x"), "y": d(f, "y")}
    res = (d(p[""], "xx") - d(p[""], "yy") - 4 * p[""].apply(np.cosh)).sup()
    if res > tol * max(1.0, (4 * p[""].apply(np.cosh)).sup()):
        raise PreconditionError(f"phi fails phi_xx - phi_yy = 4 cosh(phi); residual {res:.3e}")
    be, ga = 0.5 * p["x"], 0.5 * p["y"]
    sh = p[""].apply(np.sinh)
    V = 0.25 * p["x"] ** 2 + 0.125 * p["y"] ** 2 + sh
    W = 0.25 * p["y"] ** 2 + 0.125 * p["x"] ** 2 - sh
    return Coeffs(be, ga, V, W)


def minimal_potential(X, Y):
    """Default Liouville potential ``ln(2 / (1 + x**2 + y**2))``.

    Returns the values, first derivatives and the two pure second derivatives.
    """
    q = 1 + X**2 + Y**2
    return (np.log(2 / q), -2 * X / q, -2 * Y / q,
            (2 * X**2 - 2 * Y**2 - 2) / q**2, (2 * Y**2 - 2 * X**2 - 2) / q**2)


def make_minimal(grid: GridSpec, phi=None, tol: float = 1e-6) -> Coeffs:
    """Minimal surfaces from ``phi_xx + phi_yy = -exp(2 phi)``; Jonas class."""
    if phi is None:
        X, Y = grid.mesh()
        P, px, py, pxx, pyy = (ScalarField(grid, a) for a in minimal_potential(X, Y))
    else:
        P = phi if isinstance(phi, ScalarField) else as_field(grid, phi)
        px, py, pxx, pyy = d(P, "x"), d(P, "y"), d(P, "xx"), d(P, "yy")
    e2 = (2 * P).apply(np.exp)
    res = (pxx + pyy + e2).sup()
    if res > tol * max(1.0, e2.sup()):
        raise PreconditionError(f"phi fails the Liouville equation; residual {res:.3e}")
    return Coeffs(py, px, 0.5 * px * px - py * py - e2, 0.5 * py * py - px * px - e2)


def liouville_residual(phi: ScalarField) -> ScalarField:
    return d(phi, "xx") + d(phi, "yy") + (2 * phi).apply(np.exp)


def make_demoulin(grid: GridSpec, source: str = "constants", bottom=None, left=None,
                  tol: float = 1e-3) -> Coeffs:
    """Demoulin surfaces in the normalisation ``k = -1/beta``, ``l = -1/gamma``.

    ``source="constants"`` gives ``(-1, -1, 0, 0)``. ``source="goursat"``
    solves the coupled Tzitzeica system for ``u = ln(-beta)``,
    ``v = ln(-gamma)`` from edge data ``bottom(x)``, ``left(y)`` returning
    ``(u, v)`` pairs.
    """
    if source == "constants":
        return Coeffs.from_values(grid, -1.0, -1.0, 0.0, 0.0)
    if source != "goursat":
        raise ValueError("source must be 'constants' or 'goursat'")
    if bottom is None or left is None:
        raise ValueError("goursat source needs bottom and left edge data")
    sol = solve_goursat(GoursatProblem("coupled-tzitzeica", bottom, left), grid)
    u, v = sol.field(0), sol.field(1)
    be, ga = -u.apply(np.exp), -v.apply(np.exp)
    vx, uy = d(v, "x"), d(u, "y")
    V = d(v, "xx") + 0.5 * vx * vx
    W = d(u, "yy") + 0.5 * uy * uy
    c = Coeffs(be, ga, V, W)
    res = max(
        (log_mixed_derivative(be) - be * ga - 1 / be).sup(),
        (log_mixed_derivative(ga) - be * ga - 1 / ga).sup(),
    )
    if res > tol:
        raise PreconditionError(f"coupled Tzitzeica residual {res:.3e} exceeds {tol:.1e}")
    return c


def solve_tzitzeica(grid: GridSpec, c: float, bottom, left, tol: float = 1e-12) -> ScalarField:
    """``beta = exp(u)`` with ``u_xy = exp(2u) + c exp(-u)`` from Goursat data for ``u``."""
    sol = solve_goursat(GoursatProblem("tzitzeica", bottom, left, params={"c": c}, tol=tol), grid)
    return sol.field().apply(np.exp)


FAMILIES = ("constant", "rotation", "roman", "kummer", "extension", "affine-sphere", "pseudospherical",
            "rnet4", "minimal", "demoulin", "godeaux-rozet", "projmin")
