"""Congruences W: the Dirac equation, the derived chain, W-transforms and Bäcklund maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    PRECONDITION_TOL,
    Coeffs,
    Derived,
    PreconditionError,
    ResidualReport,
    class_residual,
    derived_quantities,
)
from .families import ConvergenceError, cumulative_matrix
from .frames import FrameField, MatrixField, integrate_matrices, system_matrices
from .grid import (
    EPS_DIV_REL,
    GridError,
    ScalarField,
    d,
    diff_array,
    dilate,
    log_derivative,
    log_mixed_derivative,
)

MASK_BUFFER = 2


# ---------------------------------------------------------------------------
# Dirac equation


@dataclass(frozen=True)
class DiracPair:
    """Solution of ``u1_x = beta u2``, ``u2_y = gamma u1``."""

    u1: ScalarField
    u2: ScalarField
    iterations: int = 0
    defect: float = 0.0

    def residual(self, c: Coeffs, tol: float | None = None) -> ResidualReport:
        return ResidualReport.from_fields({
            "u1_x": d(self.u1, "x") - c.beta * self.u2,
            "u2_y": d(self.u2, "y") - c.gamma * self.u1,
        }, tol)


def _edge(data, coords: np.ndarray) -> np.ndarray:
    if callable(data):
        return np.broadcast_to(np.asarray(data(coords), float), coords.shape).copy()
    arr = np.asarray(data, float)
    if arr.ndim == 0:
        return np.full(coords.shape, float(arr))
    if arr.shape != coords.shape:
        raise GridError(f"edge data has {arr.shape[0]} samples, expected {len(coords)}")
    return arr


def solve_dirac(c: Coeffs, u1_left, u2_bottom, tol: float = 1e-12, max_iter: int = 500,
                quadrature: str = "lagrange6") -> DiracPair:
    """Alternating characteristic sweeps for the Dirac equation.

    ``u1`` is integrated in x from its values on the left edge, ``u2`` in y
    from the bottom edge, and the pair is iterated to a fixed point.
    """
    g = c.grid
    left = _edge(u1_left, g.y)
    bottom = _edge(u2_bottom, g.x)
    if not (np.all(np.isfinite(left)) and np.all(np.isfinite(bottom))):
        raise ValueError("boundary data must be finite")
    valid = c.beta.valid & c.gamma.valid
    valid = np.logical_and.accumulate(np.logical_and.accumulate(valid, axis=0), axis=1)
    be, ga = c.beta.filled(), c.gamma.filled()
    Cx = cumulative_matrix(g.nx, g.hx, quadrature)
    Cy = cumulative_matrix(g.ny, g.hy, quadrature)
    u1 = np.broadcast_to(left[:, None], g.shape).copy()
    u2 = np.broadcast_to(bottom[None, :], g.shape).copy()
    change = np.inf
    for it in range(1, max_iter + 1):
        new1 = left[:, None] + (be * u2) @ Cx.T
        new2 = bottom[None, :] + Cy @ (ga * new1)
        if not (np.all(np.isfinite(new1)) and np.all(np.isfinite(new2))):
            raise ConvergenceError(f"Dirac sweeps diverged after {it} iterations")
        scale = max(1.0, np.max(np.abs(new1)), np.max(np.abs(new2)))
        change = max(np.max(np.abs(new1 - u1)), np.max(np.abs(new2 - u2))) / scale
        u1, u2 = new1, new2
        if change <= tol:
            defect = max(
                np.max(np.abs(u1 - left[:, None] - (be * u2) @ Cx.T)),
                np.max(np.abs(u2 - bottom[None, :] - Cy @ (ga * u1))),
            )
            return DiracPair(ScalarField(g, u1, valid), ScalarField(g, u2, valid), it, float(defect))
    raise ConvergenceError(f"Dirac sweeps did not converge in {max_iter} iterations; last change {change:.3e}")


# ---------------------------------------------------------------------------
# derived chain


@dataclass(frozen=True)
class Chain:
    """The quantities A, B, P, Q, H, K and S built on a Dirac pair.

    ``Sx``, ``Sy`` default to ``H u2`` and ``-K u1``; ``Sxx``, ``Syy`` may be
    supplied when a closed form is known and are differentiated otherwise.
    """

    A: ScalarField
    B: ScalarField
    P: ScalarField
    Q: ScalarField
    H: ScalarField
    K: ScalarField
    S: ScalarField
    coeffs: Coeffs
    derived: Derived
    Sx: ScalarField | None = None
    Sy: ScalarField | None = None
    Sxx: ScalarField | None = None
    Syy: ScalarField | None = None

    def s_derivatives(self, dp: DiracPair):
        Sx = self.H * dp.u2 if self.Sx is None else self.Sx
        Sy = -self.K * dp.u1 if self.Sy is None else self.Sy
        Sxx = d(Sx, "x") if self.Sxx is None else self.Sxx
        Syy = d(Sy, "y") if self.Syy is None else self.Syy
        return Sx, Sy, Sxx, Syy


def s_value(u1, u2, A, B, P, Q):
    return Q * u2 - P * u1 + 0.5 * (A * A - B * B)


def derived_chain(c: Coeffs, dq: Derived | None, dp: DiracPair) -> Chain:
    """Differentiate a Dirac pair into the chain quantities."""
    dq = derived_quantities(c) if dq is None else dq
    be, ga = c.beta, c.gamma
    by, gx = log_derivative(be, "y"), log_derivative(ga, "x")
    u1, u2 = dp.u1, dp.u2
    A = d(u1, "y") - by * u1
    B = d(u2, "x") - gx * u2
    P = d(A, "y") - dq.a * u1
    Q = d(B, "x") - dq.b * u2
    H = d(Q, "x") - dq.b * B + gx * Q + be * dq.a * u1 - be * P
    K = d(P, "y") - dq.a * A + by * P + ga * dq.b * u2 - ga * Q
    return Chain(A, B, P, Q, H, K, s_value(u1, u2, A, B, P, Q), c, dq)


def chain_residual(ch: Chain, dp: DiracPair, tol: float | None = None) -> ResidualReport:
    """Consistency residuals of a chain against its defining relations."""
    c, dq = ch.coeffs, ch.derived
    u1, u2 = dp.u1, dp.u2
    return ResidualReport.from_fields({
        "A_x": d(ch.A, "x") - dq.k * u1,
        "B_y": d(ch.B, "y") - dq.l * u2,
        "S_x": d(ch.S, "x") - ch.H * u2,
        "S_y": d(ch.S, "y") + ch.K * u1,
        "H_y": d(ch.H, "y") + c.beta * ch.K,
        "K_x": d(ch.K, "x") + c.gamma * ch.H,
    }, tol)


# ---------------------------------------------------------------------------
# W-transform


def _small(f: ScalarField, *terms: ScalarField) -> np.ndarray:
    """Nodes where ``|f|`` is negligible against the sup of ``f`` or of the terms it is built from."""
    scale = max([f.sup()] + [t.sup() for t in terms] + [1e-300])
    return np.abs(f.values) < EPS_DIV_REL * scale


def w_transform(c: Coeffs, dp: DiracPair, ch: Chain, buffer: int = MASK_BUFFER) -> Coeffs:
    """Coefficients of the second focal surface of the congruence.

    Nodes within ``buffer`` of a zero of ``S``, ``u1`` or ``u2`` are masked.
    """
    s_terms = (ch.Q * dp.u2, ch.P * dp.u1, ch.A * ch.A, ch.B * ch.B)
    near_zero = dilate(_small(ch.S, *s_terms) | _small(dp.u1) | _small(dp.u2), buffer)
    S = ch.S.masked(near_zero)
    u1, u2 = dp.u1.masked(near_zero), dp.u2.masked(near_zero)
    Sx, Sy, Sxx, Syy = ch.s_derivatives(dp)
    by, gx = log_derivative(c.beta, "y"), log_derivative(c.gamma, "x")
    u2x = gx * u2 + ch.B
    u1y = by * u1 + ch.A
    lx, ly = Sx / S, Sy / S
    bt = ch.H * u1 / S - c.beta
    gt = -ch.K * u2 / S - c.gamma
    Vt = c.V - lx * u2x / u2 + 1.5 * lx * lx - Sxx / S
    Wt = c.W - ly * u1y / u1 + 1.5 * ly * ly - Syy / S
    return Coeffs(bt, gt, Vt, Wt)


def identity_residual(c: Coeffs, ch: Chain, out: Coeffs, tol: float | None = None) -> ResidualReport:
    """``beta~ gamma~ - (beta gamma - (ln S)_xy)`` with the log-derivative by finite differences."""
    S = ch.S.masked(~out.valid)
    return ResidualReport.from_fields({
        "identity": out.beta * out.gamma - (c.beta * c.gamma - log_mixed_derivative(S)),
    }, tol)


# ---------------------------------------------------------------------------
# the new radius vector


@dataclass(frozen=True)
class RadiusResult:
    r_prime: np.ndarray
    r_tilde: np.ndarray
    valid: np.ndarray
    residuals: dict


def _rows(frame: FrameField):
    if frame.values.shape[2] != 4:
        raise ValueError("transform_radius needs a Wilczynski frame (r, r1, r2, eta)")
    return [frame.values[:, :, i, :] for i in range(4)]


def transform_radius(frame: FrameField, dp: DiracPair, ch: Chain, out: Coeffs | None = None) -> RadiusResult:
    """``r' = u2 r1 - u1 r2 + (A - B)/2 r`` with its reconstruction and shape checks.

    The reported residuals are: the relative error of recovering ``r`` from
    ``r'`` and its derivatives, the tangency determinant of ``r, r', r'_x,
    r'_y``, the two asymptotic equations of ``r'`` and, when ``out`` is
    given, the canonical equations of ``r' / sqrt|S|``.
    """
    c, dq = ch.coeffs, ch.derived
    g = frame.grid
    if g != c.grid:
        raise GridError("frame and chain live on different grids")
    by, gx = log_derivative(c.beta, "y"), log_derivative(c.gamma, "x")
    parts = dict(u1=dp.u1, u2=dp.u2, A=ch.A, B=ch.B, P=ch.P, Q=ch.Q, S=ch.S, be=c.beta, ga=c.gamma,
                 by=by, gx=gx, k=dq.k, l=dq.l, a=dq.a, b=dq.b)
    valid = frame.valid.copy()
    for f in parts.values():
        valid &= f.valid
    v = {n: f.filled() for n, f in parts.items()}
    r, r1, r2, eta = _rows(frame)
    X, Y = system_matrices(c, dq, "wilczynski4")
    # coefficients of r' in the frame and their derivatives along x and y
    cf = np.stack([0.5 * (v["A"] - v["B"]), v["u2"], -v["u1"], 0 * v["u1"]], axis=-1)
    cx = np.stack([0.5 * (v["k"] * v["u1"] - v["b"] * v["u2"] - v["Q"]), v["gx"] * v["u2"] + v["B"],
                   -v["be"] * v["u2"], 0 * v["u1"]], axis=-1)
    cy = np.stack([0.5 * (v["a"] * v["u1"] + v["P"] - v["l"] * v["u2"]), v["ga"] * v["u1"],
                   -(v["by"] * v["u1"] + v["A"]), 0 * v["u1"]], axis=-1)
    dx = cx + np.einsum("...i,...ij->...j", cf, X.values)
    dy = cy + np.einsum("...i,...ij->...j", cf, Y.values)
    F = frame.values
    rp = np.einsum("...i,...ij->...j", cf, F)
    rpx = np.einsum("...i,...ij->...j", dx, F)
    rpy = np.einsum("...i,...ij->...j", dy, F)
    S = np.where(valid, v["S"], 1.0)
    valid &= np.abs(S) > EPS_DIV_REL * max(np.max(np.abs(S)), 1e-300)
    S = np.where(valid, S, 1.0)
    w = (v["A"] + v["B"] + v["gx"] * v["u2"] + v["by"] * v["u1"]) / S
    rec = (-2 * v["u2"] / S)[..., None] * rpx - (2 * v["u1"] / S)[..., None] * rpy + w[..., None] * rp
    norm = lambda a: np.linalg.norm(a, axis=-1)
    res = {}
    sup = lambda a: float(np.max(np.abs(a[valid]))) if np.any(valid) else float("nan")
    res["oldr"] = sup(norm(rec - r) / norm(r))
    tang = np.linalg.det(np.stack([r, rp, rpx, rpy], axis=-2))
    scale = norm(r) * norm(rp) * norm(rpx) * norm(rpy)
    res["tangency"] = sup(tang / np.where(scale > 0, scale, 1.0))
    # asymptotic equations of r' by finite differences
    Sx = ch.H.filled() * v["u2"]
    Sy = -ch.K.filled() * v["u1"]
    rpxx = diff_array(rp, g, "x", 2)
    rpyy = diff_array(rp, g, "y", 2)
    fx = np.where(valid, Sx / S, 0.0)
    fy = np.where(valid, Sy / S, 0.0)
    u2s = np.where(np.abs(v["u2"]) > 0, v["u2"], 1.0)
    u1s = np.where(np.abs(v["u1"]) > 0, v["u1"], 1.0)
    bey = d(c.beta, "y").filled()
    gax = d(c.gamma, "x").filled()
    e2x = rpxx - fx[..., None] * rpx - (fx * v["u1"] / u2s - v["be"])[..., None] * rpy \
        - (0.5 * (c.V.filled() + bey - fx / u2s * w * S))[..., None] * rp
    e2y = rpyy - fy[..., None] * rpy - (fy * v["u2"] / u1s - v["ga"])[..., None] * rpx \
        - (0.5 * (c.W.filled() + gax - fy / u1s * w * S))[..., None] * rp
    ref = np.max(norm(rpxx)[valid]) if np.any(valid) else 1.0
    res["W2_x"] = sup(norm(e2x)) / max(ref, 1e-300)
    res["W2_y"] = sup(norm(e2y)) / max(ref, 1e-300)
    rt = rp / np.sqrt(np.abs(S))[..., None]
    if out is not None:
        ov = valid & out.valid
        bt, gt = out.beta.filled(), out.gamma.filled()
        btx = d(out.beta, "y").filled()
        gty = d(out.gamma, "x").filled()
        tx = diff_array(rt, g, "x", 2) - bt[..., None] * diff_array(rt, g, "y") \
            - (0.5 * (out.V.filled() - btx))[..., None] * rt
        ty = diff_array(rt, g, "y", 2) - gt[..., None] * diff_array(rt, g, "x") \
            - (0.5 * (out.W.filled() - gty))[..., None] * rt
        tref = max(np.max(norm(diff_array(rt, g, "x", 2))[ov]), 1e-300) if np.any(ov) else 1.0
        res["tilder_x"] = float(np.max(norm(tx)[ov])) / tref if np.any(ov) else float("nan")
        res["tilder_y"] = float(np.max(norm(ty)[ov])) / tref if np.any(ov) else float("nan")
    return RadiusResult(np.where(valid[..., None], rp, 0.0), np.where(valid[..., None], rt, 0.0), valid, res)


# ---------------------------------------------------------------------------
# Bäcklund transformations


BACKLUND_KINDS = ("isothermal", "r0", "r", "jonas")
_ROW = {n: i for i, n in enumerate(("U", "A", "P", "V", "B", "Q", "H", "K"))}


@dataclass(frozen=True)
class BacklundKind:
    """Which transformation, its parameter and corner values of the linear system.

    ``corner`` may set any of U, A, P, V, B, Q (and H, K for ``jonas``).
    Missing values take defaults; Q is then solved so that the quadratic
    constraint of the kind vanishes at the grid origin.
    """

    variant: str
    lam: float
    corner: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in BACKLUND_KINDS:
            raise ValueError(f"unknown Bäcklund kind {self.variant!r}; choose from {', '.join(BACKLUND_KINDS)}")
        if not np.isfinite(self.lam):
            raise ValueError("lambda must be finite")
        unknown = set(self.corner) - set(_ROW)
        if unknown:
            raise ValueError(f"unknown corner entries {sorted(unknown)}")


def quadratic_constraint(variant: str, lam: float, s: dict):
    """The kind's quadratic constraint evaluated on state values (arrays or floats)."""
    S = s_value(s["U"], s["V"], s["A"], s["B"], s["P"], s["Q"])
    if variant == "r0":
        return lam * s["U"] ** 2 + 2 * S
    if variant == "r":
        return lam * (s["U"] ** 2 - s["V"] ** 2) + 2 * S
    if variant == "jonas":
        return 2 * lam * S + s["K"] ** 2 - s["H"] ** 2
    return None


def _target_s(kind: BacklundKind, s: dict) -> float | None:
    lam = kind.lam
    if kind.variant == "r0":
        return -0.5 * lam * s["U"] ** 2
    if kind.variant == "r":
        return -0.5 * lam * (s["U"] ** 2 - s["V"] ** 2)
    if kind.variant == "jonas":
        if lam == 0:
            return None
        return (s["H"] ** 2 - s["K"] ** 2) / (2 * lam)
    return None


_BASE = {"U": 1.0, "A": 0.0, "P": 0.0, "V": 1.0, "B": 0.0, "H": 0.0, "K": 0.0}
_CORNER_DEFAULTS = {
    "isothermal": _BASE,
    "r0": _BASE,
    "r": {**_BASE, "V": 0.5},
    # a large |H| keeps S well away from zero, which keeps the output smooth
    "jonas": {**_BASE, "U": 0.5, "V": 0.5, "H": 3.0},
}


def corner_state(kind: BacklundKind) -> dict:
    """Corner values with defaults filled in and the constraint enforced exactly."""
    s = dict(_CORNER_DEFAULTS[kind.variant])
    s.update({k: float(v) for k, v in kind.corner.items()})
    if "Q" not in kind.corner:
        target = _target_s(kind, s)
        if target is None:
            s["Q"] = 1.0
        else:
            if s["V"] == 0:
                raise PreconditionError("cannot solve the corner constraint for Q when V = 0")
            s["Q"] = (target + s["P"] * s["U"] - 0.5 * (s["A"] ** 2 - s["B"] ** 2)) / s["V"]
    con = quadratic_constraint(kind.variant, kind.lam, s)
    if con is not None:
        scale = max(1.0, *(abs(v) for v in s.values())) ** 2
        if abs(con) > 1e-12 * scale:
            raise PreconditionError(f"corner values violate the {kind.variant} constraint by {con:.3e}")
    if s_value(s["U"], s["V"], s["A"], s["B"], s["P"], s["Q"]) == 0:
        raise PreconditionError("S vanishes at the corner; the transform is undefined")
    return s


def backlund_matrices(c: Coeffs, dq: Derived, kind: BacklundKind,
                      tol: float = PRECONDITION_TOL) -> tuple[MatrixField, MatrixField]:
    lam = kind.lam
    U, A, P, V, B, Q = range(6)
    if kind.variant == "isothermal":
        return system_matrices(c, dq, "plucker6-mvn", lam=lam, tol=tol)
    if kind.variant == "jonas":
        return system_matrices(c, dq, "jonas8", lam=lam, tol=tol)
    if kind.variant == "r0":
        dev = (c.beta - 1.0).sup()
        if dev > tol:
            raise PreconditionError(f"r0 kind needs beta = 1 (normalise the R0 gauge first); |beta - 1| = {dev:.3e}")
    else:
        res = class_residual(c, "R", dq)
        if res > tol:
            raise PreconditionError(f"r kind needs beta_y = gamma_x; residual {res:.3e} > {tol:.1e}")
    X, Y = system_matrices(c, dq, "plucker6", tol=tol)
    Xv, Yv = X.values.copy(), Y.values.copy()
    if kind.variant == "r0":
        Xv[..., Q, U] -= lam
        Yv[..., P, A] += lam
    else:
        be, ga = c.beta.filled(), c.gamma.filled()
        gx = log_derivative(c.gamma, "x").filled()
        by = log_derivative(c.beta, "y").filled()
        Xv[..., Q, V] += lam * gx
        Xv[..., Q, B] += lam
        Xv[..., Q, U] -= lam * be
        Yv[..., P, U] += lam * by
        Yv[..., P, A] += lam
        Yv[..., P, V] -= lam * ga
    return MatrixField(c.grid, Xv, X.valid), MatrixField(c.grid, Yv, Y.valid)


@dataclass(frozen=True)
class BacklundResult:
    coeffs: Coeffs
    dirac: DiracPair
    chain: Chain
    report: dict

    def __iter__(self):
        return iter((self.coeffs, self.dirac, self.chain))


_TARGET_CLASS = {"isothermal": "isothermally_asymptotic", "r": "R", "jonas": "jonas"}


BACKLUND_SUBSTEPS = 8


def backlund(c: Coeffs, kind: BacklundKind, dq: Derived | None = None,
             tol: float = PRECONDITION_TOL, substeps: int = BACKLUND_SUBSTEPS) -> BacklundResult:
    """Bäcklund transformation of the chosen class by a congruence W.

    The linear system for the chain is transported from the corner values;
    the quadratic constraint is imposed there and monitored elsewhere.
    """
    dq = derived_quantities(c) if dq is None else dq
    if kind.variant == "isothermal":
        c = c.replace(gamma=c.beta) if (c.beta - c.gamma).sup() <= tol * max(1.0, c.beta.sup()) else c
    X, Y = backlund_matrices(c, dq, kind, tol)
    s0 = corner_state(kind)
    n = X.dim
    names = ("U", "A", "P", "V", "B", "Q", "H", "K")[:n]
    init = np.array([[s0[k]] for k in names])
    fr = integrate_matrices(X, Y, init, substeps=substeps)
    g = c.grid
    st = {k: ScalarField(g, fr.values[..., i, 0], fr.valid) for i, k in enumerate(names)}
    lam = kind.lam
    be, ga = c.beta, c.gamma
    gx, by = log_derivative(ga, "x"), log_derivative(be, "y")
    U, V = st["U"], st["V"]
    Vx = gx * V + st["B"]
    Uy = by * U + st["A"]
    Hx = Ky = None
    if kind.variant == "isothermal":
        H, K = lam * V, -lam * U
        Hx, Ky = lam * Vx, -lam * Uy
    elif kind.variant == "r0":
        H, K = -lam * U, lam * st["A"]
        Hx, Ky = -lam * be * V, lam * (dq.a * U + st["P"])
    elif kind.variant == "r":
        H = lam * (Vx - be * U)
        K = lam * (Uy - ga * V)
    else:
        H, K = st["H"], st["K"]
        Hx, Ky = lam * V - ga * K, lam * U - be * H
    S = s_value(U, V, st["A"], st["B"], st["P"], st["Q"])
    Sx, Sy = H * V, -K * U
    Sxx = Hx * V + H * Vx if Hx is not None else None
    Syy = -(Ky * U + K * Uy) if Ky is not None else None
    ch = Chain(st["A"], st["B"], st["P"], st["Q"], H, K, S, c, dq, Sx, Sy, Sxx, Syy)
    dp = DiracPair(U, V)
    out = w_transform(c, dp, ch)
    if kind.variant == "isothermal":
        t = (lam * U * V / S.masked(~out.valid)) - be
        out = out.replace(beta=t, gamma=t)
    state = {k: f.values for k, f in st.items()}
    state.setdefault("H", H.values)
    state.setdefault("K", K.values)
    con = quadratic_constraint(kind.variant, lam, state)
    report = {"kind": kind.variant, "lambda": lam, "corner": s0}
    if not np.any(fr.valid):
        raise PreconditionError("the transported chain is masked everywhere")
    report["constraint_drift"] = float(np.max(np.abs(con[fr.valid]))) if con is not None else 0.0
    if kind.variant == "r0":
        report["class_residual"] = (out.beta - 1.0).sup()
    else:
        report["class_residual"] = class_residual(out, _TARGET_CLASS[kind.variant])
    report["identity"] = identity_residual(c, ch, out).sup()
    return BacklundResult(out, dp, ch, report)


# ---------------------------------------------------------------------------
# linear complexes


EXACT_KEYS = ("a", "b", "l", "a_y", "b_x", "beta_x", "beta_y", "gamma_x")


def _quantities(c: Coeffs, dq: Derived, exact: dict | None) -> dict[str, ScalarField]:
    """Coefficient derivatives used by the linear-complex maps.

    Finite differences by default; ``exact`` may supply closed forms for any
    of ``EXACT_KEYS`` as arrays or callables of the mesh ``(X, Y)``.
    """
    exact = dict(exact or {})
    unknown = set(exact) - set(EXACT_KEYS)
    if unknown:
        raise ValueError(f"unknown exact quantities {sorted(unknown)}")
    g = c.grid
    X, Y = g.mesh()

    def pick(name, fallback):
        if name not in exact:
            return fallback()
        val = exact[name]
        val = val(X, Y) if callable(val) else val
        return ScalarField(g, np.broadcast_to(np.asarray(val, float), g.shape).copy())

    q = {
        "a": pick("a", lambda: dq.a),
        "b": pick("b", lambda: dq.b),
        "l": pick("l", lambda: dq.l),
        "beta_x": pick("beta_x", lambda: d(c.beta, "x")),
        "beta_y": pick("beta_y", lambda: d(c.beta, "y")),
        "gamma_x": pick("gamma_x", lambda: d(c.gamma, "x")),
    }
    q["a_y"] = pick("a_y", lambda: d(q["a"], "y"))
    q["b_x"] = pick("b_x", lambda: d(q["b"], "x"))
    q["be"], q["ga"] = c.beta, c.gamma
    q["bx"] = q["beta_x"] / c.beta
    q["by"] = q["beta_y"] / c.beta
    q["gx"] = q["gamma_x"] / c.gamma
    return q


def _integrate_small(X: np.ndarray, Y: np.ndarray, valid: np.ndarray, c: Coeffs, init,
                     substeps: int = BACKLUND_SUBSTEPS) -> FrameField:
    g = c.grid
    return integrate_matrices(MatrixField(g, X, valid), MatrixField(g, Y, valid), np.asarray(init, float)[:, None],
                              substeps=substeps)


def rectify_linear_complex(c: Coeffs, corner: dict | None = None, dq: Derived | None = None,
                           tol: float = PRECONDITION_TOL, exact: dict | None = None) -> tuple[Coeffs, dict]:
    """Map a surface with ``k = 0`` onto a ruled surface (``beta~ = 0``).

    ``corner`` may set U, V, B, Q at the origin (Q defaults to the value
    giving ``S = 1`` there); H is fixed by ``H U = beta S``.
    """
    dq = derived_quantities(c) if dq is None else dq
    res = class_residual(c, "linear_complex_x", dq)
    if res > tol:
        raise PreconditionError(f"rectification needs k = 0; residual {res:.3e} > {tol:.1e}")
    q = _quantities(c, dq, exact)
    valid = np.logical_and.reduce([f.valid for f in q.values()])
    v = {k: f.filled() for k, f in q.items()}
    s = {"U": 1.0, "V": 1.0, "B": 0.0}
    s.update({k: float(x) for k, x in (corner or {}).items()})
    a0, b0 = v["a"][0, 0], v["be"][0, 0]
    if s["U"] == 0 or s["V"] == 0:
        raise PreconditionError("U and V must be nonzero at the corner")
    if "Q" not in s:
        s["Q"] = (1.0 - a0 * s["U"] ** 2 + 0.5 * s["B"] ** 2) / s["V"]
    S0 = s["Q"] * s["V"] + a0 * s["U"] ** 2 - 0.5 * s["B"] ** 2
    if abs(S0) <= 1e-8 * max(1.0, abs(s["Q"] * s["V"]), abs(a0) * s["U"] ** 2):
        raise PreconditionError("S vanishes at the corner")
    s["H"] = b0 * S0 / s["U"]
    U, Vr, Br, Qr, Hr = range(5)
    X = np.zeros(c.grid.shape + (5, 5))
    Y = np.zeros(c.grid.shape + (5, 5))
    X[..., U, Vr] = v["be"]
    X[..., Vr, Vr], X[..., Vr, Br] = v["gx"], 1.0
    X[..., Br, Vr], X[..., Br, Qr] = v["b"], 1.0
    X[..., Qr, U], X[..., Qr, Br], X[..., Qr, Qr], X[..., Qr, Hr] = -2 * v["be"] * v["a"], v["b"], -v["gx"], 1.0
    X[..., Hr, Hr] = v["bx"]
    Y[..., U, U] = v["by"]
    Y[..., Vr, U] = v["ga"]
    Y[..., Br, Vr] = v["l"]
    Y[..., Qr, U], Y[..., Qr, Br] = -v["ga"] * v["b"], v["l"]
    Y[..., Hr, U] = v["be"] * v["a_y"] + 2 * v["a"] * v["beta_y"]
    Y[..., Hr, Vr], Y[..., Hr, Qr] = -v["be"] * v["ga"] * v["b"], v["be"] * v["ga"]
    fr = _integrate_small(X, Y, valid, c, [s["U"], s["V"], s["B"], s["Q"], s["H"]])
    g = c.grid
    f = lambda i: ScalarField(g, fr.values[..., i, 0], fr.valid)
    Uf, Vf, Bf, Qf, Hf = (f(i) for i in range(5))
    zero = ScalarField(g, np.zeros(g.shape), fr.valid)
    Pf = -q["a"] * Uf
    Kf = -(q["a_y"] + 2 * q["a"] * q["by"]) * Uf + c.gamma * q["b"] * Vf - c.gamma * Qf
    S = s_value(Uf, Vf, zero, Bf, Pf, Qf)
    Vx = q["gx"] * Vf + Bf
    Sxx = q["bx"] * Hf * Vf + Hf * Vx
    ch = Chain(zero, Bf, Pf, Qf, Hf, Kf, S, c, dq, Hf * Vf, -Kf * Uf, Sxx, None)
    dp = DiracPair(Uf, Vf)
    out = w_transform(c, dp, ch)
    drift = (Hf * Uf - c.beta * S).masked(~fr.valid)
    report = {"corner": s, "constraint_drift": drift.sup(), "beta_tilde_sup": out.beta.sup(),
              "identity": identity_residual(c, ch, out).sup()}
    return out, report


def quadric_constraint(be, ga, a, b, bx, gx_raw, U, V):
    """``beta gamma (a U^2 + b V^2) - (gamma b_x + 2 b gamma_x) U V``."""
    return be * ga * (a * U * U + b * V * V) - (ga * bx + 2 * b * gx_raw) * U * V


def map_to_quadric(c: Coeffs, corner: dict | None = None, dq: Derived | None = None,
                   tol: float = PRECONDITION_TOL, exact: dict | None = None) -> tuple[Coeffs, dict]:
    """Map a surface with ``k = l = 0`` onto a quadric (``beta~ = gamma~ = 0``).

    ``corner`` may set U and V at the origin. When V is omitted it is taken
    as the smaller real root of the quadratic constraint.
    """
    dq = derived_quantities(c) if dq is None else dq
    for name in ("linear_complex_x", "linear_complex_y"):
        res = class_residual(c, name, dq)
        if res > tol:
            raise PreconditionError(f"quadric map needs k = l = 0; {name} residual {res:.3e} > {tol:.1e}")
    q = _quantities(c, dq, exact)
    valid = np.logical_and.reduce([f.valid for f in q.values()])
    v = {k: f.filled() for k, f in q.items()}
    at = {k: float(x[0, 0]) for k, x in v.items()}
    corner = dict(corner or {})
    U0 = float(corner.get("U", 1.0))
    p2 = at["be"] * at["ga"] * at["b"]
    p1 = -(at["ga"] * at["b_x"] + 2 * at["b"] * at["gamma_x"]) * U0
    p0 = at["be"] * at["ga"] * at["a"] * U0 * U0
    if "V" in corner:
        V0 = float(corner["V"])
    else:
        roots = np.roots([p2, p1, p0]) if p2 != 0 else (np.array([-p0 / p1]) if p1 != 0 else np.array([1.0]))
        real = np.sort(roots[np.abs(np.imag(roots)) <= 1e-12 * max(1.0, np.max(np.abs(roots)))].real)
        if real.size == 0:
            raise PreconditionError("the quadric constraint has no real solution V at the corner")
        V0 = float(real[0])
    con0 = p2 * V0 * V0 + p1 * V0 + p0
    if abs(con0) > 1e-12 * max(1.0, abs(p2) * V0 * V0, abs(p0)):
        raise PreconditionError(f"corner values violate the quadric constraint by {con0:.3e}")
    X = np.zeros(c.grid.shape + (2, 2))
    Y = np.zeros(c.grid.shape + (2, 2))
    X[..., 0, 1], X[..., 1, 1] = v["be"], v["gx"]
    Y[..., 0, 0], Y[..., 1, 0] = v["by"], v["ga"]
    fr = _integrate_small(X, Y, valid, c, [U0, V0])
    g = c.grid
    Uf = ScalarField(g, fr.values[..., 0, 0], fr.valid)
    Vf = ScalarField(g, fr.values[..., 1, 0], fr.valid)
    zero = ScalarField(g, np.zeros(g.shape), fr.valid)
    a, b = q["a"], q["b"]
    Pf, Qf = -a * Uf, -b * Vf
    Hf = -(q["b_x"] + 2 * b * q["gx"]) * Vf + 2 * c.beta * a * Uf
    Kf = -(q["a_y"] + 2 * a * q["by"]) * Uf + 2 * c.gamma * b * Vf
    S = s_value(Uf, Vf, zero, zero, Pf, Qf)
    if np.any(S.valid_values() == 0):
        raise PreconditionError("S vanishes on the grid")
    ch = Chain(zero, zero, Pf, Qf, Hf, Kf, S, c, dq)
    dp = DiracPair(Uf, Vf)
    out = w_transform(c, dp, ch)
    drift = quadric_constraint(c.beta, c.gamma, a, b, q["b_x"], q["gamma_x"], Uf, Vf).masked(~fr.valid)
    report = {"corner": {"U": U0, "V": V0}, "constraint_drift": drift.sup(),
              "beta_tilde_sup": out.beta.sup(), "gamma_tilde_sup": out.gamma.sup()}
    return out, report
