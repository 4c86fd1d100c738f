"""Moving frames: Wilczynski, Plücker and coupled Jonas systems, transport and checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .core import PRECONDITION_TOL, Coeffs, Derived, PreconditionError, ResidualReport, class_residual, derived_quantities
from .grid import (
    EPS_DIV_REL,
    GridError,
    GridSpec,
    ScalarField,
    d,
    diff_array,
    interior,
    log_derivative,
    mask_support,
)

SYSTEMS = ("wilczynski4", "plucker6", "plucker6-mvn", "plucker6-projmin", "jonas8")
SPECTRAL = {"plucker6-mvn": 0.0, "plucker6-projmin": 1.0, "jonas8": 0.0}
DIMENSION = {"wilczynski4": 4, "plucker6": 6, "plucker6-mvn": 6, "plucker6-projmin": 6, "jonas8": 8}

W4_ROWS = ("r", "r1", "r2", "eta")
P6_ROWS = ("U", "A", "P", "V", "B", "Q")
J8_ROWS = P6_ROWS + ("H", "K")
ROW_NAMES = {4: W4_ROWS, 6: P6_ROWS, 8: J8_ROWS}


@dataclass(frozen=True)
class MatrixField:
    """A square matrix at every grid node, ``values[j, i]`` of shape ``(n, n)``."""

    grid: GridSpec
    values: np.ndarray
    valid: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[-1]


@dataclass(frozen=True)
class FrameField:
    """Frame rows at every node: ``values[j, i]`` has shape ``(rows, components)``.

    Four rows form a Wilczynski frame (r, r1, r2, eta), six rows the Plücker
    frame (U, A, P, V, B, Q) and eight rows append H, K.
    """

    grid: GridSpec
    values: np.ndarray
    valid: np.ndarray

    @property
    def rows(self) -> tuple[str, ...]:
        return ROW_NAMES.get(self.values.shape[2], tuple(str(i) for i in range(self.values.shape[2])))

    def row(self, name: str | int) -> np.ndarray:
        idx = self.rows.index(name) if isinstance(name, str) else name
        return self.values[:, :, idx, :]

    def component(self, name: str | int, comp: int) -> ScalarField:
        return ScalarField(self.grid, np.where(self.valid, self.row(name)[..., comp], 0.0), self.valid.copy())


# ---------------------------------------------------------------------------
# system assembly


def _require_class(c: Coeffs, name: str, tol: float, sel: str) -> None:
    res = class_residual(c, name)
    if res > tol:
        raise PreconditionError(f"{sel} needs the {name} condition; residual {res:.3e} > {tol:.1e}")


def system_matrices(c: Coeffs, dq: Derived | None = None, sel: str = "wilczynski4",
                    lam: float | None = None, tol: float = PRECONDITION_TOL) -> tuple[MatrixField, MatrixField]:
    """Transport matrices ``X, Y`` with ``F_x = X F`` and ``F_y = Y F``."""
    if sel not in SYSTEMS:
        raise ValueError(f"unknown system {sel!r}; choose from {', '.join(SYSTEMS)}")
    if lam is not None and sel not in SPECTRAL:
        raise ValueError(f"{sel} takes no spectral parameter")
    if c.beta.sup() == 0 or c.gamma.sup() == 0:
        raise PreconditionError("beta or gamma vanishes identically (a quadric); use integrate_separable_quadric")
    lam = SPECTRAL.get(sel, 0.0) if lam is None else float(lam)
    if sel == "plucker6-projmin" and lam == 0:
        raise ValueError("plucker6-projmin needs a nonzero spectral parameter")
    if sel == "plucker6-mvn":
        scale = max(1.0, c.beta.sup())
        if (c.beta - c.gamma).sup() > tol * scale:
            raise PreconditionError("plucker6-mvn needs beta = gamma (isothermally asymptotic)")
        c = c.replace(gamma=c.beta)
    elif sel == "jonas8":
        _require_class(c, "jonas", tol, sel)
    elif sel == "plucker6-projmin":
        _require_class(c, "projectively_minimal", tol, sel)
    dq = derived_quantities(c) if dq is None else dq

    parts = {
        "be": c.beta, "ga": c.gamma, "gx": log_derivative(c.gamma, "x"), "by": log_derivative(c.beta, "y"),
        "k": dq.k, "l": dq.l, "a": dq.a, "b": dq.b,
    }
    valid = np.ones(c.grid.shape, bool)
    for f in parts.values():
        valid &= f.valid
    be, ga, gx, by, k, l, a, b = (parts[n].filled() for n in ("be", "ga", "gx", "by", "k", "l", "a", "b"))
    n = DIMENSION[sel]
    X = np.zeros(c.grid.shape + (n, n))
    Y = np.zeros(c.grid.shape + (n, n))
    if sel == "wilczynski4":
        X[..., 0, 0], X[..., 0, 1] = 0.5 * gx, 1.0
        X[..., 1, 0], X[..., 1, 1], X[..., 1, 2] = 0.5 * b, -0.5 * gx, be
        X[..., 2, 0], X[..., 2, 2], X[..., 2, 3] = 0.5 * k, 0.5 * gx, 1.0
        X[..., 3, 0], X[..., 3, 1], X[..., 3, 2], X[..., 3, 3] = 0.5 * be * a, 0.5 * k, 0.5 * b, -0.5 * gx
        Y[..., 0, 0], Y[..., 0, 2] = 0.5 * by, 1.0
        Y[..., 1, 0], Y[..., 1, 1], Y[..., 1, 3] = 0.5 * l, 0.5 * by, 1.0
        Y[..., 2, 0], Y[..., 2, 1], Y[..., 2, 2] = 0.5 * a, ga, -0.5 * by
        Y[..., 3, 0], Y[..., 3, 1], Y[..., 3, 2], Y[..., 3, 3] = 0.5 * ga * b, 0.5 * a, 0.5 * l, -0.5 * by
        return MatrixField(c.grid, X, valid), MatrixField(c.grid, Y, valid)

    U, A, P, V, B, Q, H, K = range(8)
    bx = be * lam if sel == "plucker6-projmin" else be
    gy = ga / lam if sel == "plucker6-projmin" else ga
    X[..., U, V] = bx
    X[..., A, U] = k
    X[..., P, A], X[..., P, V] = k, -bx * a
    X[..., V, V], X[..., V, B] = gx, 1.0
    X[..., B, V], X[..., B, Q] = b, 1.0
    X[..., Q, U], X[..., Q, P], X[..., Q, B], X[..., Q, Q] = -bx * a, bx, b, -gx
    Y[..., U, U], Y[..., U, A] = by, 1.0
    Y[..., A, U], Y[..., A, P] = a, 1.0
    Y[..., P, A], Y[..., P, P], Y[..., P, V], Y[..., P, Q] = a, -by, -gy * b, gy
    Y[..., V, U] = gy
    Y[..., B, V] = l
    Y[..., Q, U], Y[..., Q, B] = -gy * b, l
    if sel == "plucker6-mvn":
        X[..., Q, V] = lam
        Y[..., P, U] = -lam
    elif sel == "jonas8":
        X[..., Q, H] = 1.0
        X[..., H, V], X[..., H, K] = lam, -ga
        X[..., K, H] = -ga
        Y[..., P, K] = 1.0
        Y[..., H, K] = -be
        Y[..., K, U], Y[..., K, H] = lam, -be
    return MatrixField(c.grid, X, valid), MatrixField(c.grid, Y, valid)


def zero_curvature_residual(X: MatrixField, Y: MatrixField, tol: float | None = None) -> ResidualReport:
    """Sup and RMS of the entrywise maximum of ``X_y - Y_x + XY - YX``."""
    if X.grid != Y.grid:
        raise GridError("matrix fields live on different grids")
    g = X.grid
    R = diff_array(X.values, g, "y") - diff_array(Y.values, g, "x") + X.values @ Y.values - Y.values @ X.values
    valid = mask_support(X.valid, "y") & mask_support(Y.valid, "x") & X.valid & Y.valid
    mag = np.max(np.abs(R), axis=(-2, -1))
    return ResidualReport.from_fields({"zero_curvature": ScalarField(g, np.where(valid, mag, 0.0), valid)}, tol)


# ---------------------------------------------------------------------------
# transport


def _rk4(F, M0, Mh, M1, h):
    k1 = M0 @ F
    k2 = Mh @ (F + 0.5 * h * k1)
    k3 = Mh @ (F + 0.5 * h * k2)
    k4 = M1 @ (F + h * k3)
    return F + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _cubic_weights(nodes, t: float) -> np.ndarray:
    w = np.ones(4)
    for a in range(4):
        for b in range(4):
            if a != b:
                w[a] *= (t - nodes[b]) / (nodes[a] - nodes[b])
    return w


def _interp(line: np.ndarray, t: float) -> np.ndarray:
    """Cubic interpolation at ``i + t`` for every interval ``[i, i+1]`` along axis 0.

    Interior intervals use nodes ``i-1 .. i+2``; the end intervals use the
    four nodes nearest the boundary.
    """
    n = line.shape[0]
    if n < 4:
        raise GridError("cubic coefficient interpolation needs at least four nodes")
    out = np.empty((n - 1,) + line.shape[1:])
    wi = _cubic_weights((-1, 0, 1, 2), t)
    out[1:n - 2] = wi[0] * line[0:n - 3] + wi[1] * line[1:n - 2] + wi[2] * line[2:n - 1] + wi[3] * line[3:n]
    w0 = _cubic_weights((0, 1, 2, 3), t)
    out[0] = w0[0] * line[0] + w0[1] * line[1] + w0[2] * line[2] + w0[3] * line[3]
    we = _cubic_weights((-2, -1, 0, 1), t)
    out[n - 2] = we[0] * line[n - 4] + we[1] * line[n - 3] + we[2] * line[n - 2] + we[3] * line[n - 1]
    return out


def _midpoints(line: np.ndarray) -> np.ndarray:
    """Cubic-interpolated values half way between consecutive entries along axis 0."""
    return _interp(line, 0.5)


class _Stepper:
    """RK4 over one grid interval split into ``m`` equal substeps."""

    def __init__(self, line: np.ndarray, m: int):
        if m < 1:
            raise ValueError("substeps must be positive")
        self.m = m
        self.line = line
        fr = np.arange(2 * m + 1) / (2 * m)
        self.samples = [None if f in (0.0, 1.0) else _interp(line, f) for f in fr]

    def coeff(self, i: int, q: int) -> np.ndarray:
        if q == 0:
            return self.line[i]
        if q == 2 * self.m:
            return self.line[i + 1]
        return self.samples[q][i]

    def forward(self, F, i: int, h: float):
        """Step from node ``i`` to ``i+1`` (``h > 0``) or from ``i+1`` to ``i`` (``h < 0``)."""
        m = self.m
        hs = h / m
        qs = range(m) if h > 0 else range(m, 0, -1)
        for s in qs:
            if h > 0:
                q0, qh, q1 = 2 * s, 2 * s + 1, 2 * s + 2
            else:
                q0, qh, q1 = 2 * s, 2 * s - 1, 2 * s - 2
            F = _rk4(F, self.coeff(i, q0), self.coeff(i, qh), self.coeff(i, q1), hs)
        return F


def transport(X: MatrixField, Y: MatrixField, start: np.ndarray, path: Sequence[tuple[int, int]],
              substeps: int = 1) -> np.ndarray:
    """Carry a frame along a lattice path of ``(i, j)`` node indices.

    Consecutive nodes must differ by one step in exactly one index. Each
    grid step is ``substeps`` classical RK4 steps with cubic-interpolated
    coefficients (one step of size h by default).
    """
    g = X.grid
    F = np.array(start, dtype=float)
    if F.shape[0] != X.dim:
        raise ValueError(f"frame has {F.shape[0]} rows, system has dimension {X.dim}")
    path = [tuple(int(v) for v in p) for p in path]
    for p in path:
        if not (0 <= p[0] < g.nx and 0 <= p[1] < g.ny):
            raise GridError(f"path node {p} leaves the grid")
    rows: dict[int, _Stepper] = {}
    cols: dict[int, _Stepper] = {}
    for (i0, j0), (i1, j1) in zip(path[:-1], path[1:]):
        di, dj = i1 - i0, j1 - j0
        if abs(di) + abs(dj) != 1:
            raise GridError(f"path step {(i0, j0)} -> {(i1, j1)} is not a unit lattice step")
        if di:
            if j0 not in rows:
                rows[j0] = _Stepper(X.values[j0], substeps)
            F = rows[j0].forward(F, min(i0, i1), di * g.hx)
        else:
            if i0 not in cols:
                cols[i0] = _Stepper(Y.values[:, i0], substeps)
            F = cols[i0].forward(F, min(j0, j1), dj * g.hy)
    return F


def rectangle_loop(i0: int, j0: int, i1: int, j1: int) -> list[tuple[int, int]]:
    """Counter-clockwise closed lattice loop around the index rectangle."""
    path = [(i, j0) for i in range(i0, i1 + 1)]
    path += [(i1, j) for j in range(j0 + 1, j1 + 1)]
    path += [(i, j1) for i in range(i1 - 1, i0 - 1, -1)]
    path += [(i0, j) for j in range(j1 - 1, j0 - 1, -1)]
    return path


def _sweep(M: np.ndarray, m: int, F0: np.ndarray, h: float, ok: np.ndarray):
    """Sequential RK4 along axis 0 of ``M``, batched over any trailing node axes."""
    n = M.shape[0]
    st = _Stepper(M, m)
    out = np.empty((n,) + F0.shape)
    valid = np.empty((n,) + ok.shape, bool)
    out[0], valid[0] = F0, ok
    F = F0
    for s in range(n - 1):
        F = st.forward(F, s, h)
        out[s + 1] = F
        valid[s + 1] = valid[s]
    return out, valid


#: RK4 substeps per grid interval used by whole-grid integration
DEFAULT_SUBSTEPS = 4


def integrate_matrices(X: MatrixField, Y: MatrixField, init: np.ndarray, order: str = "xy",
                       substeps: int = DEFAULT_SUBSTEPS) -> FrameField:
    """Integrate ``F_x = XF, F_y = YF`` from the grid origin.

    ``order="xy"`` sweeps the bottom row in x and then every column in y;
    ``"yx"`` sweeps the left column first and then every row in x.
    """
    g = X.grid
    F0 = np.array(init, dtype=float)
    if F0.shape[0] != X.dim:
        raise ValueError(f"initial frame has {F0.shape[0]} rows, system has dimension {X.dim}")
    mval = X.valid & Y.valid
    Xv = np.where(mval[..., None, None], X.values, 0.0)
    Yv = np.where(mval[..., None, None], Y.values, 0.0)
    if order == "xy":
        row, rok = _sweep(Xv[0], substeps, F0, g.hx, np.array(True))
        rok = rok & np.logical_and.accumulate(mval[0])
        Fc = np.broadcast_to(row, row.shape)
        out, ok = _sweep(Yv, substeps, Fc, g.hy, rok)
        ok &= np.logical_and.accumulate(mval, axis=0)
    elif order == "yx":
        col, cok = _sweep(Yv[:, 0], substeps, F0, g.hy, np.array(True))
        cok = cok & np.logical_and.accumulate(mval[:, 0])
        Xt = np.swapaxes(Xv, 0, 1)
        out, ok = _sweep(Xt, substeps, col, g.hx, cok)
        out, ok = np.swapaxes(out, 0, 1), ok.T
        ok &= np.logical_and.accumulate(mval, axis=1)
    else:
        raise ValueError("order must be 'xy' or 'yx'")
    ok = ok & np.all(np.isfinite(out), axis=(-2, -1))
    return FrameField(g, np.where(ok[..., None, None], out, 0.0), ok)


def default_frame(sel: str) -> np.ndarray:
    """Standard initial frame for a system: the identity tetrahedron and its images."""
    n = DIMENSION[sel]
    if n == 4:
        return np.eye(4)
    F6 = plucker_embed(np.eye(4))
    if n == 6:
        return F6
    return np.vstack([F6, np.zeros((2, 6))])


def normalize_det(F: np.ndarray) -> np.ndarray:
    """Rescale a 4x4 frame once so that ``|det| = 1``."""
    det = np.linalg.det(F)
    if det == 0 or not np.isfinite(det):
        raise PreconditionError("initial frame is degenerate")
    return F / abs(det) ** 0.25


def integrate_frame(c: Coeffs, sel: str = "wilczynski4", lam: float | None = None,
                    init: np.ndarray | None = None, order: str = "xy", dq: Derived | None = None,
                    tol: float = PRECONDITION_TOL, substeps: int = DEFAULT_SUBSTEPS) -> FrameField:
    """Integrate the selected frame system over the whole grid from its origin."""
    X, Y = system_matrices(c, dq, sel, lam, tol)
    F0 = default_frame(sel) if init is None else np.array(init, dtype=float)
    if sel == "wilczynski4":
        F0 = normalize_det(F0)
    return integrate_matrices(X, Y, F0, order, substeps)


def integrate_separable_quadric(Vx, Wy, grid: GridSpec, init: dict | None = None,
                                rtol: float = 1e-13, atol: float = 1e-14) -> np.ndarray:
    """Radius vector of a quadric from ``r_xx = V(x) r / 2`` and ``r_yy = W(y) r / 2``.

    ``init`` holds the 4-vectors ``r, r_x, r_y, r_xy`` at the grid origin;
    the default is the standard basis, giving ``r = (1, x, y, xy)`` when
    ``V = W = 0`` and the origin is at zero. Returns shape ``(ny, nx, 4)``.
    """
    init = init or {}
    r0 = np.asarray(init.get("r", [1, 0, 0, 0]), float)
    rx = np.asarray(init.get("r_x", [0, 1, 0, 0]), float)
    ry = np.asarray(init.get("r_y", [0, 0, 1, 0]), float)
    rxy = np.asarray(init.get("r_xy", [0, 0, 0, 1]), float)

    def basis(coef, nodes):
        def rhs(t, u):
            q = 0.5 * float(np.asarray(coef(t)))
            return [u[1], q * u[0], u[3], q * u[2]]

        if len(nodes) == 1:
            return np.ones(1), np.zeros(1)
        sol = solve_ivp(rhs, (nodes[0], nodes[-1]), [1.0, 0.0, 0.0, 1.0], method="DOP853",
                        t_eval=nodes, rtol=rtol, atol=atol)
        if not sol.success:
            raise GridError(f"quadric ODE failed: {sol.message}")
        return sol.y[0], sol.y[2]

    p1, p2 = basis(_as_callable(Vx), grid.x)
    q1, q2 = basis(_as_callable(Wy), grid.y)
    P1, P2 = p1[None, :, None], p2[None, :, None]
    Q1, Q2 = q1[:, None, None], q2[:, None, None]
    return r0 * P1 * Q1 + rx * P2 * Q1 + ry * P1 * Q2 + rxy * P2 * Q2


def _as_callable(v):
    if callable(v):
        return v
    val = float(v)
    return lambda t: val


# ---------------------------------------------------------------------------
# Plücker geometry

_PAIRS = ((0, 1), (0, 2), (0, 3), (2, 3), (3, 1), (1, 2))
_PAIRING = np.zeros((6, 6))
for _a, _b in ((0, 3), (1, 4), (2, 5)):
    _PAIRING[_a, _b] = _PAIRING[_b, _a] = 1.0


def wedge(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plücker coordinates ``(p01, p02, p03, p23, p31, p12)`` of ``a ^ b``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.stack([a[..., i] * b[..., j] - a[..., j] * b[..., i] for i, j in _PAIRS], axis=-1)


def plucker_embed(F: np.ndarray) -> np.ndarray:
    """Rows ``U, A, P, V, B, Q`` of the Plücker frame of Wilczynski rows ``r, r1, r2, eta``."""
    F = np.asarray(F, float)
    r, r1, r2, eta = (F[..., i, :] for i in range(4))
    return np.stack([
        wedge(r, r1),
        wedge(r2, r1) + wedge(r, eta),
        2.0 * wedge(r2, eta),
        wedge(r, r2),
        wedge(r1, r2) + wedge(r, eta),
        2.0 * wedge(r1, eta),
    ], axis=-2)


def plucker_quadric_value(p: np.ndarray) -> np.ndarray:
    """``p01 p23 + p02 p31 + p03 p12``; zero exactly on decomposable bivectors."""
    p = np.asarray(p, float)
    return p[..., 0] * p[..., 3] + p[..., 1] * p[..., 4] + p[..., 2] * p[..., 5]


def gram_matrix(F6: np.ndarray) -> np.ndarray:
    """Pairwise scalar products ``-1/2 * (coefficient of w ^ s in the volume form)``."""
    F6 = np.asarray(F6, float)
    return -0.5 * (F6 @ _PAIRING @ np.swapaxes(F6, -1, -2))


#: Gram matrix of the Plücker frame of a unimodular Wilczynski frame
TABLE = -0.5 * (plucker_embed(np.eye(4)) @ _PAIRING @ plucker_embed(np.eye(4)).T)


def lie_quadric(F: np.ndarray, mu, nu) -> np.ndarray:
    """Point ``eta + mu r1 + nu r2 + mu nu r`` of the Lie quadric."""
    F = np.asarray(F, float)
    mu = np.asarray(mu, float)[..., None]
    nu = np.asarray(nu, float)[..., None]
    return F[..., 3, :] + mu * F[..., 1, :] + nu * F[..., 2, :] + mu * nu * F[..., 0, :]


# ---------------------------------------------------------------------------
# meshes


@dataclass(frozen=True)
class SurfaceMesh:
    grid: GridSpec
    points: np.ndarray
    valid: np.ndarray


def to_affine_mesh(r, grid: GridSpec | None = None, valid: np.ndarray | None = None) -> SurfaceMesh:
    """Affine image ``(r1/r0, r2/r0, r3/r0)`` of homogeneous points; small ``|r0|`` is masked.

    ``r`` may be a :class:`FrameField` (its first row is used) or an array of
    shape ``(ny, nx, 4)`` with an explicit ``grid``.
    """
    if isinstance(r, FrameField):
        grid, valid, r = r.grid, r.valid, r.row(0)
    if grid is None:
        raise ValueError("grid required for raw arrays")
    r = np.asarray(r, float)
    ok = np.ones(grid.shape, bool) if valid is None else valid.copy()
    ok &= np.all(np.isfinite(r), axis=-1)
    r0 = np.where(ok, r[..., 0], 0.0)
    thr = EPS_DIV_REL * (np.max(np.abs(r0)) if ok.any() else 0.0)
    ok &= np.abs(r0) >= thr
    ok &= np.abs(r0) > 0
    if not ok.any():
        raise GridError("every node is masked in the affine chart")
    pts = np.where(ok[..., None], r[..., 1:] / np.where(ok, r0, 1.0)[..., None], 0.0)
    return SurfaceMesh(grid, pts, ok)


def write_obj(mesh: SurfaceMesh, fh: IO[str]) -> None:
    """Wavefront OBJ: valid vertices row-major, each fully valid cell as two triangles."""
    index = np.full(mesh.grid.shape, -1, int)
    count = 0
    for j in range(mesh.grid.ny):
        for i in range(mesh.grid.nx):
            if mesh.valid[j, i]:
                count += 1
                index[j, i] = count
                x, y, z = mesh.points[j, i]
                fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
    for j in range(mesh.grid.ny - 1):
        for i in range(mesh.grid.nx - 1):
            a, b, c_, e = index[j, i], index[j, i + 1], index[j + 1, i + 1], index[j + 1, i]
            if min(a, b, c_, e) > 0:
                fh.write(f"f {a} {b} {c_}\n")
                fh.write(f"f {a} {c_} {e}\n")


# ---------------------------------------------------------------------------
# scalar spectral problems


def _vector_fields(value, grid: GridSpec) -> list[ScalarField]:
    if isinstance(value, ScalarField):
        return [value]
    if isinstance(value, (list, tuple)):
        return [v if isinstance(v, ScalarField) else ScalarField(grid, np.asarray(v, float)) for v in value]
    arr = np.asarray(value, float)
    if arr.shape == grid.shape:
        return [ScalarField(grid, arr)]
    return [ScalarField(grid, arr[..., m]) for m in range(arr.shape[-1])]


def _combine(per_component: list[dict[str, ScalarField]]) -> dict[str, ScalarField]:
    """Pointwise maximum magnitude over components, name by name."""
    out = {}
    for name in per_component[0]:
        fs = [abs(p[name]) for p in per_component]
        acc = fs[0]
        for f in fs[1:]:
            acc = ScalarField(acc.grid, np.maximum(acc.values, f.values), acc.valid & f.valid)
        out[name] = acc
    return out


def _check(c: Coeffs, name: str, tol: float, problem: str) -> None:
    res = class_residual(c, name)
    if res > tol:
        raise PreconditionError(f"problem {problem!r} needs the {name} condition; residual {res:.3e} > {tol:.1e}")


#: boundary nodes excluded from spectral residuals (width of the one-sided stencil zone)
SPECTRAL_BAND = 6


def scalar_spectral_residual(c: Coeffs, fields: dict, problem: str, lam: float = 0.0,
                             tol: float = PRECONDITION_TOL, band: int = SPECTRAL_BAND) -> ResidualReport:
    """Residuals of a scalar spectral problem evaluated on supplied solution data.

    ``fields`` keys by problem: ``mvn`` and ``jonas`` take ``U``, ``V``;
    ``kp`` and ``ds`` take ``r`` (one field or a list of components);
    ``demoulin`` takes ``A``, ``B``. ``r`` for ``kp`` solves the system with
    ``W + lam``; for ``ds`` it solves the one with ``V + lam``, ``W + lam``.

    Nodes within ``band`` of the boundary are excluded: third and fourth
    derivatives there amplify the non-smooth one-sided stencil errors of
    the coefficient data.
    """
    out = _spectral_fields(c, fields, problem, float(lam), tol)
    return ResidualReport.from_fields({k: interior(v, band) for k, v in out.items()})


def _spectral_fields(c: Coeffs, fields: dict, problem: str, lam: float, tol: float) -> dict[str, ScalarField]:
    be, ga, V, W = c.fields()
    if problem == "mvn":
        if (be - ga).sup() > tol * max(1.0, be.sup()):
            raise PreconditionError("problem 'mvn' needs beta = gamma")
        U, Vv = fields["U"], fields["V"]
        out = {
            "dirac_x": d(U, "x") - be * Vv,
            "dirac_y": d(Vv, "y") - be * U,
            "spectral_U": d(U, "xxx") - d(U, "yyy") + 2 * W * d(U, "y") - 3 * d(be, "x") * d(Vv, "x")
            + d(W, "y") * U - 2 * be * V * Vv - lam * U,
            "spectral_V": d(Vv, "xxx") - d(Vv, "yyy") - 2 * V * d(Vv, "x") + 3 * d(be, "y") * d(U, "y")
            - d(V, "x") * Vv + 2 * be * W * U - lam * Vv,
        }
        return out
    if problem == "kp":
        if (be - 1.0).sup() > tol:
            raise PreconditionError("problem 'kp' needs the normalised R0 gauge beta = 1")
        comps = []
        for r in _vector_fields(fields["r"], c.grid):
            rxx = d(r, "xx")
            comps.append({
                "schrodinger": d(r, "y") - rxx + 0.5 * V * r,
                "second_flow": d(r, "xxxx") - V * rxx - (d(V, "x") + ga) * d(r, "x")
                - 0.5 * (d(V, "xx") + d(ga, "x") - 0.5 * V * V + W + lam) * r,
            })
        return _combine(comps)
    if problem == "ds":
        _check(c, "R", tol, problem)
        comps = []
        for r in _vector_fields(fields["r"], c.grid):
            rxx, ryy, rx, ry = d(r, "xx"), d(r, "yy"), d(r, "x"), d(r, "y")
            comps.append({
                "hyperbolic": rxx - ryy - be * ry + ga * rx - 0.5 * (V - W) * r,
                "elliptic": rxx + ryy - be * ry - ga * rx - 0.5 * (V + W - d(be, "y") - d(ga, "x")) * r - lam * r,
            })
        return _combine(comps)
    if problem == "jonas":
        _check(c, "jonas", tol, problem)
        U, Vv = fields["U"], fields["V"]
        aux = jonas_aux(c)
        p = _phi_derivatives(c)
        out = {
            "dirac_x": d(U, "x") - p["y"] * Vv,
            "dirac_y": d(Vv, "y") - p["x"] * U,
            "spectral_U": d(U, "xxxx") + d(U, "yyyy") - (p["y"] ** 2 + 2 * W) * d(U, "yy")
            - 4 * p["xy"] * d(Vv, "xx") + (p["y"] * p["yy"] - 3 * d(W, "y")) * d(U, "y")
            - (2 * p["xxy"] + p["y"] * p["x"] ** 2 + 2 * V * p["y"]) * d(Vv, "x")
            + aux.m * U + aux.n * Vv - lam * U,
            "spectral_V": d(Vv, "xxxx") + d(Vv, "yyyy") - (p["x"] ** 2 + 2 * V) * d(Vv, "xx")
            - 4 * p["xy"] * d(U, "yy") + (p["x"] * p["xx"] - 3 * d(V, "x")) * d(Vv, "x")
            - (2 * p["xyy"] + p["x"] * p["y"] ** 2 + 2 * W * p["x"]) * d(U, "y")
            + aux.mt * Vv + aux.nt * U - lam * Vv,
        }
        return out
    if problem == "demoulin":
        _check(c, "demoulin", tol, problem)
        if lam == 0:
            raise ValueError("problem 'demoulin' needs a nonzero spectral parameter")
        A, B = fields["A"], fields["B"]
        out = {
            "B_xy": d(B, "xy") + B / ga,
            "A_xy": d(A, "xy") + A / be,
            "B_xx": d(B, "xx") - lam * be * d(A, "y") + log_derivative(ga, "x") * d(B, "x"),
            "A_xx": d(A, "xx") - lam * ga * d(B, "y") + log_derivative(be, "x") * d(A, "x"),
            "B_yy": d(B, "yy") - (be / lam) * d(A, "x") + log_derivative(ga, "y") * d(B, "y"),
            "A_yy": d(A, "yy") - (ga / lam) * d(B, "x") + log_derivative(be, "y") * d(A, "y"),
        }
        return out
    raise ValueError(f"unknown spectral problem {problem!r}")


@dataclass(frozen=True)
class JonasAux:
    m: ScalarField
    mt: ScalarField
    n: ScalarField
    nt: ScalarField


def _phi_derivatives(c: Coeffs) -> dict[str, ScalarField]:
    """Derivatives of the potential with ``phi_y = beta`` and ``phi_x = gamma``."""
    be, ga = c.beta, c.gamma
    return {
        "x": ga, "y": be, "xx": d(ga, "x"), "yy": d(be, "y"), "xy": d(be, "x"),
        "xxx": d(ga, "xx"), "yyy": d(be, "yy"), "xxy": d(be, "xx"), "xyy": d(ga, "yy"),
        "xxxy": d(be, "xxx"), "xyyy": d(ga, "yyy"),
    }


def jonas_aux(c: Coeffs) -> JonasAux:
    """Coefficients m, m~, n, n~ of the fourth-order Jonas spectral problem."""
    V, W = c.V, c.W
    p = _phi_derivatives(c)
    px2, py2 = p["x"] ** 2, p["y"] ** 2
    return JonasAux(
        m=-d(W, "yy") - p["y"] * p["yyy"] - 2 * p["x"] * p["xxx"] + p["xx"] ** 2 + 2 * V * px2 + 2 * W * py2,
        mt=-d(V, "xx") - p["x"] * p["xxx"] - 2 * p["y"] * p["yyy"] + p["yy"] ** 2 + 2 * V * px2 + 2 * W * py2,
        n=-2 * p["xxxy"] + px2 * p["xy"] + 3 * p["x"] * p["y"] * p["xx"] + 2 * V * p["xy"] - p["y"] * d(V, "x"),
        nt=-2 * p["xyyy"] + py2 * p["xy"] + 3 * p["x"] * p["y"] * p["yy"] + 2 * W * p["xy"] - p["x"] * d(W, "y"),
    )


def frame_invariants(frame: FrameField) -> dict:
    """Determinant drift, Plücker quadric values and Gram drift of a frame field."""
    ok = frame.valid
    F = frame.values[ok]
    rep: dict = {"valid_nodes": int(ok.sum())}
    if frame.values.shape[2] == 4 and frame.values.shape[3] == 4:
        det = np.linalg.det(F)
        rep["det_start"] = float(det[0])
        rep["det_drift"] = float(np.max(np.abs(det - det[0])))
        F6 = plucker_embed(F)
    elif frame.values.shape[3] == 6:
        F6 = F[:, :6, :]
    else:
        return rep
    q = plucker_quadric_value(F6)
    G = gram_matrix(F6)
    rep["quadric_max_abs"] = {name: float(np.max(np.abs(q[:, k]))) for k, name in enumerate(P6_ROWS)}
    rep["quadric_drift"] = {name: float(np.max(np.abs(q[:, k] - q[0, k]))) for k, name in enumerate(P6_ROWS)}
    rep["gram_drift"] = float(np.max(np.abs(G - G[0])))
    rep["gram_start"] = G[0].tolist()
    return rep
