"""``surf``: generate, check, integrate, transform and probe coefficient fields.

Exit codes: 0 on success, 2 for usage or input errors, 3 when a
mathematical precondition fails (class membership, degeneracy, divergence).
"""

from __future__ import annotations

import argparse
import ast
import math
import operator
import sys
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import congruence as cg
from . import families as fam
from . import frames as fr
from .core import (
    PRECONDITION_TOL,
    Coeffs,
    PreconditionError,
    classify,
    gc1_residual,
    gc2_residual,
)
from .fieldio import FieldFileError, dumps, read_boundary, read_field, write_field
from .grid import GridError, GridSpec, ScalarField

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_MATH = 0, 2, 3


class UsageError(Exception):
    """Bad command-line input; maps to exit code 2."""


class MathError(Exception):
    """A mathematical precondition failed; maps to exit code 3."""


# ---------------------------------------------------------------------------
# argument parsing helpers


def parse_grid(text: str) -> GridSpec:
    """``NXxNY:x0,y0,h`` or ``NXxNY:x0,y0,hx,hy``."""
    try:
        dims, _, rest = text.partition(":")
        nx, ny = (int(v) for v in dims.lower().split("x"))
        nums = [float(v) for v in rest.split(",")] if rest else [0.0, 0.0, 1.0 / (nx - 1)]
        if len(nums) == 3:
            x0, y0, hx = nums
            hy = hx
        elif len(nums) == 4:
            x0, y0, hx, hy = nums
        else:
            raise ValueError
    except ValueError:
        raise UsageError(f"bad grid {text!r}; expected NXxNY:x0,y0,h or NXxNY:x0,y0,hx,hy") from None
    try:
        return GridSpec(nx, ny, x0, y0, hx, hy)
    except GridError as exc:
        raise UsageError(str(exc)) from None


def parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


_FUNCS = {n: getattr(np, n) for n in ("sin", "cos", "tan", "exp", "log", "sqrt", "sinh", "cosh", "tanh",
                                      "arctan", "abs")}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}


def parse_profile(text: str):
    """A function of ``s`` from an arithmetic expression.

    A bare function name stands for that function applied to ``s``, so
    ``"0.2*sin"`` means ``0.2*sin(s)``.
    """
    try:
        tree = ast.parse(text, mode="eval").body
    except SyntaxError:
        raise UsageError(f"cannot parse profile {text!r}") from None

    def ev(node, s):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id == "s":
                return s
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            if node.id in _FUNCS:
                return _FUNCS[node.id](s)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left, s), ev(node.right, s))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand, s)
            return -v if isinstance(node.op, ast.USub) else v
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0], s))
        raise UsageError(f"unsupported element in profile {text!r}")

    ev(tree, np.array([0.5]))
    return lambda s: ev(tree, s)


def _load_toml(path: str | None, family: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"bad TOML in {path}: {exc}") from None
    block = data.get("family", data)
    block = block.get(family, block) if isinstance(block, dict) else {}
    return {k: v for k, v in block.items() if not isinstance(v, dict)}


# ---------------------------------------------------------------------------
# family generators


DEFAULT_GRIDS = {
    "roman": "33x33:1,1,0.03125",
    "kummer": "33x33:1,1,0.03125",
    "extension": "33x33:1,1,0.03125",
    "pseudospherical": "33x33:1,-0.5,0.03125",
    "minimal": "33x33:0.5,0.5,0.03125",
    "demoulin": "33x33:0,0,0.015625",
}

FAMILY_KEYS = {
    "constant": ("values",),
    "rotation": ("profile", "c"),
    "roman": ("a", "sign"),
    "kummer": ("coeffs", "sign"),
    "extension": ("c", "A0", "B0", "F0"),
    "affine-sphere": ("beta0", "c"),
    "pseudospherical": ("kind", "a"),
    "rnet4": ("xi", "eta"),
    "minimal": (),
    "demoulin": ("source", "edge"),
    "godeaux-rozet": ("beta0",),
    "projmin": ("beta0", "gamma0"),
}


def _listify(v) -> list[float]:
    if isinstance(v, str):
        return parse_floats(v)
    if isinstance(v, (int, float)):
        return [float(v)]
    return [float(x) for x in v]


def build_family(name: str, params: dict, grid: GridSpec) -> Coeffs:
    p = dict(params)
    num = lambda k, default: float(p.get(k, default))
    if name == "constant":
        vals = _listify(p.get("values", [1.0, 1.0, 1.5, 1.5]))
        if len(vals) != 4:
            raise UsageError("constant family needs four values beta,gamma,V,W")
        return fam.make_constant(*vals, grid)
    if name == "rotation":
        prof = p.get("profile", "0.2*sin")
        return fam.make_rotation(parse_profile(prof) if isinstance(prof, str) else (lambda s: float(prof) + 0 * s),
                                 num("c", 0.3), grid)
    if name == "roman":
        a = _listify(p.get("a", [1.0, 0.0, 0.0]))
        if len(a) != 3:
            raise UsageError("--a needs three coefficients a0,a1,a2")
        return fam.make_roman(fam.RomanSpec(*a, sign=num("sign", 1.0)), grid)
    if name == "kummer":
        return fam.make_kummer(fam.KummerSpec(tuple(_listify(p.get("coeffs", [1.0]))), sign=num("sign", 1.0)), grid)
    if name == "extension":
        c = num("c", 2.0)
        beta = fam.constant_curvature_metric(lambda x: x, np.ones_like, lambda y: y, np.ones_like, c, grid)
        out, _ = fam.constant_curvature_extension(beta, c, num("A0", 0.0), num("B0", 0.0), num("F0", 0.0))
        return out
    if name == "affine-sphere":
        return fam.make_affine_sphere(num("beta0", 1.0), num("c", -1.0), grid)
    if name == "pseudospherical":
        phi, derivs = fam.sine_gordon_kink(num("a", 1.0))
        kind = str(p.get("kind", "trig"))
        if kind != "trig":
            raise UsageError("the shipped kink potential is trigonometric; use --kind trig")
        return fam.make_pseudospherical(kind, phi, grid, derivs)
    if name == "rnet4":
        return fam.make_rnet4(grid, xi_data=num("xi", 0.0), eta_data=num("eta", 0.0))
    if name == "minimal":
        return fam.make_minimal(grid)
    if name == "demoulin":
        source = str(p.get("source", "constants"))
        if source == "constants":
            return fam.make_demoulin(grid)
        if source != "goursat":
            raise UsageError("--source must be 'constants' or 'goursat'")
        edge = _listify(p.get("edge", [0.0, 0.0]))
        if len(edge) != 2:
            raise UsageError("--edge needs two constants u,v")
        pair = lambda t: (np.full_like(np.asarray(t, float), edge[0]), np.full_like(np.asarray(t, float), edge[1]))
        return fam.make_demoulin(grid, "goursat", pair, pair)
    if name == "godeaux-rozet":
        return fam.make_godeaux_rozet_const(num("beta0", 1.0), grid)
    if name == "projmin":
        return fam.make_projmin_const(num("beta0", 1.0), num("gamma0", 1.0), grid)
    raise UsageError(f"unknown family {name!r}")


# ---------------------------------------------------------------------------
# commands


def _read(path: str) -> Coeffs:
    try:
        with open(path) as fh:
            return read_field(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except (FieldFileError, GridError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _write_text(path: str, text: str) -> None:
    Path(path).write_text(text)


def _distinct(*paths) -> None:
    real = [str(Path(p).resolve()) for p in paths if p]
    if len(set(real)) != len(real):
        raise UsageError("input and output paths must be distinct")


def _residual_line(label: str, rep) -> str:
    parts = " ".join(f"{k}={rep.sup(k):.3e}" for k in sorted(rep.components))
    return f"{label} sup: {parts}"


def cmd_family(args) -> int:
    if args.name not in fam.FAMILIES:
        raise UsageError(f"unknown family {args.name!r}; choose from {', '.join(fam.FAMILIES)}")
    params = _load_toml(args.config, args.name)
    for key in FAMILY_KEYS[args.name]:
        val = getattr(args, key.lower(), None)
        if val is not None:
            params[key] = val
    grid = parse_grid(args.grid or DEFAULT_GRIDS.get(args.name, "33x33:0,0,0.03125"))
    try:
        c = build_family(args.name, params, grid)
    except UsageError:
        raise
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        raise MathError(f"family {args.name}: {exc}") from None
    out = args.out or f"{args.name}.json"
    with open(out, "w") as fh:
        write_field(c, fh)
    rep = gc1_residual(c, args.tol)
    print(_residual_line("gc1_residual", rep))
    ok = rep.passed()
    print(f"gc1 {'pass' if ok else 'FAIL'} at tolerance {args.tol:g}; field written to {out}")
    return EXIT_OK if ok else EXIT_MATH


def cmd_check(args) -> int:
    c = _read(args.field)
    _distinct(args.field, args.out)
    gc1 = gc1_residual(c, args.tol)
    report: dict = {"gc1": gc1.as_dict()}
    try:
        report["gc2"] = gc2_residual(c, tol=args.tol).as_dict()
    except (PreconditionError, GridError, ValueError) as exc:
        report["gc2"] = {"error": str(exc)}
    try:
        report["classes"] = classify(c, args.class_tol).as_dict()
    except (PreconditionError, GridError, ValueError) as exc:
        report["classes"] = {"error": str(exc)}
    text = dumps(report)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    print(_residual_line("gc1_residual", gc1), file=sys.stderr)
    return EXIT_OK if gc1.passed() else EXIT_MATH


def _is_quadric(c: Coeffs) -> bool:
    return c.beta.sup() == 0 and c.gamma.sup() == 0


def _quadric_frame(c: Coeffs, tol: float):
    """Radius vector of a quadric field, which needs V = V(x) and W = W(y)."""
    g = c.grid
    V, W = c.V.values, c.W.values
    if np.max(np.abs(V - V[:1, :])) > tol * max(1.0, np.max(np.abs(V))) or \
            np.max(np.abs(W - W[:, :1])) > tol * max(1.0, np.max(np.abs(W))):
        raise MathError("a quadric field needs V = V(x) and W = W(y)")
    Vx = CubicSpline(g.x, V[0, :])
    Wy = CubicSpline(g.y, W[:, 0])
    return fr.integrate_separable_quadric(Vx, Wy, g)


def cmd_frame(args) -> int:
    c = _read(args.field)
    _distinct(args.field, args.mesh, args.invariants)
    gc1 = gc1_residual(c, args.tol)
    if not gc1.passed():
        raise MathError(f"field fails gc1 at tolerance {args.tol:g} (sup {gc1.sup():.3e})")
    inv: dict = {"gc1_sup": gc1.sup()}
    if _is_quadric(c):
        r = _quadric_frame(c, PRECONDITION_TOL)
        mesh = fr.to_affine_mesh(r, c.grid)
        inv["system"] = "separable-quadric"
    else:
        lams = args.lam if args.lam else [None]
        if any(v is not None for v in lams) and args.system not in fr.SPECTRAL:
            raise UsageError(f"{args.system} takes no spectral parameter")
        per = {}
        for lam in lams:
            frame = fr.integrate_frame(c, args.system, lam=lam)
            X, Y = fr.system_matrices(c, sel=args.system, lam=lam)
            entry = fr.frame_invariants(frame)
            loop = fr.rectangle_loop(0, 0, c.grid.nx - 1, c.grid.ny - 1)
            start = frame.values[0, 0]
            end = fr.transport(X, Y, start, loop, substeps=fr.DEFAULT_SUBSTEPS)
            entry["loop_defect"] = float(np.max(np.abs(end - start)))
            swap = fr.integrate_frame(c, args.system, lam=lam, order="yx")
            both = frame.valid & swap.valid
            entry["sweep_discrepancy"] = float(np.max(np.abs(frame.values[both] - swap.values[both])))
            entry["zero_curvature"] = fr.zero_curvature_residual(X, Y).as_dict()
            per["default" if lam is None else format(lam, ".17g")] = entry
        inv["system"] = args.system
        inv["lambda"] = per
        if args.system == "wilczynski4":
            mesh = fr.to_affine_mesh(frame)
        else:
            mesh = fr.to_affine_mesh(fr.integrate_frame(c, "wilczynski4"))
    with open(args.mesh, "w") as fh:
        fr.write_obj(mesh, fh)
    _write_text(args.invariants, dumps(inv))
    print(f"mesh: {int(mesh.valid.sum())} vertices -> {args.mesh}; invariants -> {args.invariants}")
    return EXIT_OK


def cmd_backlund(args) -> int:
    c = _read(args.field)
    _distinct(args.field, args.boundary, args.out, args.report)
    bnd = {}
    if args.boundary:
        try:
            with open(args.boundary) as fh:
                bnd = read_boundary(fh)
        except OSError as exc:
            raise UsageError(f"cannot read {args.boundary}: {exc.strerror}") from None
        except FieldFileError as exc:
            raise UsageError(f"{args.boundary}: {exc}") from None
    corner = {}
    if "u1_left" in bnd and bnd["u1_left"].size:
        corner["U"] = float(bnd["u1_left"][0])
    if "u2_bottom" in bnd and bnd["u2_bottom"].size:
        corner["V"] = float(bnd["u2_bottom"][0])
    if args.kind in ("rectify", "quadric"):
        fn = cg.rectify_linear_complex if args.kind == "rectify" else cg.map_to_quadric
        out, report = fn(c, corner or None)
        report = dict(report, kind=args.kind)
        if args.kind == "quadric":
            report["class_residual"] = max(report["beta_tilde_sup"], report["gamma_tilde_sup"])
        else:
            report["class_residual"] = report["beta_tilde_sup"]
    else:
        lam = args.lam if args.lam is not None else bnd.get("lambda")
        if lam is None:
            raise UsageError("the spectral parameter is required (--lambda or 'lambda' in the boundary file)")
        if "H_corner" in bnd:
            corner["H"] = bnd["H_corner"]
        if "K_corner" in bnd:
            corner["K"] = bnd["K_corner"]
        res = cg.backlund(c, cg.BacklundKind(args.kind, float(lam), corner))
        out, report = res.coeffs, res.report
    with open(args.out, "w") as fh:
        write_field(out, fh)
    if args.report:
        _write_text(args.report, dumps(report))
    keys = ("class_residual", "constraint_drift", "identity")
    print(" ".join(f"{k}={report[k]:.3e}" for k in keys if k in report))
    return EXIT_OK


SPECTRAL_PROBLEMS = ("mvn", "kp", "ds", "jonas", "demoulin")


def _component_residual(c: Coeffs, frame, problem: str, lam: float, rows: tuple[str, str]) -> dict:
    """Scalar residual sup per name, maximised over the frame components."""
    worst: dict[str, float] = {}
    for m in range(frame.values.shape[3]):
        a, b = (frame.component(r, m) for r in rows)
        keys = ("A", "B") if problem == "demoulin" else ("U", "V")
        rep = fr.scalar_spectral_residual(c, dict(zip(keys, (a, b))), problem, lam)
        for k in rep.components:
            worst[k] = max(worst.get(k, 0.0), rep.sup(k))
    return worst


def spectral_entry(c: Coeffs, problem: str, lam: float) -> dict:
    if problem in ("mvn", "jonas", "demoulin"):
        sel = {"mvn": "plucker6-mvn", "jonas": "jonas8", "demoulin": "plucker6-projmin"}[problem]
        if problem == "demoulin":
            fr._check(c, "demoulin", PRECONDITION_TOL, problem)
        X, Y = fr.system_matrices(c, sel=sel, lam=lam)
        frame = fr.integrate_matrices(X, Y, fr.default_frame(sel))
        rows = ("A", "B") if problem == "demoulin" else ("U", "V")
        scalar = _component_residual(c, frame, problem, lam, rows)
    else:
        shifted = fam.lambda_shift(c, lam, "r0" if problem == "kp" else "r")
        X, Y = fr.system_matrices(shifted, sel="wilczynski4")
        frame = fr.integrate_matrices(X, Y, fr.normalize_det(np.eye(4)))
        r = [frame.component(0, m) for m in range(4)]
        rep = fr.scalar_spectral_residual(c, {"r": r}, problem, lam)
        scalar = {k: rep.sup(k) for k in rep.components}
    zc = fr.zero_curvature_residual(X, Y)
    return {"zero_curvature": zc.sup(), "scalar": scalar}


def cmd_spectral(args) -> int:
    lams = args.lam if args.lam is not None else []
    if isinstance(lams, str):
        lams = parse_floats(lams)
    if not lams:
        raise UsageError("the lambda list is empty")
    c = _read(args.field)
    _distinct(args.field, args.out)
    per = {format(lam, ".17g"): spectral_entry(c, args.problem, lam) for lam in lams}
    zc = [e["zero_curvature"] for e in per.values()]
    report = {"problem": args.problem, "lambda": per, "zero_curvature_spread": max(zc) - min(zc)}
    text = dumps(report)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    print(f"zero-curvature spread across {len(lams)} values of lambda: {report['zero_curvature_spread']:.3e}",
          file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="surf", description="Projective surfaces in asymptotic coordinates.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("family", help="generate a coefficient field")
    f.add_argument("name", help=f"one of: {', '.join(fam.FAMILIES)}")
    f.add_argument("--grid", help="NXxNY:x0,y0,h or NXxNY:x0,y0,hx,hy")
    f.add_argument("--out", "-o", help="output field file (default NAME.json)")
    f.add_argument("--config", help="TOML file with family parameters")
    f.add_argument("--tol", type=float, default=1e-6, help="gc1 tolerance for the exit code")
    f.add_argument("--values", help="constant: beta,gamma,V,W")
    f.add_argument("--profile", help="rotation: profile expression in s, e.g. 0.2*sin")
    f.add_argument("--c", type=float, help="rotation/extension/affine-sphere constant")
    f.add_argument("--a", help="roman: a0,a1,a2; pseudospherical: kink slope")
    f.add_argument("--sign", type=float)
    f.add_argument("--coeffs", help="kummer: coefficients of P, lowest degree first")
    f.add_argument("--A0", dest="a0", type=float)
    f.add_argument("--B0", dest="b0", type=float)
    f.add_argument("--F0", dest="f0", type=float)
    f.add_argument("--beta0", type=float)
    f.add_argument("--gamma0", type=float)
    f.add_argument("--kind")
    f.add_argument("--xi", type=float)
    f.add_argument("--eta", type=float)
    f.add_argument("--source")
    f.add_argument("--edge", help="demoulin goursat: constant edge values u,v")
    f.set_defaults(func=cmd_family)

    c = sub.add_parser("check", help="compatibility and class report of a field file")
    c.add_argument("field")
    c.add_argument("--out", "-o")
    c.add_argument("--tol", type=float, default=1e-6)
    c.add_argument("--class-tol", type=float, default=1e-6)
    c.set_defaults(func=cmd_check)

    r = sub.add_parser("frame", help="integrate a frame and export a mesh")
    r.add_argument("field")
    r.add_argument("--system", default="wilczynski4", choices=fr.SYSTEMS)
    r.add_argument("--lambda", dest="lam", type=float, action="append")
    r.add_argument("--mesh", default="surface.obj")
    r.add_argument("--invariants", default="invariants.json")
    r.add_argument("--tol", type=float, default=1e-6)
    r.set_defaults(func=cmd_frame)

    b = sub.add_parser("backlund", help="Bäcklund transformation by a W-congruence")
    b.add_argument("field")
    b.add_argument("--kind", required=True, choices=cg.BACKLUND_KINDS + ("rectify", "quadric"))
    b.add_argument("--boundary", help="JSON with u1_left, u2_bottom, lambda, H_corner, K_corner")
    b.add_argument("--lambda", dest="lam", type=float)
    b.add_argument("--out", "-o", default="transformed.json")
    b.add_argument("--report", default="backlund_report.json")
    b.set_defaults(func=cmd_backlund)

    s = sub.add_parser("spectral", help="spectral residuals over a list of lambda values")
    s.add_argument("field")
    s.add_argument("--problem", required=True, choices=SPECTRAL_PROBLEMS)
    s.add_argument("--lambda", dest="lam", help="comma-separated values")
    s.add_argument("--out", "-o")
    s.set_defaults(func=cmd_spectral)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "func", None) is cmd_family:
        # --a is shared: numeric slope for the kink, a list for roman
        if args.name == "pseudospherical" and args.a is not None:
            args.a = float(args.a)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"surf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MathError, PreconditionError, fam.ConvergenceError) as exc:
        print(f"surf: precondition failed: {exc}", file=sys.stderr)
        return EXIT_MATH
    except (ValueError, GridError) as exc:
        print(f"surf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
