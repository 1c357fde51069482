"""Command line front end: ``horoforge <command> ...``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.  Every command
that writes files also writes ``<output>.manifest.json``; when the output
goes to stdout the manifest is printed to stderr as one JSON line.
"""

import argparse
import hashlib
import json
import math
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import geometry_out as go
from . import monodromy as mo
from . import packing as pk
from . import surface_model as sm
from .errors import (DegenerateError, DomainError, GeometryError, HoroforgeError, InvariantViolation,
                     NumericalError, PreconditionError, ValidationError)
from .kernels import BACKEND

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def threads() -> int:
    """Worker cap from HOROFORGE_THREADS (default 1)."""
    raw = os.environ.get("HOROFORGE_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        raise ValidationError(f"HOROFORGE_THREADS must be an integer, got {raw!r}")
    return max(1, k)


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # pragma: no cover - not installed
        return "0+unknown"


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Bookkeeping for the manifest of one command."""

    def __init__(self, args, argv):
        self.command = " ".join(a for a in (args.command, getattr(args, "sub", None)) if a)
        self.argv = list(argv)
        self.inputs = {}
        self.outputs = []
        self.settings = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "sub")}

    def read(self, path) -> str:
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"no such file: {path}")
        self.inputs[str(path)] = _sha(p)
        return p.read_text()

    def write(self, path, text: str):
        if path is None or path == "-":
            sys.stdout.write(text)
            if not text.endswith("\n"):
                sys.stdout.write("\n")
            return
        p = Path(path)
        if p.parent and not p.parent.exists():
            p.parent.mkdir(parents=True)
        p.write_text(text)
        self.outputs.append(str(path))

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "argv": self.argv,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "settings": self.settings,
            "versions": {
                "horoforge": _version(),
                "numpy": np.__version__,
                "python": platform.python_version(),
                "kernel": BACKEND,
            },
        }

    def finish(self):
        text = json.dumps(self.manifest(), indent=1, sort_keys=True, default=str)
        if self.outputs:
            Path(self.outputs[0] + ".manifest.json").write_text(text + "\n")
        else:
            sys.stderr.write(json.dumps(self.manifest(), sort_keys=True, default=str) + "\n")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _load_json(run, path):
    try:
        return json.loads(run.read(path))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc


def _load_params(run, path) -> sm.SurfaceParams:
    d = _load_json(run, path)
    try:
        return sm.SurfaceParams.from_dict(d)
    except (KeyError, TypeError, IndexError) as exc:
        raise ValidationError(f"{path}: not a model file ({exc})") from exc


def _parse_floats(text: str, name: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"{name}: expected comma separated numbers, got {text!r}")


def parse_ladder(text: str) -> list:
    """``"1e-3:4"`` -> four values starting at 1e-3, each half the previous;
    a comma separated list is taken literally."""
    if ":" in text:
        a, k = text.split(":", 1)
        try:
            start, count = float(a), int(k)
        except ValueError:
            raise ValidationError(f"bad ladder {text!r}")
        if count < 2 or start <= 0:
            raise ValidationError("a ladder needs a positive start and at least two rungs")
        return [start / 2 ** q for q in range(count)]
    vals = _parse_floats(text, "ladder")
    if len(vals) < 2:
        raise ValidationError("a ladder needs at least two rungs")
    return vals


def _slope(x, y) -> float:
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# pack


def cmd_pack(args, run):
    if args.sub == "lattice":
        P = pk.build_lattice_packing(args.R)
    elif args.sub == "apollonian":
        P = pk.build_apollonian_packing(args.steps, args.seed)
    elif args.sub == "chain2d":
        P = pk.build_horocycle_chain(args.n)
    elif args.sub == "verify":
        P = pk.Packing.from_dict(_load_json(run, args.file))
        rep = pk.verify_packing_bounds(P, seed=args.seed)
        rep["connected"] = P.graph().is_connected()
        keys = list(rep)
        run.write(args.output, pk.report_csv([[rep[k] for k in keys]], keys))
        return EXIT_OK
    else:  # scan
        rows, C = pk.lattice_ratio_scan(args.R_max)
        body = [[r.R, r.n, r.m, f"{r.ratio:.12g}", r.upper_ok, r.lower_ok] for r in rows]
        text = pk.report_csv(body, ["R", "n", "m", "ratio", "m_le_4(n-1)", "ratio_ge_(n-1)/n"])
        run.write(args.output, text + f"# C in m >= 4n - C sqrt(n): {C:.12g}\n")
        return EXIT_OK
    run.write(args.output, P.to_json() + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# model / solve


def build_model(P, xi, tau) -> sm.SurfaceParams:
    if not P.graph().is_connected():
        raise ValidationError("tangency graph is not connected")
    return sm.from_packing(P, xi, tau=tau)


def cmd_model(args, run):
    P = pk.Packing.from_dict(_load_json(run, args.packing))
    xi = _parse_floats(args.xi, "--xi") if args.xi else [1.0] * P.n
    params = build_model(P, xi, args.tau)
    run.write(args.output, params.to_json() + "\n")
    return EXIT_OK


def _check_tau(tau):
    if not 0 < tau <= sm.TAU_MAX:
        raise ValidationError(f"tau={tau} outside (0, tau_max={sm.TAU_MAX}]; reduce tau")


def convergence_csv(result) -> str:
    d = result.defects
    rows = [[k, f"{r:.6e}"] for k, r in result.history]
    text = pk.report_csv(rows, ["iteration", "residual_norm"])
    lines = [f"# su2 defect {name} {v:.6e}" for name, v in sorted(d.items())]
    return text + "".join(line + "\n" for line in lines)


def _defect_dict(defects) -> dict:
    return {name: float(v) for name, v in sorted(defects.items())}


def solve(params, tau, tol, tol_ode, max_iter, log=None):
    _check_tau(tau)

    def cb(k, st):
        if log:
            log(f"iteration {k}: residual {st.norm:.3e}")

    return mo.newton_solve(params.with_params(tau=tau), max_iter=max_iter, tol_res=tol,
                           tol_ode=tol_ode, callback=cb)


def ladder_report(params, taus, tol, tol_ode, max_iter, log=None) -> dict:
    """Solve along a tau ladder and fit decay rates."""
    for tau in taus:
        _check_tau(tau)
    rows = []
    for tau in taus:
        res = solve(params, tau, tol, tol_ode, max_iter)
        p = res.params
        db = float(np.abs(p.b - p.b0).max())
        rows.append({
            "tau": tau,
            "iterations": res.iterations,
            "residual": float(res.residual_norm),
            "b_minus_b0": db,
            "q_max": float(np.abs(p.q).max()),
            "defect_max": float(max(res.defects.values())),
        })
        if log:
            log(f"tau {tau:.3e}: {res.iterations} iterations, |b-b0| {db:.3e}")
    t = [r["tau"] for r in rows]
    fits = {
        "defect_slope_tau": _slope(t, [r["defect_max"] for r in rows]),
        "b_slope_tau_log_tau": _slope([x * abs(math.log(x)) for x in t], [r["b_minus_b0"] for r in rows]),
        "b_slope_inv_log_tau": _slope([1 / abs(math.log(x)) for x in t], [r["b_minus_b0"] for r in rows]),
    }
    return {"rows": rows, "fits": fits}


def cmd_solve(args, run):
    params = _load_params(run, args.model)
    log = (lambda s: sys.stderr.write(s + "\n")) if args.verbose else None
    if args.ladder:
        rep = ladder_report(params, parse_ladder(args.ladder), args.tol, args.tol_ode, args.max_iter, log)
        run.write(args.output, _dumps(rep))
        return EXIT_OK
    tau = params.tau if args.tau is None else args.tau
    res = solve(params, tau, args.tol, args.tol_ode, args.max_iter, log)
    d = res.params.to_dict()
    d["solve"] = {"iterations": res.iterations, "residual": float(res.residual_norm),
                  "defects": _defect_dict(res.defects)}
    run.write(args.output, json.dumps(d, indent=1) + "\n")
    csv_path = args.csv
    if csv_path is None and args.output not in (None, "-"):
        csv_path = str(Path(args.output).with_suffix("")) + "-convergence.csv"
    if csv_path:
        run.write(csv_path, convergence_csv(res))
    return EXIT_OK


def cmd_ladder(args, run):
    params = _load_params(run, args.model)
    log = (lambda s: sys.stderr.write(s + "\n")) if args.verbose else None
    rep = ladder_report(params, parse_ladder(args.taus), args.tol, args.tol_ode, args.max_iter, log)
    run.write(args.output, _dumps(rep))
    return EXIT_OK


# ---------------------------------------------------------------------------
# mesh / ends / probe


def patches_json(patches) -> str:
    return json.dumps({"patches": [P.to_dict() for P in patches]}) + "\n"


def read_patches(text: str) -> list:
    try:
        d = json.loads(text)
        return [go.MeshPatch.from_dict(p) for p in d["patches"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"not a patch file ({exc})") from exc


def mesh(params, eps, R, grid):
    if grid < 8:
        raise ValidationError("grid must be at least 8")
    if not 0 < eps < 1:
        raise ValidationError("eps must lie in (0, 1)")
    return go.build_surface(params, eps=eps, R=R, grid=grid)


def cmd_mesh(args, run):
    params = _load_params(run, args.solved)
    S = mesh(params, args.eps, args.R, args.grid)
    fmt = "ply" if args.output and args.output.endswith(".ply") else "obj"
    run.write(args.output, go.export_mesh(S.patches, model=args.model, fmt=fmt))
    ppath = args.patches
    if ppath is None and args.output not in (None, "-"):
        ppath = str(Path(args.output).with_suffix("")) + "-patches.json"
    if ppath:
        run.write(ppath, patches_json(S.patches))
    sys.stderr.write(f"seam gap {S.seam_gap:.3e}\n")
    return EXIT_OK


def ends(params, fit=True) -> list:
    with ThreadPoolExecutor(max_workers=threads()) as ex:
        return list(ex.map(lambda i: go.analyze_end(params, i, fit=fit), range(params.n)))


def ends_csv(rows) -> str:
    def c(z):
        return f"{z.real:.10e}{z.imag:+.10e}j"

    body = [[e.i, c(e.alpha), c(e.beta), c(e.delta), f"{e.exponent:.10e}", f"{e.fitted:.10e}"] for e in rows]
    return pk.report_csv(body, ["i", "alpha", "beta", "delta", "exponent", "fitted"])


def cmd_ends(args, run):
    params = _load_params(run, args.solved)
    run.write(args.output, ends_csv(ends(params, fit=not args.no_fit)))
    return EXIT_OK


def cmd_probe(args, run):
    patches = read_patches(run.read(args.patches))
    rep = go.embeddedness_probe(patches)
    run.write(args.output, _dumps(rep.to_dict()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# demo


def demo_packing(name: str, R: float = 1.0) -> pk.Packing:
    H = pk.Horosphere
    if name == "two":
        return pk.with_tangencies([H.plane(1.0), H.sphere(0j, 0.5)])
    if name == "triangle":
        return pk.with_tangencies([H.plane(1.0), H.sphere(0j, 0.5), H.sphere(1 + 0j, 0.5)])
    if name == "lattice":
        return pk.build_lattice_packing(R)
    raise ValidationError(f"unknown demo {name!r}")


def pipeline(P, tau, outdir, eps, R, grid, tol, tol_ode, max_iter, run, log=None, fit=True) -> dict:
    """verify -> model -> solve -> mesh -> ends -> probe, writing every stage."""
    out = Path(outdir)
    say = log or (lambda s: None)
    rep = pk.verify_packing_bounds(P)
    run.write(out / "packing.json", P.to_json() + "\n")
    params = build_model(P, [1.0] * P.n, tau)
    run.write(out / "model.json", params.to_json() + "\n")
    say(f"model: n={params.n} m={params.m} genus={params.genus}")
    res = solve(params, tau, tol, tol_ode, max_iter, log)
    sol = res.params
    d = sol.to_dict()
    d["solve"] = {"iterations": res.iterations, "residual": float(res.residual_norm),
                  "defects": _defect_dict(res.defects)}
    run.write(out / "solved.json", json.dumps(d, indent=1) + "\n")
    run.write(out / "solved-convergence.csv", convergence_csv(res))
    S = mesh(sol, eps, R, grid)
    run.write(out / "surface.obj", go.export_mesh(S.patches))
    run.write(out / "surface-patches.json", patches_json(S.patches))
    say(f"mesh: {sum(len(p.triangles) for p in S.patches)} triangles, seam gap {S.seam_gap:.3e}")
    end_rows = ends(sol, fit=fit)
    run.write(out / "ends.csv", ends_csv(end_rows))
    probe = go.embeddedness_probe(S.patches)
    run.write(out / "probe.json", _dumps(probe.to_dict()))
    say(f"probe: {probe.intersections} intersections")
    summary = {
        "n": P.n, "m": P.m, "genus": sol.genus, "ends": sol.n, "bounds": rep,
        "iterations": res.iterations, "residual": float(res.residual_norm),
        "seam_gap": S.seam_gap, "intersections": probe.intersections,
        "triangles": int(sum(len(p.triangles) for p in S.patches)),
    }
    run.write(out / "summary.json", _dumps(summary))
    return summary


def cmd_demo(args, run):
    P = demo_packing(args.packing, args.R) if args.file is None else pk.Packing.from_dict(_load_json(run, args.file))
    log = lambda s: sys.stderr.write(s + "\n")  # noqa: E731
    outdir = args.outdir or f"demo-{args.packing}"
    pipeline(P, args.tau, outdir, args.eps, args.R_cap, args.grid, args.tol, args.tol_ode,
             args.max_iter, run, log, fit=not args.no_fit)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_solver_flags(p, max_iter=20):
    p.add_argument("--tol", type=float, default=1e-9,
                   help="Newton stop: max-norm of the monodromy residual (default %(default)g)")
    p.add_argument("--tol-ode", type=float, default=1e-12,
                   help="per-segment Richardson error bound for RK4 transports (default %(default)g)")
    p.add_argument("--max-iter", type=int, default=max_iter, help="Newton iteration cap (default %(default)s)")


def _add_mesh_flags(p, R_flag="--R", R_dest="R"):
    p.add_argument("--eps", type=float, default=go.EPS,
                   help="radius of the node disks cut from each cap (default %(default)g)")
    p.add_argument(R_flag, type=float, default=go.R_CAP, dest=R_dest,
                   help="cap radius beyond the node disks (default %(default)g)")
    p.add_argument("--grid", type=int, default=64, help="angular resolution (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="horoforge", description="CMC-1 surfaces from horosphere packings")
    sub = ap.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("pack", help="generate or check packings")
    ps = pp.add_subparsers(dest="sub", required=True)
    q = ps.add_parser("lattice", help="horospheres at integer points of a disk")
    q.add_argument("--R", type=float, required=True)
    q = ps.add_parser("apollonian", help="repeated insertion into a tangent triple")
    q.add_argument("--steps", type=int, required=True)
    q.add_argument("--seed", type=int, default=0)
    q = ps.add_parser("chain2d", help="2D chain of horocycles")
    q.add_argument("--n", type=int, required=True)
    q = ps.add_parser("verify", help="combinatorial bounds of a packing file (CSV)")
    q.add_argument("file")
    q.add_argument("--seed", type=int, default=12345, help="seed of the generic isometry")
    q = ps.add_parser("scan", help="lattice ratio m/n for R = 1..R_max (CSV)")
    q.add_argument("--R-max", type=float, default=10, dest="R_max")
    for q in ps.choices.values():
        q.add_argument("-o", "--output", default=None)
    pp.set_defaults(func=cmd_pack)

    mp = sub.add_parser("model", help="surface model from a packing")
    ms = mp.add_subparsers(dest="sub", required=True)
    q = ms.add_parser("build")
    q.add_argument("packing")
    q.add_argument("--xi", default=None, help="deflation speeds, comma separated (default all 1)")
    q.add_argument("--tau", type=float, default=0.0, help="node size parameter, 0 <= tau <= %g" % sm.TAU_MAX)
    q.add_argument("-o", "--output", default=None)
    mp.set_defaults(func=cmd_model)

    q = sub.add_parser("solve", help="solve the monodromy problem")
    q.add_argument("model")
    q.add_argument("--tau", type=float, default=None, help="default: the tau stored in the model")
    q.add_argument("--ladder", default=None, help="tau ladder 'start:count' (halving) or a list")
    q.add_argument("--csv", default=None, help="convergence CSV (default next to -o)")
    q.add_argument("-o", "--output", default=None)
    q.add_argument("-v", "--verbose", action="store_true")
    _add_solver_flags(q)
    q.set_defaults(func=cmd_solve)

    q = sub.add_parser("ladder", help="solve along a tau ladder and fit decay rates")
    q.add_argument("model")
    q.add_argument("--taus", default="1e-3:4")
    q.add_argument("-o", "--output", default=None)
    q.add_argument("-v", "--verbose", action="store_true")
    _add_solver_flags(q)
    q.set_defaults(func=cmd_ladder)

    q = sub.add_parser("mesh", help="mesh a solved model")
    q.add_argument("solved")
    _add_mesh_flags(q)
    q.add_argument("--model", choices=["halfspace", "ball"], default="halfspace")
    q.add_argument("--patches", default=None, help="patch JSON (default next to -o)")
    q.add_argument("-o", "--output", default=None)
    q.set_defaults(func=cmd_mesh)

    q = sub.add_parser("ends", help="end exponents (CSV)")
    q.add_argument("solved")
    q.add_argument("--no-fit", action="store_true", help="skip the far-field slope fit")
    q.add_argument("-o", "--output", default=None)
    q.set_defaults(func=cmd_ends)

    q = sub.add_parser("probe", help="self-intersection probe of a patch file")
    q.add_argument("patches")
    q.add_argument("-o", "--output", default=None)
    q.set_defaults(func=cmd_probe)

    q = sub.add_parser("demo", help="full pipeline on a demo packing")
    q.add_argument("packing", nargs="?", default="two", choices=["two", "triangle", "lattice"])
    q.add_argument("--file", default=None, help="use this packing file instead")
    q.add_argument("--R", type=float, default=1.0, help="lattice radius")
    q.add_argument("--tau", type=float, default=1e-4)
    q.add_argument("--outdir", default=None)
    q.add_argument("--no-fit", action="store_true")
    _add_mesh_flags(q, "--R-cap", "R_cap")
    _add_solver_flags(q)
    q.set_defaults(func=cmd_demo)
    return ap


def run(argv=None) -> int:
    """Run one command; returns the exit code."""
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    r = Run(args, argv)
    try:
        code = args.func(args, r)
    except NumericalError as exc:
        sys.stderr.write(f"horoforge: numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except (ValidationError, DomainError, DegenerateError, PreconditionError, InvariantViolation,
            GeometryError, OSError) as exc:
        sys.stderr.write(f"horoforge: invalid input: {exc}\n")
        return EXIT_INPUT
    except HoroforgeError as exc:
        sys.stderr.write(f"horoforge: {exc}\n")
        return EXIT_INPUT
    r.finish()
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
