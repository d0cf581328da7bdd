"""Command-line entry point: ``abreukit <command> [problem.toml] [flags]``.

Commands: ``stability``, ``solve``, ``diagnose``, ``joyce-verify`` and
``oracle-1d``. The report body goes to standard output and is byte-identical
for identical inputs; wall-clock timings go to standard error. CSV artifacts
are written to ``--out``.

Exit codes: 0 success, 1 error, 2 destabilized verdict, 3 solver
non-convergence or a failed oracle tolerance.
"""
from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AbreuKitError, GeometryError, ParseError, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

SCHEMA_VERSION = 1
EXIT_OK, EXIT_ERROR, EXIT_DESTABILIZED, EXIT_NOT_CONVERGED = 0, 1, 2, 3
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

_TOP_KEYS = {"schema_version", "vertices", "edge_weights", "A", "solver", "scan", "diagnostics"}
_SECTION_KEYS = {
    "solver": {"N": int, "gtol": float, "max_iters": int, "method": str},
    "scan": {"n_angles": int, "n_offsets": int, "n_candidates": int},
    "diagnostics": {"edge_probes": list, "vertex_ts": list, "paths": list,
                    "envelope_X": list, "volume_radius": float},
}


@dataclass
class ProblemFile:
    path: Path
    digest: str
    vertices: list
    edge_weights: list
    A: object
    solver: dict = field(default_factory=dict)
    scan: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def polytope(self):
        from .geometry import build_polytope

        try:
            return build_polytope(self.vertices, self.edge_weights, self.A)
        except GeometryError as exc:
            raise ValidationError(f"{self.path}: {type(exc).__name__}: {exc}") from exc


@dataclass
class RunReport:
    command: str
    digest: str
    lines: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK

    def add(self, key, value):
        self.lines.append(f"{key}: {_fmt(value)}")

    def stage(self, name):
        return _Stage(self, name)

    def body(self):
        head = [f"command: {self.command}", f"input_sha256: {self.digest}"]
        return "\n".join(head + self.lines) + "\n"


class _Stage:
    def __init__(self, report, name):
        self.report, self.name = report, name

    def __enter__(self):
        self.report.lines.append(f"[{self.name}]")
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.report.timings[self.name] = time.perf_counter() - self.t0
        return False


def _fmt(v):
    if isinstance(v, float):
        return f"{v + 0.0:.10g}"  # no negative zero
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    try:
        import numpy as np

        if isinstance(v, np.ndarray):
            return _fmt([float(x) for x in v.ravel()])
        if isinstance(v, np.floating):
            return _fmt(float(v))
    except ImportError:  # pragma: no cover
        pass
    return str(v)


# --------------------------------------------------------------------------
# problem files


def _check_number(name, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"field {name!r}: expected a number, got {v!r}")
    return float(v)


def parse_problem(path):
    """Read and validate a TOML problem file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read file ({exc.strerror})") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ValidationError(f"{path}: unknown field(s) {unknown}")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError(f"{path}: field 'schema_version' must be {SCHEMA_VERSION}, got {version!r}")
    for key in ("vertices", "edge_weights"):
        if key not in data:
            raise ValidationError(f"{path}: missing field {key!r}")
    verts = data["vertices"]
    if not isinstance(verts, list) or not all(isinstance(p, list) and len(p) == 2 for p in verts):
        raise ValidationError(f"{path}: field 'vertices' must be a list of [x1, x2] pairs")
    verts = [[_check_number("vertices", c) for c in p] for p in verts]
    weights = data["edge_weights"]
    if not isinstance(weights, list):
        raise ValidationError(f"{path}: field 'edge_weights' must be a list")
    weights = [_check_number("edge_weights", w) for w in weights]
    if len(weights) != len(verts):
        raise ValidationError(
            f"{path}: field 'edge_weights' has {len(weights)} entries for {len(verts)} edges")
    A = data.get("A", "auto")
    if A != "auto":
        A = _check_number("A", A)
    sections = {}
    for name, schema in _SECTION_KEYS.items():
        sec = data.get(name, {})
        if not isinstance(sec, dict):
            raise ValidationError(f"{path}: [{name}] must be a table")
        bad = sorted(set(sec) - set(schema))
        if bad:
            raise ValidationError(f"{path}: unknown field(s) {bad} in [{name}]")
        for key, typ in schema.items():
            if key in sec:
                v = sec[key]
                ok = isinstance(v, typ) and not isinstance(v, bool)
                if typ is float:
                    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
                if not ok:
                    raise ValidationError(f"{path}: field '{name}.{key}' must be {typ.__name__}")
        sections[name] = dict(sec)
    digest = hashlib.sha256(raw).hexdigest()
    prob = ProblemFile(path, digest, verts, weights, A, **sections)
    prob.polytope()
    return prob


# --------------------------------------------------------------------------
# commands


def _out_dir(args):
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_stability(args, report):
    from .stability import ScanConfig, futaki_residual, scan_positivity

    prob = parse_problem(args.problem)
    P = prob.polytope()
    cfg = ScanConfig(**prob.scan)
    if args.scan_angles:
        cfg.n_angles = args.scan_angles
    if args.scan_offsets:
        cfg.n_offsets = args.scan_offsets
    with report.stage("stability"):
        report.add("A", P.A)
        report.add("futaki_residual", futaki_residual(P))
        rep = scan_positivity(P, cfg)
        report.add("status", rep.status)
        report.add("min_L", rep.min_L)
        if rep.argmin_lambda is not None:
            lam = rep.argmin_lambda.lam
            report.add("argmin_lambda(a1, a2, b)", [lam.a1, lam.a2, lam.b])
        report.add("C_estimate", rep.C_estimate)
        for note in rep.notes:
            report.add("note", note)
    out = _out_dir(args)
    if out is not None and rep.grid_values is not None:
        rep.write_grid_csv(out / "stability_grid.csv")
    if rep.status == "destabilized":
        return EXIT_DESTABILIZED
    if rep.status != "stable":
        return EXIT_ERROR
    return EXIT_OK


def _solver_config(prob, args):
    from .solver import SolverConfig

    kw = dict(prob.solver)
    if args.grid:
        kw["N"] = args.grid
    if args.gtol:
        kw["gtol"] = args.gtol
    if args.max_iters is not None:
        kw["max_iters"] = args.max_iters
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _solve(prob, args, report):
    import csv

    from .potential import write_potential_csv
    from .solver import minimize_M, residual_report

    P = prob.polytope()
    cfg = _solver_config(prob, args)
    with report.stage("solve"):
        res = minimize_M(P, cfg)
        summ = residual_report(res)
        report.add("N", cfg.N)
        report.add("status", res.status)
        report.add("iterations", res.iterations)
        report.add("M", summ.M)
        report.add("max_residual", summ.max_residual)
        report.add("L_of_u", summ.L_of_u)
        report.add("identity_slack", summ.identity_slack)
        report.add("max_V", summ.max_V)
        for note in res.notes + summ.notes:
            report.add("note", note)
    out = _out_dir(args)
    if out is not None:
        write_potential_csv(res.potential, out / "potential.csv")
        with open(out / "M_history.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "M"])
            for i, m in enumerate(res.M_history):
                w.writerow([i, f"{m:.15g}"])
    return res


def cmd_solve(args, report):
    prob = parse_problem(args.problem)
    res = _solve(prob, args, report)
    return EXIT_OK if res.status == "converged" else EXIT_NOT_CONVERGED


def cmd_diagnose(args, report):
    import csv

    import numpy as np

    from . import diagnostics as dg
    from .geometry import Polygon

    prob = parse_problem(args.problem)
    res = _solve(prob, args, report)
    fld = res.potential
    P = prob.polytope()
    cfg = prob.diagnostics
    out = _out_dir(args)
    with report.stage("diagnostics"):
        V, p, q = dg.m_condition_scan(fld)
        report.add("m_condition_V_max", V)
        for x1, x2, edge in cfg.get("edge_probes", []):
            probe = dg.edge_probe(P, [x1, x2], int(edge))
            report.add(f"D[{_fmt([float(x1), float(x2)])} edge {int(edge)}]", dg.D_of_p(fld, probe))
        diam = P.polygon.diameter
        ts = np.asarray(cfg.get("vertex_ts", [0.025 * diam, 0.05 * diam, 0.1 * diam]), float)
        radius = float(cfg.get("volume_radius", 0.1 * diam))
        rows = []
        for k in range(P.n_edges):
            probe = dg.vertex_probe(P, k, ts)
            prof = dg.vertex_profile(fld, probe)
            hi, lo = dg.volume_bound_B(fld, probe, radius)
            report.add(f"vertex {k} E", prof.E)
            report.add(f"vertex {k} volume_ratio_sup_inf", [hi, lo])
            rows += [[k, t, e, d] for t, e, d in zip(ts, prof.E, prof.Delta)]
        for path in cfg.get("paths", []):
            report.add(f"length{_fmt(path)}", dg.riemannian_length(fld, path))
        if "envelope_X" in cfg:
            env = dg.convex_envelope_check8(fld, Polygon(cfg["envelope_X"]))
            report.add("envelope_lhs", env.lhs)
            report.add("envelope_rhs", env.rhs)
            report.add("envelope_slack", env.slack)
    if out is not None:
        with open(out / "vertex_profile.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", "t", "E", "Delta"])
            for k, t, e, d in rows:
                w.writerow([k, f"{t:.12g}", f"{e:.12g}", f"{d:.12g}"])
    return EXIT_OK if res.status == "converged" else EXIT_NOT_CONVERGED


def cmd_joyce(args, report):
    import csv

    import numpy as np

    from .analytic import (JoyceField, JoyceParams, joyce_inverse, joyce_map, taub_nut_identity,
                           taub_nut_identity_printed)
    from .potential import abreu_at

    try:
        params = JoyceParams(args.a1, args.a2)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    t = np.linspace(args.lo, args.hi, args.n)
    X = np.stack(np.meshgrid(t, t, indexing="ij"), -1).reshape(-1, 2)
    with report.stage("joyce"):
        report.add("params", [params.a1, params.a2])
        report.add("patch", [args.lo, args.hi, args.n])
        res = abreu_at(JoyceField(params), X, args.h, order=args.order)
        worst = float(np.max(np.abs(res)))
        report.add(f"max_abreu_residual(h={args.h:g}, order={args.order})", worst)
        y1, y2 = joyce_inverse(params, X[:, 0], X[:, 1])
        x1, x2 = joyce_map(params, y1, y2)
        rt = float(np.max(np.abs(np.c_[x1, x2] - X)))
        report.add("round_trip_error", rt)
        ok = worst < args.tol and rt < 1e-10
        if params.a1 == params.a2:
            tn = float(np.max(np.abs(taub_nut_identity(params, X))))
            tp = float(np.max(np.abs(taub_nut_identity_printed(params, X))))
            report.add("taub_nut_identity(2 log(r/2) + 2)", tn)
            report.add("taub_nut_identity(log r + 2)", tp)
            ok = ok and tn < 1e-9
        report.add("verdict", "pass" if ok else "fail")
    out = _out_dir(args)
    if out is not None:
        with open(out / "joyce_residual.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "abreu_residual"])
            for (a, b), r in zip(X, res):
                w.writerow([f"{a:.12g}", f"{b:.12g}", f"{r:.6e}"])
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_oracle_1d(args, report):
    import csv

    import numpy as np

    from .analytic import one_d_family

    x = np.linspace(-0.95, 0.95, 39)
    rows = []
    ok = True
    prev = -np.inf
    with report.stage("oracle-1d"):
        for eps in args.eps:
            minus, n = one_d_family(eps, "at_minus_half")
            plus, _ = one_d_family(eps, "at_plus_half")
            gap = minus.dU(x) - plus.dU(x)
            closed = minus.n_eps_closed_form()
            spread = float(np.std(gap)) / abs(n)
            rel = abs(n - closed) / closed
            report.add(f"eps={eps:g} n_eps", n)
            report.add(f"eps={eps:g} closed_form", closed)
            report.add(f"eps={eps:g} relative_spread", spread)
            ok = ok and spread < 1e-9 and rel < 1e-6 and n > prev
            prev = n
            rows.append((eps, n, closed, spread))
        report.add("monotone_and_matching", "yes" if ok else "no")
    out = _out_dir(args)
    if out is not None:
        with open(out / "n_eps.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "n_eps", "closed_form", "relative_spread"])
            for r in rows:
                w.writerow([f"{v:.12g}" for v in r])
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


# --------------------------------------------------------------------------
# argument parsing


def build_parser():
    ap = argparse.ArgumentParser(prog="abreukit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, problem=True):
        if problem:
            p.add_argument("problem", help="TOML problem file")
        p.add_argument("--out", metavar="DIR", help="directory for CSV artifacts")
        p.add_argument("--threads", type=int, metavar="K", help="cap on BLAS/OpenMP threads")

    def solver_flags(p):
        p.add_argument("--grid", type=int, metavar="N", help="grid size (spacing 1/N)")
        p.add_argument("--gtol", type=float, help="gradient tolerance in residual units")
        p.add_argument("--max-iters", type=int, dest="max_iters")

    p = sub.add_parser("stability", help="hinge positivity scan")
    common(p)
    p.add_argument("--scan-angles", type=int, dest="scan_angles")
    p.add_argument("--scan-offsets", type=int, dest="scan_offsets")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("solve", help="minimise M on a grid")
    common(p)
    solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("diagnose", help="solve, then run the edge and vertex probes")
    common(p)
    solver_flags(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("joyce-verify", help="check the zero scalar curvature family")
    common(p, problem=False)
    p.add_argument("--a1", type=float, required=True)
    p.add_argument("--a2", type=float, required=True)
    p.add_argument("--n", type=int, default=50, help="patch points per axis")
    p.add_argument("--lo", type=float, default=0.5)
    p.add_argument("--hi", type=float, default=5.0)
    p.add_argument("--h", type=float, default=1e-3, help="finite-difference step")
    p.add_argument("--order", type=int, default=4, choices=(2, 4))
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_joyce)

    p = sub.add_parser("oracle-1d", help="slope gap of the one-dimensional family")
    common(p, problem=False)
    p.add_argument("--eps", type=float, nargs="+", default=[0.1, 0.03, 0.01, 0.003])
    p.set_defaults(func=cmd_oracle_1d)
    return ap


def _echo(argv):
    """Command line without the thread cap, which does not change results."""
    words, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--threads":
            skip = True
        elif not a.startswith("--threads="):
            words.append(a)
    return " ".join(["abreukit"] + words)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_ERROR
        # effective when set before the numerical libraries load
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    problem = getattr(args, "problem", None)
    digest = "-"
    if problem is not None:
        try:
            digest = hashlib.sha256(Path(problem).read_bytes()).hexdigest()
        except OSError:
            pass
    report = RunReport(_echo(argv if argv is not None else sys.argv[1:]), digest)
    try:
        code = args.func(args, report)
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except AbreuKitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report.exit_code = code
    body = report.body()
    sys.stdout.write(body)
    if getattr(args, "out", None):
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "report.txt").write_text(body)
    for name, secs in report.timings.items():
        print(f"# {name}: {secs:.3f} s", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
