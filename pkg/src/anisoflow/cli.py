"""Command-line front end.

Every command writes its outputs plus a ``manifest.json`` (sorted keys) into
``--out``. Exit codes: 0 success, 2 usage error, 3 numerical failure.
Errors are reported on stderr as a single JSON line.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as aio
from .grid import GridError, TensorField, a2tv_energy
from .shapes import CShape, Disk, Ellipse, NeuronPair, ShapeError, ShapeSpec, calibrate_cshape, rasterize
from .solvers import FlowParams, RofProblem, SolverParams, a2tv_flow, solve_rof
from .tensors import StructureTensorParams, WeickertParams, build_set_tensor, build_weickert_tensor

log = logging.getLogger("anisoflow")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- helpers -----------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects outputs and diagnostics, then writes the manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func_", "config")}
        self.inputs = {}
        self.outputs = []
        self.diagnostics = {}
        self.t0 = time.perf_counter()

    def add_input(self, key, path):
        if path:
            self.inputs[key] = {"path": str(path), "sha256": sha256_file(path)}

    def path(self, name) -> Path:
        self.outputs.append(name)
        return self.out / name

    def write_agrd(self, name, obj):
        aio.write_agrd(self.path(name), obj)

    def write_preview(self, name, u, lo=None, hi=None):
        scaling = aio.write_image(self.path(name), u, lo, hi)
        self.diagnostics.setdefault("preview_scaling", {})[name] = scaling

    def write_csv(self, name, header, rows):
        p = self.path(name)
        tmp = p.with_name(p.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(x) for x in row])
        os.replace(tmp, p)

    def write_json(self, name, obj):
        p = self.path(name)
        _write_json(p, obj)

    def finish(self):
        manifest = {
            "command": self.command,
            "parameters": _jsonable(self.params),
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "diagnostics": _jsonable(self.diagnostics),
            "version": __version__,
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
        }
        _write_json(self.out / "manifest.json", manifest)
        return manifest


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _write_json(path, obj):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def _read_grid(path) -> np.ndarray:
    try:
        return aio.read_image(path)
    except FileNotFoundError:
        raise UsageError(f"input not found: {path}")
    except (aio.FormatError, OSError) as exc:
        raise UsageError(f"cannot read {path}: {exc}")


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalFailure("non-finite values in result")


def _solver_params(args) -> SolverParams:
    try:
        return SolverParams(tau=args.tau, max_iters=args.max_iters, tol=args.tol,
                            paper_literal_grad=args.paper_literal_grad)
    except ValueError as exc:
        raise UsageError(str(exc))


def _tensor_from_args(args, u, run: Run) -> TensorField:
    if getattr(args, "tensor", None):
        run.add_input("tensor", args.tensor)
        A = aio.read_agrd(args.tensor)
        if not isinstance(A, TensorField):
            raise UsageError(f"{args.tensor} is not a tensor AGRD file")
        if A.shape != u.shape:
            raise UsageError(f"tensor shape {A.shape} does not match image {u.shape}")
        return A
    mode = getattr(args, "mode", "identity")
    if mode == "identity":
        return TensorField.identity(u.shape)
    if mode == "weickert":
        return build_weickert_tensor(u, StructureTensorParams(args.sigma, args.rho), WeickertParams(k=args.k))
    if mode == "set":
        return build_set_tensor(u > 0.5 * (u.max() + u.min()), args.a)
    raise UsageError(f"unknown tensor mode {mode}")


def _require_convergence(args, converged: bool, what: str):
    if getattr(args, "require_convergence", False) and not converged:
        raise NumericalFailure(f"{what} did not converge within the iteration cap")


# --- commands ---------------------------------------------------------------------------

def _shape_variant(args):
    kind = args.kind
    if kind == "disk":
        return Disk(args.R)
    if kind == "ellipse":
        return Ellipse(args.Ra, args.Rb)
    if kind == "cshape":
        if args.opening is not None:
            return CShape(args.R, args.r, math.radians(args.opening))
        return calibrate_cshape(args.hull_ratio, args.R, args.r, tuple(args.size))
    if kind == "neuron":
        return NeuronPair()
    raise UsageError(f"unknown shape kind {kind}")


def cmd_shapes(args) -> Run:
    run = Run("shapes", args)
    spec = ShapeSpec(_shape_variant(args), shape=tuple(args.size), angle=math.radians(args.angle),
                     h=args.h, zero_mean=args.zero_mean)
    shape = rasterize(spec)
    run.write_agrd("indicator.agrd", shape.indicator)
    run.write_preview("indicator.pgm", shape.indicator)
    geometry = {
        "area": shape.area,
        "perimeter": shape.perimeter,
        "hull_perimeter": shape.hull_perimeter,
        "convexity_measure": shape.hull_perimeter / shape.perimeter,
        "kappa_max": shape.kappa_max,
        "c0": shape.c0,
        "variant": type(spec.variant).__name__,
        "variant_params": vars(spec.variant) if hasattr(spec.variant, "__dict__") else {},
    }
    run.write_json("geometry.json", geometry)
    run.diagnostics["geometry"] = geometry
    return run


def cmd_tensor(args) -> Run:
    run = Run("tensor", args)
    u = _read_grid(args.image)
    run.add_input("image", args.image)
    if args.mode == "identity":
        raise UsageError("tensor command needs --mode weickert or set")
    A = _tensor_from_args(args, u, run)
    run.write_agrd("tensor.agrd", A)
    minor = A.eigenvalues()[1]
    run.write_agrd("minor_eigenvalue.agrd", minor)
    run.write_preview("minor_eigenvalue.pgm", minor, 0.0, 1.0)
    run.diagnostics["minor_eigenvalue_range"] = [float(minor.min()), float(minor.max())]
    return run


def cmd_rof(args) -> Run:
    run = Run("rof", args)
    f = _read_grid(args.image)
    run.add_input("image", args.image)
    A = _tensor_from_args(args, f, run)
    sol = solve_rof(RofProblem(f, A, args.fid), _solver_params(args), args.solver)
    _check_finite(sol.u)
    run.write_agrd("u.agrd", sol.u)
    run.write_agrd("xi.agrd", sol.xi)
    run.write_preview("u.pgm", sol.u)
    run.write_csv("energy.csv", ["iteration", "energy", "residual"],
                  [(i, float(e), float(r)) for i, (e, r) in enumerate(zip(sol.energy_trace, sol.residual_trace))])
    run.diagnostics.update(iterations=sol.iterations, final_residual=sol.final_residual, converged=sol.converged)
    _require_convergence(args, sol.converged, "ROF solver")
    return run


def _run_flow(args, run: Run):
    f = _read_grid(args.image)
    run.add_input("image", args.image)
    A = _tensor_from_args(args, f, run)
    try:
        params = FlowParams(args.dt, args.steps, _solver_params(args), args.solver)
    except ValueError as exc:
        raise UsageError(str(exc))
    traj = a2tv_flow(f, A, params)
    _check_finite(*traj.snapshots)
    run.diagnostics.update(iterations=traj.iterations, final_residuals=traj.residuals)
    return traj, A


def cmd_flow(args) -> Run:
    run = Run("flow", args)
    traj, A = _run_flow(args, run)
    energies = [a2tv_energy(u, A) for u in traj.snapshots]
    for k, u in enumerate(traj.snapshots):
        run.write_agrd(f"u_{k:04d}.agrd", u)
    run.write_csv("energy.csv", ["t", "energy"], [(float(t), e) for t, e in zip(traj.times, energies)])
    run.diagnostics["energy"] = energies
    return run


def _write_decomposition(run: Run, dec):
    from .spectral import spectrum

    for k, band in enumerate(dec.bands):
        run.write_agrd(f"band_{k:04d}.agrd", band)
    run.write_agrd("residual.agrd", dec.residual)
    run.write_json("decomposition.json", {"times": dec.times, "dt": dec.dt, "source_mean": dec.source_mean,
                                          "n_bands": int(len(dec.bands))})
    s = spectrum(dec)
    run.write_csv("spectrum.csv", ["t", "S"], [(float(t), float(v)) for t, v in zip(s.times, s.values)])


def _load_decomposition(path):
    from .spectral import SpectralDecomposition

    d = Path(path)
    try:
        meta = json.loads((d / "decomposition.json").read_text())
    except FileNotFoundError:
        raise UsageError(f"no decomposition found in {d}")
    bands = np.stack([aio.read_agrd(d / f"band_{k:04d}.agrd") for k in range(meta["n_bands"])])
    return SpectralDecomposition(np.asarray(meta["times"]), bands, aio.read_agrd(d / "residual.agrd"),
                                 float(meta["dt"]), float(meta["source_mean"]))


def cmd_spectral(args) -> Run:
    from .spectral import SpectralFilter, apply_filter, decompose, spectrum

    run = Run(f"spectral {args.action}", args)
    if args.action == "decompose":
        if not args.image:
            raise UsageError("spectral decompose needs --image")
        traj, _ = _run_flow(args, run)
        dec = decompose(traj)
        _write_decomposition(run, dec)
        return run
    if not args.decomposition:
        raise UsageError(f"spectral {args.action} needs --decomposition DIR")
    dec = _load_decomposition(args.decomposition)
    if args.action == "spectrum":
        s = spectrum(dec)
        run.write_csv("spectrum.csv", ["t", "S"], [(float(t), float(v)) for t, v in zip(s.times, s.values)])
        return run
    # filter
    try:
        if args.band:
            t1, t2 = (float(x) for x in args.band.split(","))
            H = SpectralFilter("BPF", t1=t1, t2=t2)
        elif args.lpf is not None:
            H = SpectralFilter("LPF", tc=args.lpf)
        elif args.hpf is not None:
            H = SpectralFilter("HPF", tc=args.hpf)
        else:
            raise UsageError("spectral filter needs --band, --lpf or --hpf")
    except ValueError as exc:
        raise UsageError(f"bad filter specification: {exc}")
    out = apply_filter(dec, H, True if args.with_residual else None)
    run.write_agrd("filtered.agrd", out)
    run.write_preview("filtered.pgm", out)
    return run


def cmd_eigen(args) -> Run:
    from .eigen import EigenError, conjecture_sweep, eigen_report

    run = Run(f"eigen {args.action}", args)
    if args.action == "test":
        spec = ShapeSpec(_shape_variant(args), shape=tuple(args.size), zero_mean=args.zero_mean)
        report = eigen_report(rasterize(spec), args.a)
        run.write_json("report.json", report.to_dict())
        run.diagnostics["report"] = report.to_dict()
        return run
    ratios = [float(x) for x in args.ratios.split(",")]
    a_values = [float(x) for x in args.a_values.split(",")]
    try:
        sweep = conjecture_sweep(ratios, a_values, args.Ra, args.score_bar, tuple(args.size), args.steps)
    except EigenError as exc:
        raise UsageError(str(exc))
    run.write_json("sweep.json", sweep.to_dict())
    run.write_csv("heatmap.csv", ["ratio"] + [f"a={a:g}" for a in a_values],
                  [[r] + [float(x) for x in row] for r, row in zip(ratios, sweep.scores)])
    return run


def cmd_inpaint(args) -> Run:
    from .applications import InpaintProblem, inpaint

    run = Run("inpaint", args)
    depth = _read_grid(args.depth)
    mask = _read_grid(args.mask) > 0
    guide = _read_grid(args.guide)
    for key in ("depth", "mask", "guide"):
        run.add_input(key, getattr(args, key))
    prob = InpaintProblem(depth, mask, guide, mu=args.mu, theta=args.theta, tau=args.tau,
                          outer_iters=args.outer_iters, inner_proj=args.inner_proj, k=args.k,
                          structure=StructureTensorParams(args.sigma, args.rho))
    res = inpaint(prob)
    _check_finite(res.u)
    run.write_agrd("inpainted.agrd", res.u)
    run.write_preview("inpainted.pgm", res.u)
    run.diagnostics["range_excursion"] = res.range_excursion
    return run


def cmd_fuse(args) -> Run:
    from .applications import FusionProblem, fuse

    run = Run("fuse", args)
    f = _read_grid(args.func)
    guide = _read_grid(args.guide)
    run.add_input("func", args.func)
    run.add_input("guide", args.guide)
    prob = FusionProblem(f, guide, mu=args.mu, k=args.k, structure=StructureTensorParams(args.sigma, args.rho),
                         solver=_solver_params(args))
    res = fuse(prob)
    _check_finite(res.u)
    run.write_agrd("fused.agrd", res.u)
    run.write_preview("fused.pgm", res.u)
    run.diagnostics.update(iterations=res.solution.iterations, energy_in=res.energy_in, energy_out=res.energy_out)
    _require_convergence(args, res.solution.converged, "fusion solver")
    return run


# --- parser ----------------------------------------------------------------------------------

def _add_solver(p, max_iters=3000, tol=1e-6):
    p.add_argument("--tau", type=float, default=1.0 / 8.0)
    p.add_argument("--max-iters", type=int, default=max_iters)
    p.add_argument("--tol", type=float, default=tol)
    p.add_argument("--solver", choices=["chambolle", "chambolle_pock"], default="chambolle")
    p.add_argument("--paper-literal-grad", action="store_true",
                   help="use the plain gradient inside the projection update")
    p.add_argument("--require-convergence", action="store_true", help="exit 3 if the solver hits its cap")


def _add_tensor(p):
    p.add_argument("--tensor", help="tensor field (AGRD kind 2); overrides --mode")
    p.add_argument("--mode", choices=["identity", "weickert", "set"], default="identity")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=4.0)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--a", type=float, default=0.5)


def _add_shape(p):
    p.add_argument("--kind", choices=["disk", "ellipse", "cshape", "neuron"], default="disk")
    p.add_argument("--R", type=float, default=40.0)
    p.add_argument("--r", type=float, default=30.0)
    p.add_argument("--Ra", type=float, default=100.0)
    p.add_argument("--Rb", type=float, default=20.0)
    p.add_argument("--opening", type=float, help="C-shape gap in degrees (default: calibrated)")
    p.add_argument("--hull-ratio", type=float, default=0.769)
    p.add_argument("--size", type=int, nargs=2, default=[256, 256], metavar=("H", "W"))
    p.add_argument("--zero-mean", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="anisoflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON file of default option values (flags win)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("shapes", help="generate a synthetic shape")
    p.add_argument("action", choices=["gen"])
    _add_shape(p)
    p.add_argument("--angle", type=float, default=0.0, help="rotation in degrees")
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func_=cmd_shapes)

    p = sub.add_parser("tensor", help="build an anisotropy tensor from an image")
    p.add_argument("--image", required=True)
    _add_tensor(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func_=cmd_tensor)

    for name, fn, helptext in (("flow", cmd_flow, "run the A2TV gradient flow"),
                               ("rof", cmd_rof, "solve the ROF-A2TV problem")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--image", required=True)
        _add_tensor(p)
        _add_solver(p)
        if name == "flow":
            p.add_argument("--dt", type=float, default=1.0)
            p.add_argument("--steps", type=int, default=10)
        else:
            p.add_argument("--fid", type=float, default=1.0, help="fidelity weight")
        p.add_argument("--out", required=True)
        p.set_defaults(func_=fn)

    p = sub.add_parser("spectral", help="spectral decomposition and filtering")
    p.add_argument("action", choices=["decompose", "filter", "spectrum"])
    p.add_argument("--image")
    p.add_argument("--decomposition", help="directory written by 'spectral decompose'")
    _add_tensor(p)
    _add_solver(p)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--band", help="t1,t2 band-pass limits")
    p.add_argument("--lpf", type=float)
    p.add_argument("--hpf", type=float)
    p.add_argument("--with-residual", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func_=cmd_spectral)

    p = sub.add_parser("eigen", help="eigenfunction test or curvature sweep")
    p.add_argument("action", choices=["test", "sweep"])
    _add_shape(p)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--ratios", default="0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--a-values", default="0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--score-bar", type=float, default=0.0017)
    p.add_argument("--steps", type=int, default=4, help="flow steps to reach t = 1/(10 lambda)")
    p.add_argument("--out", required=True)
    p.set_defaults(func_=cmd_eigen)

    p = sub.add_parser("inpaint", help="guided depth inpainting")
    p.add_argument("--depth", required=True)
    p.add_argument("--mask", required=True, help="known-pixel mask (nonzero = known)")
    p.add_argument("--guide", required=True)
    p.add_argument("--mu", type=float, default=80.0)
    p.add_argument("--theta", type=float, default=5.0)
    p.add_argument("--tau", type=float, default=1.0 / 8.0)
    p.add_argument("--outer-iters", type=int, default=6000)
    p.add_argument("--inner-proj", type=int, default=5)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func_=cmd_inpaint)

    p = sub.add_parser("fuse", help="guided functional/structural fusion")
    p.add_argument("--func", required=True)
    p.add_argument("--guide", required=True)
    p.add_argument("--mu", type=float, default=5.0 / 3.0)
    p.add_argument("--k", type=float, default=0.1)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=4.0)
    _add_solver(p, max_iters=5000)
    p.add_argument("--out", required=True)
    p.set_defaults(func_=cmd_fuse)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        # re-parse with config values as defaults so explicit flags win
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _error(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": message}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except UsageError as exc:
        return _error(EXIT_USAGE, "usage", str(exc))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        run = args.func_(args)
        run.finish()
    except UsageError as exc:
        return _error(EXIT_USAGE, "usage", str(exc))
    except (GridError, ShapeError, aio.FormatError, ValueError) as exc:
        return _error(EXIT_USAGE, "invalid-input", str(exc))
    except NumericalFailure as exc:
        return _error(EXIT_NUMERIC, "numerical", str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
