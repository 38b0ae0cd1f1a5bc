"""Command line entry point: ``hankelrec gen|recover|phase|timing|noise|nd-demo``.

``recover`` exits with 0 on convergence, 2 when the iteration budget runs
out, 3 on divergence and 1 on malformed input or arguments.  The experiment
commands read an optional JSON config (fields of ``ExperimentSpec``); flags
given on the command line override it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .errors import DivergenceError, HankelRecError
from .hankel import DENSE_MAX_CELLS, make_shape
from .harness import ExperimentSpec, run_experiment, table_rows
from .lowrank import dense_hard_threshold, project_tangent_dense, retract_rank_r, tangent_coeffs
from .ndhankel import make_nd_shape, nd_fiht_solve
from .solvers import ONE_STEP, RESAMPLED, SolverConfig, fiht_solve, iht_solve
from .spectral import (
    SampleSet,
    SignalGenConfig,
    SpectralSignal,
    generate_signal,
    incoherence_estimate,
    sample_indices,
)

EXIT_OK, EXIT_INPUT, EXIT_MAX_ITERS, EXIT_DIVERGED = 0, 1, 2, 3
INIT_NAMES = {"onestep": ONE_STEP, "resampled": RESAMPLED}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # exit status 2 is reserved for "max iterations reached"
    def error(self, message):
        raise UsageError(message)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _solver_flags(p):
    p.add_argument("--tol-res", type=float, help="relative observed-residual tolerance (0 disables)")
    p.add_argument("--tol-step", type=float, help="relative step tolerance (0 disables)")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--init", choices=sorted(INIT_NAMES))
    p.add_argument("--mu", type=float, help="incoherence cap for the resampled initialization")
    p.add_argument("--stepsize", type=float, help="gradient step (default n/m)")


def _grid_flags(p):
    p.add_argument("--config", help="JSON experiment spec; flags override its fields")
    p.add_argument("--n", type=_positive_int, nargs="+")
    p.add_argument("--rank", type=_positive_int, nargs="+")
    p.add_argument("--m", type=_positive_int, nargs="+")
    p.add_argument("--p", type=float, nargs="+")
    p.add_argument("--algo", choices=["iht", "fiht"], nargs="+")
    p.add_argument("--min-sep", type=float,
                   help="minimum wrap-around frequency distance in units of 1/n (negative: none)")
    p.add_argument("--trials", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=_positive_int)
    p.add_argument("--out", help="output directory for CSV and per-trial JSON")
    p.add_argument("--no-timing", action="store_true",
                   help="do not record wall times (byte-reproducible CSV)")
    p.add_argument("--check", action="store_true", help="cross-check fast operators against dense oracles")
    _solver_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hankelrec", description="Spectrally sparse signal reconstruction.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a random signal and a sample set")
    g.add_argument("--n", type=_positive_int, required=True)
    g.add_argument("--rank", type=int, required=True)
    g.add_argument("--m", type=_positive_int)
    g.add_argument("--p", type=float)
    g.add_argument("--min-sep", type=float, default=0.0, help="in units of 1/n")
    g.add_argument("--damping", type=float, nargs=2, default=(0.0, 0.0), metavar=("LO", "HI"))
    g.add_argument("--sampling", choices=["with", "without"], default="without")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    r = sub.add_parser("recover", help="reconstruct a signal from an observation file")
    r.add_argument("--input", required=True, help="observation JSON written by 'gen'")
    r.add_argument("--truth", help="signal JSON; enables the true-error trace")
    r.add_argument("--rank", type=int, required=True)
    r.add_argument("--algo", choices=["iht", "fiht"], default="fiht")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", help="directory for result.json and recovered.json")
    r.add_argument("--check", action="store_true")
    _solver_flags(r)

    for name, help_text in (("phase", "phase-transition grid"), ("timing", "IHT vs FIHT timing table"),
                            ("noise", "noise robustness sweep"), ("nd-demo", "3-D recovery demo")):
        p = sub.add_parser(name, help=help_text)
        _grid_flags(p)
        if name == "noise":
            p.add_argument("--sigma-list", type=float, nargs="+")
        if name == "nd-demo":
            p.add_argument("--dims", type=_positive_int, nargs="+")
            p.add_argument("--fraction", type=float, help="sampling fraction")
            p.add_argument("--damping", type=float, nargs=2, metavar=("LO", "HI"))
    return parser


# -- observation files -------------------------------------------------------------


def observation_json(x, omega: SampleSet, dims=None) -> dict:
    obj = omega.to_json()
    obj["values"] = [[float(v.real), float(v.imag)] for v in x[omega.indices]]
    if dims is not None:
        obj["dims"] = list(dims)
    return obj


def load_observation(path):
    """Return ``(observed, omega, dims)``; raises ValueError on malformed content."""
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from None
    try:
        omega = SampleSet.from_json(obj)
        values = np.array([complex(a, b) for a, b in obj["values"]], dtype=np.complex128)
    except KeyError as exc:
        raise ValueError(f"{path}: missing field {exc}") from None
    if values.size != omega.m:
        raise ValueError(f"{path}: {omega.m} indices but {values.size} values")
    observed = np.zeros(omega.n, dtype=np.complex128)
    observed[omega.indices] = values
    dims = tuple(obj["dims"]) if "dims" in obj else None
    if dims is not None and int(np.prod(dims)) != omega.n:
        raise ValueError(f"{path}: dims {dims} do not match n={omega.n}")
    return observed, omega, dims


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh)


# -- oracle checks -----------------------------------------------------------------


def oracle_check(shape, r: int = 3, seed: int = 0) -> float:
    """Largest relative gap between fast products / retraction and dense references."""
    if shape.n1 * shape.n2 > DENSE_MAX_CELLS:
        raise ValueError("problem too large for dense cross-checks")
    rng = np.random.default_rng(seed)

    def cplx(*s):
        return rng.standard_normal(s) + 1j * rng.standard_normal(s)

    z, v, u = cplx(shape.n), cplx(shape.n2), cplx(shape.n1)
    H = shape.dense(z)

    def rel(a, b):
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))

    gaps = [rel(shape.matvec(z, v), H @ v), rel(shape.rmatvec(z, u), H.conj().T @ u),
            rel(shape.adjoint_outer(u, v), shape.adjoint_dense(np.outer(u, v.conj())))]
    r = min(r, shape.n1, shape.n2)
    U, _ = np.linalg.qr(cplx(shape.n1, r))
    V, _ = np.linalg.qr(cplx(shape.n2, r))
    fast = retract_rank_r(tangent_coeffs(z, (U, V), shape), (U, V), r)
    ref = dense_hard_threshold(project_tangent_dense(H, U, V), r)
    gaps.append(rel(fast.sigma, ref.sigma))
    return max(gaps)


def _run_check(shapes, tol=1e-8) -> bool:
    ok = True
    for shape in shapes:
        try:
            gap = oracle_check(shape)
        except ValueError as exc:
            print(f"check skipped for n={shape.n}: {exc}")
            continue
        good = gap <= tol
        ok &= good
        print(f"check n={shape.n}: max relative gap {gap:.2e} {'ok' if good else 'FAILED'}")
    return ok


# -- commands ----------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.m is None and args.p is None:
        raise UsageError("one of --m or --p is required")
    m = args.m if args.m is not None else int(round(args.p * args.n))
    cfg = SignalGenConfig(args.n, args.rank, min_separation=args.min_sep / args.n,
                          damping_range=tuple(args.damping), seed=args.seed)
    sig = generate_signal(cfg)
    omega = sample_indices(args.n, m, args.sampling, seed=args.seed + 1)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "signal.json"), sig.to_json())
    _write_json(os.path.join(args.out, "observed.json"), observation_json(sig.samples, omega))
    print(f"wrote signal.json and observed.json (n={args.n}, r={args.rank}, m={m}) to {args.out}")
    return EXIT_OK


def _solver_config(args, base: SolverConfig) -> SolverConfig:
    cfg = base
    for flag, fld in (("tol_res", "tol_residual"), ("tol_step", "tol_step"), ("max_iters", "max_iters"),
                      ("mu", "mu"), ("stepsize", "stepsize")):
        val = getattr(args, flag, None)
        if val is not None:
            cfg = replace(cfg, **{fld: val})
    if getattr(args, "init", None) is not None:
        cfg = replace(cfg, init=INIT_NAMES[args.init])
    return cfg


def cmd_recover(args) -> int:
    if args.rank < 1:
        raise UsageError(f"--rank must be >= 1, got {args.rank}")
    observed, omega, dims = load_observation(args.input)
    x_true = None
    truth = None
    if args.truth:
        with open(args.truth) as fh:
            truth = SpectralSignal.from_json(json.load(fh))
        if truth.n != omega.n:
            raise ValueError(f"truth has n={truth.n}, observations have n={omega.n}")
        x_true = truth.samples
    nd = dims is not None and len(dims) > 1
    shape = make_nd_shape(dims) if nd else make_shape(omega.n)
    if args.rank > min(shape.n1, shape.n2):
        raise UsageError(f"--rank {args.rank} exceeds min(n1, n2) = {min(shape.n1, shape.n2)}")
    cfg = _solver_config(args, SolverConfig(seed=args.seed))
    if cfg.init == RESAMPLED and cfg.mu is None:
        if truth is None:
            raise UsageError("--init resampled needs --mu (or --truth to estimate it)")
        cfg = replace(cfg, mu=incoherence_estimate(truth, shape))
    if args.check and not _run_check([shape]):
        return EXIT_INPUT
    try:
        if nd:
            if args.algo != "fiht":
                raise UsageError("multi-dimensional inputs support --algo fiht only")
            res = nd_fiht_solve(observed, omega, args.rank, shape, cfg, x_true=x_true)
        else:
            solve = fiht_solve if args.algo == "fiht" else iht_solve
            res = solve(observed, omega, args.rank, shape, cfg, x_true=x_true)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"{args.algo}: {res.iterations} iterations, stop reason '{res.reason}', "
          f"final residual {res.trace[-1].residual if res.trace else float('nan'):.3e}")
    if x_true is not None:
        err = np.linalg.norm(res.x_rec - x_true) / np.linalg.norm(x_true)
        print(f"relative error {err:.3e}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "result.json"), res.to_json())
        rec = {"n": omega.n, "samples": [[float(v.real), float(v.imag)] for v in res.x_rec]}
        if nd:
            rec["dims"] = list(dims)
        _write_json(os.path.join(args.out, "recovered.json"), rec)
    return EXIT_OK if res.converged else EXIT_MAX_ITERS


_FLAG_FIELDS = {
    "n": "n_values", "rank": "r_values", "m": "m_values", "p": "p_values", "algo": "algos",
    "trials": "trials", "seed": "seed", "threads": "threads", "out": "out_dir",
    "sigma_list": "sigma_values", "dims": "dims", "fraction": "sample_fraction",
    "damping": "damping_range",
}

_KIND_DEFAULTS = {
    "phase": {},
    "timing": {"n_values": [3999, 7999], "r_values": [15, 30], "m_values": [800, 1200],
               "trials": 10, "algos": ["iht", "fiht"]},
    "noise": {"n_values": [511], "r_values": [6], "m_values": [128, 256], "trials": 10},
    "nd_demo": {"r_values": [5], "damping_range": (0.0, 0.02)},
}


def spec_from_args(kind: str, args) -> ExperimentSpec:
    """Kind defaults, then the config file, then explicit flags."""
    fields = dict(_KIND_DEFAULTS[kind])
    if args.config:
        with open(args.config) as fh:
            conf = json.load(fh)
        if conf.get("kind", kind) != kind:
            raise ValueError(f"config is for kind {conf['kind']!r}, not {kind!r}")
        conf.pop("kind", None)
        fields.update(conf)
    for flag, fld in _FLAG_FIELDS.items():
        val = getattr(args, flag, None)
        if val is not None:
            fields[fld] = val
    if args.m is not None and kind == "phase":
        fields.pop("p_values", None)
    if args.min_sep is not None:
        fields["min_separation"] = None if args.min_sep < 0 else args.min_sep
    if args.no_timing:
        fields["record_time"] = False
    spec = ExperimentSpec.from_json({"kind": kind, **fields})
    spec.solver = _solver_config(args, spec.solver)
    spec.validate()
    return spec


def cmd_experiment(kind: str, args) -> int:
    spec = spec_from_args(kind, args)
    if args.check:
        shapes = [make_nd_shape(spec.dims)] if kind == "nd_demo" else [make_shape(n) for n in spec.n_values]
        if not _run_check(shapes):
            return EXIT_INPUT
    table = run_experiment(spec)
    header, rows = table_rows(table, kind)
    print(",".join(header))
    for row in rows:
        print(",".join("" if v is None else (f"{v:.4g}" if isinstance(v, float) else str(v)) for v in row))
    if spec.out_dir:
        print(f"wrote {kind}.csv and {kind}.json to {spec.out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "recover":
            return cmd_recover(args)
        return cmd_experiment(args.command.replace("-", "_"), args)
    except UsageError as exc:
        print(f"hankelrec: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError, HankelRecError) as exc:
        print(f"hankelrec: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
