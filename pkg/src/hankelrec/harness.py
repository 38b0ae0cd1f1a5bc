"""Experiment runner: phase-transition grids, timing tables, noise sweeps, 3-D demo.

Every experiment is a list of cells; every cell runs ``trials`` independent
trials whose seeds are derived from the base seed and the cell key only, so
the result of a cell does not depend on scheduling or on which other cells
were run.  Tables are written as CSV with a fixed column order:

* phase: ``n,p,r,success_rate,mean_iters,mean_ms``
* timing: ``n,r,m,algo,trials,failures,mean_rel_err,mean_iters,mean_ms``
* noise: ``n,m,sigma,snr_db,mean_rel_err``
* nd_demo: ``dims,r,m,trials,success_rate,mean_rel_err,mean_iters,mean_ms``

With ``record_time=False`` wall times are not stored and the ``mean_ms``
column is left empty, which makes the CSV bytes a pure function of the spec.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import HankelRecError
from .hankel import make_shape
from .ndhankel import generate_nd_signal, make_nd_shape, nd_fiht_solve
from .solvers import SolverConfig, fiht_solve, iht_solve
from .spectral import (
    WITHOUT_REPLACEMENT,
    SignalGenConfig,
    generate_signal,
    sample_indices,
)

KINDS = ("phase", "timing", "noise", "nd_demo", "recover")
PHASE_SUCCESS_TOL = 1e-3
ND_SUCCESS_TOL = 1e-4
PHASE_P_GRID = tuple(float(p) for p in np.round(np.linspace(0.1, 0.95, 18), 10))
NOISE_SIGMAS = tuple(float(s) for s in np.logspace(-4, 0, 9))

PHASE_COLUMNS = ("n", "p", "r", "success_rate", "mean_iters", "mean_ms")
TIMING_COLUMNS = ("n", "r", "m", "algo", "trials", "failures", "mean_rel_err", "mean_iters", "mean_ms")
NOISE_COLUMNS = ("n", "m", "sigma", "snr_db", "mean_rel_err")
ND_COLUMNS = ("dims", "r", "m", "trials", "success_rate", "mean_rel_err", "mean_iters", "mean_ms")

SOLVERS = {"iht": iht_solve, "fiht": fiht_solve}


def _default_solver(kind: str) -> SolverConfig:
    if kind == "phase":
        return SolverConfig(max_iters=500, tol_residual=1e-4, tol_step=0.0)
    # step-size rule only, as in the timing and noise studies
    return SolverConfig(max_iters=500, tol_residual=0.0, tol_step=1e-5)


@dataclass
class ExperimentSpec:
    """Everything needed to rerun an experiment bit for bit.

    ``min_separation`` is given in units of ``1/n`` (1.5 means a wrap-around
    distance of ``1.5/n``); ``None`` draws unconstrained frequencies.  For the
    phase kind, ``m_values`` (if set) replaces the ``p_values`` grid and
    ``r_values`` (if set) replaces the upward rank scan.
    """

    kind: str
    n_values: list[int] = field(default_factory=lambda: [127])
    p_values: list[float] = field(default_factory=lambda: list(PHASE_P_GRID))
    m_values: list[int] | None = None
    r_values: list[int] | None = None
    r_start: int = 1
    sigma_values: list[float] = field(default_factory=lambda: list(NOISE_SIGMAS))
    dims: list[int] = field(default_factory=lambda: [15, 15, 63])
    sample_fraction: float = 0.08
    trials: int = 50
    algos: list[str] = field(default_factory=lambda: ["fiht"])
    min_separation: float | None = 1.5
    damping_range: tuple[float, float] = (0.0, 0.0)
    sampling: str = WITHOUT_REPLACEMENT
    solver: SolverConfig | None = None
    success_threshold: float | None = None
    seed: int = 0
    threads: int = 1
    record_time: bool = True
    out_dir: str | None = None

    def __post_init__(self):
        if self.solver is None:
            self.solver = _default_solver(self.kind)
        if self.success_threshold is None:
            self.success_threshold = ND_SUCCESS_TOL if self.kind == "nd_demo" else PHASE_SUCCESS_TOL
        self.damping_range = tuple(self.damping_range)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.n_values:
            raise ValueError("n grid is empty")
        if self.kind == "phase":
            if self.success_threshold != PHASE_SUCCESS_TOL:
                raise ValueError("phase experiments use the fixed 1e-3 success threshold")
            if not (self.m_values or self.p_values):
                raise ValueError("sampling grid is empty")
            if self.r_values is not None and not self.r_values:
                raise ValueError("rank grid is empty")
        if self.kind == "timing" and not (self.r_values and self.m_values):
            raise ValueError("timing experiments need r_values and m_values")
        if self.kind == "noise" and not (self.sigma_values and self.m_values and self.r_values):
            raise ValueError("noise experiments need sigma_values, m_values and r_values")
        if any(a not in SOLVERS for a in self.algos):
            raise ValueError(f"algorithms must be among {sorted(SOLVERS)}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_json(self) -> dict:
        out = asdict(self)
        out["damping_range"] = list(self.damping_range)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> ExperimentSpec:
        obj = dict(obj)
        if isinstance(obj.get("solver"), dict):
            obj["solver"] = SolverConfig(**obj["solver"])
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown experiment fields: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class TrialOutcome:
    success: bool
    rel_err: float | None
    iterations: int | None
    ms: float | None
    error: str | None = None


@dataclass
class CellRecord:
    """One grid cell: its coordinates, per-trial outcomes and aggregates."""

    coords: dict
    trials: list[TrialOutcome]

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    @property
    def successes(self) -> int:
        return sum(t.success for t in self.trials)

    @property
    def success_rate(self) -> float:
        return self.successes / self.n_trials

    @property
    def failures(self) -> int:
        return sum(t.error is not None for t in self.trials)

    def _mean(self, attr):
        vals = [getattr(t, attr) for t in self.trials]
        vals = [v for v in vals if v is not None and math.isfinite(v)]
        return float(np.mean(vals)) if vals else None

    @property
    def mean_rel_err(self):
        return self._mean("rel_err")

    @property
    def mean_iters(self):
        return self._mean("iterations")

    @property
    def mean_ms(self):
        return self._mean("ms")

    def aggregates(self) -> dict:
        return {"success_rate": self.success_rate, "mean_rel_err": self.mean_rel_err,
                "mean_iters": self.mean_iters, "mean_ms": self.mean_ms}

    def to_json(self) -> dict:
        return {"coords": self.coords, "trials": [asdict(t) for t in self.trials],
                "aggregate": self.aggregates()}

    @classmethod
    def from_json(cls, obj: dict) -> CellRecord:
        rec = cls(dict(obj["coords"]), [TrialOutcome(**t) for t in obj["trials"]])
        stored = obj.get("aggregate")
        if stored is not None:
            fresh = rec.aggregates()
            for key, val in stored.items():
                if not _same(val, fresh[key]):
                    raise ValueError(f"aggregate {key}={val} does not match trial rows ({fresh[key]})")
        return rec


def _same(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return math.isclose(a, b, rel_tol=1e-12, abs_tol=0.0)


# -- seeding ----------------------------------------------------------------------


def cell_seed(base_seed: int, key: Sequence) -> int:
    """Per-cell seed: the base seed XOR a CRC of the cell key."""
    return (int(base_seed) ^ zlib.crc32(repr(tuple(key)).encode())) & 0xFFFFFFFF


def trial_seeds(base_seed: int, key: Sequence, trial: int, count: int = 3) -> list[int]:
    ss = np.random.SeedSequence([cell_seed(base_seed, key), int(trial)])
    return [int(v) for v in ss.generate_state(count)]


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- single trials ----------------------------------------------------------------


def _rel_err(x, x_true) -> float:
    return float(np.linalg.norm(x - x_true) / np.linalg.norm(x_true))


def _observe(signal, omega):
    observed = np.zeros(signal.size, dtype=np.complex128)
    observed[omega.indices] = signal[omega.indices]
    return observed


def _solve(algo, observed, omega, r, shape, cfg, record_time, threshold, x_true):
    t0 = time.perf_counter()
    try:
        res = SOLVERS[algo](observed, omega, r, shape, cfg)
    except HankelRecError as exc:
        return TrialOutcome(False, None, None, None, type(exc).__name__)
    ms = (time.perf_counter() - t0) * 1e3 if record_time else None
    err = _rel_err(res.x_rec, x_true)
    return TrialOutcome(err <= threshold, err, res.iterations, ms)


def _draw_1d(spec: ExperimentSpec, n, r, m, seeds):
    sep = 0.0 if spec.min_separation is None else spec.min_separation / n
    sig = generate_signal(SignalGenConfig(n, r, min_separation=sep,
                                          damping_range=spec.damping_range, seed=seeds[0]))
    omega = sample_indices(n, m, spec.sampling, seed=seeds[1])
    return sig, omega


def phase_trial(spec: ExperimentSpec, n: int, m: int, r: int, algo: str, seeds) -> TrialOutcome:
    try:
        sig, omega = _draw_1d(spec, n, r, m, seeds)
    except HankelRecError as exc:
        return TrialOutcome(False, None, None, None, type(exc).__name__)
    cfg = replace(spec.solver, seed=seeds[2] % 2**31)
    return _solve(algo, _observe(sig.samples, omega), omega, r, make_shape(n), cfg,
                  spec.record_time, spec.success_threshold, sig.samples)


# -- experiments ------------------------------------------------------------------


def _run_cell(spec, key, coords, trial_fn) -> CellRecord:
    tasks = [trial_seeds(spec.seed, key, t) for t in range(spec.trials)]
    return CellRecord(coords, _map(trial_fn, tasks, spec.threads))


def _phase_columns(spec: ExperimentSpec, n: int):
    if spec.m_values:
        return [(int(m), int(m) / n) for m in spec.m_values]
    return [(int(round(p * n)), float(p)) for p in spec.p_values]


def run_phase(spec: ExperimentSpec, trial_fn: Callable | None = None) -> list[CellRecord]:
    """Success rates over (n, p) columns, scanning r upward to the first all-fail row.

    ``trial_fn(spec, n, m, r, algo, seeds) -> TrialOutcome`` replaces the real
    trial (used to test the scan protocol).  The scan never goes past
    ``min(n1, n2)``.
    """
    spec.validate()
    trial_fn = trial_fn or phase_trial
    table = []
    for algo in spec.algos:
        for n in spec.n_values:
            shape = make_shape(n)
            r_cap = min(shape.n1, shape.n2)
            for m, p in _phase_columns(spec, n):
                ranks = spec.r_values if spec.r_values is not None else range(spec.r_start, r_cap + 1)
                for r in ranks:
                    if r > r_cap:
                        break
                    key = ("phase", algo, n, m, r)
                    rec = _run_cell(spec, key, {"n": n, "p": p, "m": m, "r": r, "algo": algo},
                                    lambda s: trial_fn(spec, n, m, r, algo, s))
                    table.append(rec)
                    if spec.r_values is None and rec.successes == 0:
                        break
    return table


def run_timing(spec: ExperimentSpec) -> list[CellRecord]:
    """IHT and FIHT on identical problems for every (n, r, m) cell."""
    spec.validate()
    table = []
    for n in spec.n_values:
        shape = make_shape(n)
        for r in spec.r_values:
            for m in spec.m_values:
                key = ("timing", n, r, m)

                def trial(seeds, n=n, r=r, m=m):
                    try:
                        sig, omega = _draw_1d(spec, n, r, m, seeds)
                    except HankelRecError as exc:
                        bad = TrialOutcome(False, None, None, None, type(exc).__name__)
                        return {a: bad for a in spec.algos}
                    cfg = replace(spec.solver, seed=seeds[2] % 2**31)
                    obs = _observe(sig.samples, omega)
                    return {a: _solve(a, obs, omega, r, shape, cfg, spec.record_time,
                                      spec.success_threshold, sig.samples) for a in spec.algos}

                outs = _map(trial, [trial_seeds(spec.seed, key, t) for t in range(spec.trials)],
                            spec.threads)
                for a in spec.algos:
                    table.append(CellRecord({"n": n, "r": r, "m": m, "algo": a}, [o[a] for o in outs]))
    return table


def add_noise(observed, omega, sigma: float, seed) -> np.ndarray:
    """Add ``sigma * ||P(x)|| * w / ||w||`` on the observed entries, ``w`` complex Gaussian."""
    out = np.array(observed, dtype=np.complex128)
    if sigma == 0:
        return out
    idx = np.unique(omega.indices)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(idx.size) + 1j * rng.standard_normal(idx.size)
    out[idx] += sigma * np.linalg.norm(out[idx]) * w / np.linalg.norm(w)
    return out


def run_noise(spec: ExperimentSpec) -> list[CellRecord]:
    """Mean relative error against the noise level, for every (n, m, r, sigma)."""
    spec.validate()
    algo = spec.algos[0]
    table = []
    for n in spec.n_values:
        shape = make_shape(n)
        for r in spec.r_values:
            for m in spec.m_values:
                for sigma in spec.sigma_values:
                    # signal and mask depend on (n, m, r) only, so every sigma sees the same problems
                    key = ("noise", n, m, r)

                    def trial(seeds, n=n, r=r, m=m, sigma=sigma):
                        try:
                            sig, omega = _draw_1d(spec, n, r, m, seeds)
                        except HankelRecError as exc:
                            return TrialOutcome(False, None, None, None, type(exc).__name__)
                        noise_seed = np.random.SeedSequence([seeds[2], zlib.crc32(repr(sigma).encode())])
                        obs = add_noise(_observe(sig.samples, omega), omega, sigma, noise_seed)
                        cfg = replace(spec.solver, seed=seeds[2] % 2**31)
                        return _solve(algo, obs, omega, r, shape, cfg, spec.record_time,
                                      spec.success_threshold, sig.samples)

                    rec = _run_cell(spec, key, {"n": n, "m": m, "r": r, "sigma": sigma}, trial)
                    table.append(rec)
    return table


def run_nd_demo(spec: ExperimentSpec) -> list[CellRecord]:
    """FIHT on random r-mode arrays of shape ``spec.dims``."""
    spec.validate()
    dims = tuple(int(v) for v in spec.dims)
    shape = make_nd_shape(dims)
    m = int(round(spec.sample_fraction * shape.n))
    table = []
    for r in spec.r_values or [5]:
        key = ("nd_demo", dims, r, m)

        def trial(seeds, r=r):
            sig = generate_nd_signal(dims, r, spec.damping_range, seed=seeds[0])
            x = sig.flat
            omega = sample_indices(shape.n, m, spec.sampling, seed=seeds[1])
            cfg = replace(spec.solver, seed=seeds[2] % 2**31)
            t0 = time.perf_counter()
            try:
                res = nd_fiht_solve(_observe(x, omega), omega, r, shape, cfg)
            except HankelRecError as exc:
                return TrialOutcome(False, None, None, None, type(exc).__name__)
            ms = (time.perf_counter() - t0) * 1e3 if spec.record_time else None
            err = _rel_err(res.x_rec, x)
            return TrialOutcome(err <= spec.success_threshold, err, res.iterations, ms)

        table.append(_run_cell(spec, key, {"dims": list(dims), "r": r, "m": m}, trial))
    return table


# -- output -----------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return str(v)


def snr_db(sigma: float) -> float:
    return math.inf if sigma == 0 else -20.0 * math.log10(sigma)


def table_rows(table: Sequence[CellRecord], kind: str):
    """Column header and row values for one experiment kind."""
    rows = []
    if kind == "phase":
        for c in table:
            rows.append([c.coords["n"], c.coords["p"], c.coords["r"], c.success_rate,
                         c.mean_iters, c.mean_ms])
        return PHASE_COLUMNS, rows
    if kind == "timing":
        for c in table:
            rows.append([c.coords["n"], c.coords["r"], c.coords["m"], c.coords["algo"], c.n_trials,
                         c.failures, c.mean_rel_err, c.mean_iters, c.mean_ms])
        return TIMING_COLUMNS, rows
    if kind == "noise":
        for c in table:
            s = c.coords["sigma"]
            rows.append([c.coords["n"], c.coords["m"], s, snr_db(s), c.mean_rel_err])
        return NOISE_COLUMNS, rows
    if kind == "nd_demo":
        for c in table:
            rows.append(["x".join(map(str, c.coords["dims"])), c.coords["r"], c.coords["m"],
                         c.n_trials, c.success_rate, c.mean_rel_err, c.mean_iters, c.mean_ms])
        return ND_COLUMNS, rows
    raise ValueError(f"no table format for kind {kind!r}")


def _atomic_write(path, text: str) -> None:
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_plotdata(table: Sequence[CellRecord], kind: str, path) -> str:
    """Write ``table`` as CSV with a header row; returns the path.

    Raises:
        ValueError: the table, or any of its cells, is empty.  Nothing is
            written in that case.
    """
    if not table:
        raise ValueError("refusing to write an empty table")
    if any(c.n_trials == 0 for c in table):
        raise ValueError("table contains a cell without trials")
    header, rows = table_rows(table, kind)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    _atomic_write(path, buf.getvalue())
    return str(path)


def write_cells(table: Sequence[CellRecord], path) -> None:
    _atomic_write(path, json.dumps([c.to_json() for c in table], indent=1, default=_json_default))


def load_cells(path) -> list[CellRecord]:
    """Read per-trial JSON; aggregates are recomputed and checked against the stored ones."""
    with open(path) as fh:
        return [CellRecord.from_json(c) for c in json.load(fh)]


def _json_default(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


RUNNERS = {"phase": run_phase, "timing": run_timing, "noise": run_noise, "nd_demo": run_nd_demo}


def run_experiment(spec: ExperimentSpec) -> list[CellRecord]:
    """Run ``spec`` and, if ``spec.out_dir`` is set, write ``<kind>.csv`` and ``<kind>.json`` there."""
    table = RUNNERS[spec.kind](spec)
    if spec.out_dir:
        emit_plotdata(table, spec.kind, os.path.join(spec.out_dir, f"{spec.kind}.csv"))
        write_cells(table, os.path.join(spec.out_dir, f"{spec.kind}.json"))
    return table


def loglog_slope(sigmas, errors) -> float:
    """Least-squares slope of ``log(errors)`` against ``log(sigmas)``."""
    return float(np.polyfit(np.log(np.asarray(sigmas)), np.log(np.asarray(errors)), 1)[0])
