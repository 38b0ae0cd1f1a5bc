"""IHT and FIHT reconstruction, their initializations, and iterate telemetry.

Each iteration takes a gradient step on the observed entries (scaled by the
inverse sampling rate), lifts the result to a Hankel matrix, truncates it to
rank ``r`` and maps it back to a signal by anti-diagonal averaging.  FIHT
projects onto the tangent space of the current low-rank iterate before
truncating, which keeps the SVD small; IHT truncates the full Hankel matrix.  ``observed`` is always a full-length vector holding
the measured values on the sample set (anything elsewhere is ignored).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .errors import DivergenceError, UndefinedResidualError
from .hankel import HankelLift, sample_counts
from .lowrank import (
    LowRankFactor,
    _partial_svd,
    dense_hard_threshold,
    partial_svd_hankel,
    retract_rank_r,
    tangent_coeffs,
)
from .spectral import SampleSet

ONE_STEP = "one_step"
RESAMPLED = "resampled"


@dataclass
class SolverConfig:
    """Solver settings.

    A tolerance of 0 disables that stopping rule; at most one may be disabled.
    ``stepsize`` overrides the default ``n / m``.  ``mu`` is the incoherence
    cap used by trimming in the resampled initialization.
    """

    r: int | None = None
    max_iters: int = 500
    tol_residual: float = 1e-4
    tol_step: float = 1e-5
    init: str = ONE_STEP
    resample_rounds: int = 3
    mu: float | None = None
    stepsize: float | None = None
    seed: int = 0
    svd_tol: float = 1e-10
    svd_max_iters: int = 50
    dense_svd_max_cells: int = 300 * 300
    divergence_threshold: float = 1e6

    def validate(self) -> None:
        if self.r is None or self.r < 1:
            raise ValueError("rank r must be >= 1")
        if self.tol_residual <= 0 and self.tol_step <= 0:
            raise ValueError("at most one stopping rule may be disabled")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.init not in (ONE_STEP, RESAMPLED):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class IterRecord:
    residual: float
    step: float
    true_err: float | None
    ms: float


@dataclass(eq=False)
class SolveResult:
    x_rec: NDArray[np.complex128] = field(repr=False)
    iterations: int
    trace: list[IterRecord]
    converged: bool
    reason: str
    init_spectral_gap: float | None = None
    factor: LowRankFactor | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "x_rec": [[float(v.real), float(v.imag)] for v in self.x_rec],
            "iterations": self.iterations,
            "converged": {"flag": self.converged, "reason": self.reason},
            "init_spectral_gap": self.init_spectral_gap,
            "trace": [
                {"residual": t.residual, "step": t.step, "true_err": t.true_err, "ms": t.ms}
                for t in self.trace
            ],
        }


def _counts(omega, shape):
    if omega.n != shape.n:
        raise ValueError(f"sample set covers {omega.n} entries, signal has {shape.n}")
    return sample_counts(omega, shape.n).astype(np.float64)


def observed_residual(x_l, observed, omega) -> float:
    """Relative misfit of ``x_l`` against the observations on the sample set."""
    counts = sample_counts(omega).astype(np.float64)
    target = np.asarray(observed, dtype=np.complex128).reshape(-1) * counts
    denom = np.linalg.norm(target)
    if denom == 0:
        raise UndefinedResidualError("observed vector is zero on the sample set")
    return float(np.linalg.norm(np.asarray(x_l).reshape(-1) * counts - target) / denom)


def _one_step(observed, omega, r, shape, tol=1e-10, max_iters=50, seed=0):
    counts = _counts(omega, shape)
    m = counts.sum()
    if m == 0:
        return LowRankFactor.zeros(shape.n1, shape.n2, r), None
    z = (shape.n / m) * np.asarray(observed, dtype=np.complex128).reshape(-1) * counts
    factor, ritz, _ = _partial_svd(z, r, shape, tol, max_iters, 10, seed)
    gap = None
    if ritz.size > r and ritz[r] > 0:
        gap = float(ritz[r - 1] / ritz[r])
    return factor, gap


def init_one_step(observed, omega, r: int, shape: HankelLift, tol: float = 1e-10,
                  max_iters: int = 50, seed: int = 0) -> LowRankFactor:
    """Rank-``r`` truncation of the Hankel lift of the zero-filled samples scaled by ``n / m``."""
    return _one_step(observed, omega, r, shape, tol, max_iters, seed)[0]


def trim(L: LowRankFactor, mu: float, shape: HankelLift) -> LowRankFactor:
    """Cap every row norm of ``U`` and ``V`` at ``sqrt(mu * c_s * r / n)``."""
    cap = np.sqrt(mu * shape.c_s * L.r / shape.n)

    def _cap_rows(A):
        norms = np.linalg.norm(A, axis=1)
        scale = np.ones_like(norms)
        big = norms > cap
        scale[big] = cap / norms[big]
        return A * scale[:, None]

    return LowRankFactor(_cap_rows(L.U), L.sigma.copy(), _cap_rows(L.V))


def _partition(omega: SampleSet, parts: int, seed, shuffle: bool = True) -> list[SampleSet]:
    if omega.m < parts:
        raise ValueError(f"cannot split {omega.m} samples into {parts} nonempty sets")
    idx = np.random.default_rng(seed).permutation(omega.indices) if shuffle else omega.indices
    size = omega.m // parts
    chunks = [idx[k * size:(k + 1) * size] for k in range(parts - 1)]
    chunks.append(idx[(parts - 1) * size:])
    return [SampleSet(omega.n, c, omega.mode) for c in chunks]


def init_resampled(observed, omega: SampleSet, r: int, L_rounds: int, mu: float,
                   shape: HankelLift, seed: int = 0, tol: float = 1e-10, max_iters: int = 50,
                   history: list | None = None, shuffle: bool = True) -> LowRankFactor:
    """Resampled FIHT with trimming.

    ``omega`` is shuffled (with ``seed``; skipped if ``shuffle`` is false) and
    split into ``L_rounds + 1`` disjoint batches of consecutive entries; any
    remainder goes to the last batch.  Every round
    trims the current estimate, maps it to a signal, and takes one FIHT step
    using a fresh batch.  If ``history`` is a list, the estimate after every
    round (starting with the one-step estimate) is appended to it.
    """
    observed = np.asarray(observed, dtype=np.complex128).reshape(-1)
    batches = _partition(omega, L_rounds + 1, seed, shuffle)
    L_tilde = init_one_step(observed, batches[0], r, shape, tol, max_iters, seed)
    if history is not None:
        history.append(L_tilde)
    for batch in batches[1:]:
        L_hat = trim(L_tilde, mu, shape)
        x_hat = shape.pinv_lowrank(L_hat.U, L_hat.sigma, L_hat.V)
        Ua, _ = np.linalg.qr(L_hat.U)
        Vb, _ = np.linalg.qr(L_hat.V)
        counts = _counts(batch, shape)
        z = x_hat + (shape.n / counts.sum()) * counts * (observed - x_hat)
        L_tilde = retract_rank_r(tangent_coeffs(z, (Ua, Vb), shape), (Ua, Vb), r)
        if history is not None:
            history.append(L_tilde)
    return L_tilde


def _initial_factor(observed, omega, shape, cfg):
    if cfg.init == RESAMPLED:
        if cfg.mu is None:
            raise ValueError("resampled initialization needs an incoherence cap mu")
        L = init_resampled(observed, omega, cfg.r, cfg.resample_rounds, cfg.mu, shape,
                           cfg.seed, cfg.svd_tol, cfg.svd_max_iters)
        return L, None
    return _one_step(observed, omega, cfg.r, shape, cfg.svd_tol, cfg.svd_max_iters, cfg.seed)


def _iterate(update, observed, omega, shape: HankelLift, cfg: SolverConfig, x_true, initial):
    cfg.validate()
    observed = shape._check_signal(observed)
    counts = _counts(omega, shape)
    m = counts.sum()
    if m == 0:
        raise ValueError("sample set is empty")
    target = observed * counts
    obs_norm = np.linalg.norm(target)
    if obs_norm == 0:
        raise UndefinedResidualError("observed vector is zero on the sample set")
    step_size = cfg.stepsize if cfg.stepsize is not None else shape.n / m

    gap = None
    if initial is None:
        L, gap = _initial_factor(observed, omega, shape, cfg)
    else:
        L = initial
    x = shape.pinv_lowrank(L.U, L.sigma, L.V)
    true_norm = None if x_true is None else np.linalg.norm(x_true)

    trace: list[IterRecord] = []
    reason = "max_iters"
    for it in range(cfg.max_iters):
        t0 = time.perf_counter()
        w = x + step_size * (target - counts * x)
        L = update(w, L, it)
        x_new = shape.pinv_lowrank(L.U, L.sigma, L.V)
        ms = (time.perf_counter() - t0) * 1e3

        residual = float(np.linalg.norm(counts * x_new - target) / obs_norm)
        if not np.all(np.isfinite(x_new)) or not residual <= cfg.divergence_threshold:
            raise DivergenceError(f"iterate diverged at iteration {it + 1} "
                                  f"(observed residual {residual:.3e})", last_finite=x,
                                  iteration=it)
        xn = np.linalg.norm(x)
        step = float(np.linalg.norm(x_new - x) / xn) if xn > 0 else float("inf")
        true_err = None
        if x_true is not None:
            true_err = float(np.linalg.norm(x_new - x_true) / true_norm)
        trace.append(IterRecord(residual, step, true_err, ms))
        x = x_new
        if cfg.tol_residual > 0 and residual < cfg.tol_residual:
            reason = "residual"
            break
        if cfg.tol_step > 0 and step < cfg.tol_step:
            reason = "step"
            break
    return SolveResult(x_rec=x, iterations=len(trace), trace=trace, converged=reason != "max_iters",
                       reason=reason, init_spectral_gap=gap, factor=L)


def _with_rank(cfg, r):
    cfg = SolverConfig() if cfg is None else cfg
    return replace(cfg, r=r) if r is not None else cfg


def iht_solve(observed, omega, r: int, shape: HankelLift, cfg: SolverConfig | None = None, *,
              x_true=None, initial: LowRankFactor | None = None) -> SolveResult:
    """Iterative hard thresholding.

    The rank-``r`` truncation is a dense SVD while ``n1 * n2 <= cfg.dense_svd_max_cells`` and the
    matrix-free partial SVD beyond that.
    """
    cfg = _with_rank(cfg, r)
    dense = shape.n1 * shape.n2 <= cfg.dense_svd_max_cells

    def update(w, L, it):
        if dense:
            return dense_hard_threshold(shape.dense(w), cfg.r)
        return partial_svd_hankel(w, cfg.r, shape, cfg.svd_tol, cfg.svd_max_iters,
                                  seed=cfg.seed + it + 1)

    return _iterate(update, observed, omega, shape, cfg, x_true, initial)


def fiht_solve(observed, omega, r: int, shape: HankelLift, cfg: SolverConfig | None = None, *,
               x_true=None, initial: LowRankFactor | None = None) -> SolveResult:
    """Fast IHT: project onto the tangent space at ``L_l`` before truncating."""
    cfg = _with_rank(cfg, r)

    def update(w, L, it):
        return retract_rank_r(tangent_coeffs(w, L.basis, shape), L.basis, cfg.r)

    return _iterate(update, observed, omega, shape, cfg, x_true, initial)
