"""Spectrally sparse test signals, random sample sets and Vandermonde diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateSignalError, GenerationError
from .hankel import HankelShape, make_shape

WITH_REPLACEMENT = "with_replacement"
WITHOUT_REPLACEMENT = "without_replacement"
_MODE_ALIASES = {
    "with": WITH_REPLACEMENT,
    "without": WITHOUT_REPLACEMENT,
    WITH_REPLACEMENT: WITH_REPLACEMENT,
    WITHOUT_REPLACEMENT: WITHOUT_REPLACEMENT,
}

REJECTION_BUDGET = 10_000


@dataclass(frozen=True)
class Mode:
    """One damped complex exponential ``d * exp((2*pi*i*f - tau) * t)``."""

    f: float
    tau: float
    d: complex

    @property
    def pole(self) -> complex:
        return complex(np.exp(2j * np.pi * self.f - self.tau))


def evaluate_modes(n: int, modes: Sequence[Mode]) -> NDArray[np.complex128]:
    """Samples ``t = 0..n-1`` of a sum of modes."""
    t = np.arange(n)
    out = np.zeros(n, dtype=np.complex128)
    for mode in modes:
        out += mode.d * np.exp((2j * np.pi * mode.f - mode.tau) * t)
    return out


@dataclass(eq=False)
class SpectralSignal:
    n: int
    modes: list[Mode]
    samples: NDArray[np.complex128] = field(repr=False)

    @classmethod
    def from_modes(cls, n: int, modes: Sequence[Mode]) -> SpectralSignal:
        modes = list(modes)
        fs = [m.f for m in modes]
        if len(set(fs)) != len(fs):
            raise ValueError("mode frequencies must be distinct")
        if any(m.tau < 0 for m in modes) or any(m.d == 0 for m in modes):
            raise ValueError("dampings must be >= 0 and amplitudes nonzero")
        return cls(n=int(n), modes=modes, samples=evaluate_modes(n, modes))

    @property
    def r(self) -> int:
        return len(self.modes)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "modes": [
                {"f": m.f, "tau": m.tau, "d_re": float(np.real(m.d)), "d_im": float(np.imag(m.d))}
                for m in self.modes
            ],
            "samples": [[float(v.real), float(v.imag)] for v in self.samples],
        }

    @classmethod
    def from_json(cls, obj: dict) -> SpectralSignal:
        n = int(obj["n"])
        modes = [Mode(float(m["f"]), float(m["tau"]), complex(m["d_re"], m["d_im"]))
                 for m in obj.get("modes", [])]
        if "samples" in obj:
            samples = np.array([complex(re, im) for re, im in obj["samples"]], dtype=np.complex128)
            if samples.size != n:
                raise ValueError(f"signal declares n={n} but has {samples.size} samples")
        else:
            samples = evaluate_modes(n, modes)
        return cls(n=n, modes=modes, samples=samples)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Observed time indices; duplicates only occur under ``with_replacement``."""

    n: int
    indices: NDArray[np.int64]
    mode: str = WITHOUT_REPLACEMENT

    def __post_init__(self):
        mode = _MODE_ALIASES.get(self.mode)
        if mode is None:
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "indices", idx)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            bad = idx[(idx < 0) | (idx >= self.n)][0]
            raise ValueError(f"sample index {bad} out of range [0, {self.n})")
        if mode == WITHOUT_REPLACEMENT and np.unique(idx).size != idx.size:
            raise ValueError("duplicate indices in a without_replacement sample set")

    @property
    def m(self) -> int:
        return int(self.indices.size)

    @classmethod
    def full(cls, n: int) -> SampleSet:
        return cls(n, np.arange(n))

    def to_json(self) -> dict:
        short = "with" if self.mode == WITH_REPLACEMENT else "without"
        return {"n": self.n, "mode": short, "indices": [int(i) for i in self.indices]}

    @classmethod
    def from_json(cls, obj: dict) -> SampleSet:
        return cls(int(obj["n"]), np.asarray(obj["indices"], dtype=np.int64), obj.get("mode", "without"))


def default_amplitudes(rng: np.random.Generator, r: int) -> NDArray[np.complex128]:
    """Modulus ``1 + 10**(0.5*c)`` with ``c ~ U[0, 1]``, phase uniform on ``[0, 2*pi)``."""
    c = rng.uniform(0.0, 1.0, r)
    phase = rng.uniform(0.0, 2 * np.pi, r)
    return (1 + 10 ** (0.5 * c)) * np.exp(1j * phase)


@dataclass
class SignalGenConfig:
    """Parameters of a random spectrally sparse signal.

    ``min_separation`` is a wrap-around distance on the unit circle (0 disables
    the constraint).  ``amplitude_law`` maps ``(rng, r)`` to ``r`` complex
    amplitudes.
    """

    n: int
    r: int
    min_separation: float = 0.0
    damping_range: tuple[float, float] = (0.0, 0.0)
    amplitude_law: Callable[[np.random.Generator, int], NDArray[np.complex128]] = default_amplitudes
    seed: int | None = 0
    n1: int | None = None

    def validate(self) -> HankelShape:
        shape = make_shape(self.n, self.n1)
        if self.r < 1 or self.r > min(shape.n1, shape.n2):
            raise ValueError(f"r={self.r} must lie in [1, min(n1, n2)={min(shape.n1, shape.n2)}]")
        if not 0.0 <= self.min_separation <= 0.5:
            raise ValueError("min_separation must lie in [0, 0.5]")
        lo, hi = self.damping_range
        if lo < 0 or hi < lo:
            raise ValueError("damping_range must satisfy 0 <= lo <= hi")
        return shape


def wrap_distance(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % 1.0
    return np.minimum(d, 1.0 - d)


def draw_frequencies(rng: np.random.Generator, r: int, min_separation: float = 0.0,
                     budget: int = REJECTION_BUDGET) -> NDArray[np.float64]:
    """Draw ``r`` frequencies on ``[0, 1)`` with pairwise wrap distance >= ``min_separation``.

    Each new frequency is redrawn until it clears every accepted one; the
    rejection budget is shared across all frequencies.  Exact duplicates are
    always rejected.
    """
    if min_separation > 0 and r * min_separation >= 1.0:
        raise GenerationError(f"{r} frequencies cannot be {min_separation} apart on the circle")
    freqs: list[float] = []
    rejections = 0
    while len(freqs) < r:
        f = float(rng.uniform(0.0, 1.0))
        if freqs:
            dist = wrap_distance(f, freqs)
            if dist.min() == 0.0 or dist.min() < min_separation:
                rejections += 1
                if rejections > budget:
                    raise GenerationError(
                        f"no admissible frequency set after {budget} rejections "
                        f"(r={r}, min_separation={min_separation})"
                    )
                continue
        freqs.append(f)
    return np.array(freqs)


def generate_signal(cfg: SignalGenConfig) -> SpectralSignal:
    """Draw a random signal; frequencies, then dampings, then amplitudes from one RNG."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    freqs = draw_frequencies(rng, cfg.r, cfg.min_separation)
    lo, hi = cfg.damping_range
    taus = rng.uniform(lo, hi, cfg.r) if hi > lo else np.full(cfg.r, float(lo))
    amps = np.asarray(cfg.amplitude_law(rng, cfg.r), dtype=np.complex128)
    modes = [Mode(float(f), float(t), complex(d)) for f, t, d in zip(freqs, taus, amps)]
    return SpectralSignal.from_modes(cfg.n, modes)


def sample_indices(n: int, m: int, mode: str = WITHOUT_REPLACEMENT, seed=None) -> SampleSet:
    """Uniformly random sample set of size ``m`` over ``range(n)``."""
    mode = _MODE_ALIASES.get(mode, mode)
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    if mode == WITHOUT_REPLACEMENT:
        if m > n:
            raise ValueError(f"cannot draw {m} distinct indices from {n}")
        idx = rng.choice(n, size=m, replace=False)
    elif mode == WITH_REPLACEMENT:
        idx = rng.integers(0, n, size=m)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return SampleSet(n, idx.astype(np.int64), mode)


def vandermonde_factors(sig: SpectralSignal, shape: HankelShape):
    """Return ``(E_L, E_R, D)`` with ``H(x) = E_L @ D @ E_R.T``."""
    if sig.r > min(shape.n1, shape.n2):
        raise ValueError(f"r={sig.r} exceeds min(n1, n2)")
    poles = np.array([m.pole for m in sig.modes], dtype=np.complex128)
    E_L = poles[None, :] ** np.arange(shape.n1)[:, None]
    E_R = poles[None, :] ** np.arange(shape.n2)[:, None]
    D = np.diag(np.array([m.d for m in sig.modes], dtype=np.complex128))
    return E_L, E_R, D


def _min_gram_eig(E: NDArray[np.complex128]) -> float:
    s = np.linalg.svd(E, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        raise DegenerateSignalError("Vandermonde factor is rank deficient (repeated poles?)")
    return float(s[-1] ** 2)


def incoherence_estimate(sig: SpectralSignal, shape: HankelShape) -> float:
    """Smallest incoherence parameter ``mu`` that the signal's Hankel matrix satisfies."""
    E_L, E_R, _ = vandermonde_factors(sig, shape)
    return max(shape.n1 / _min_gram_eig(E_L), shape.n2 / _min_gram_eig(E_R))


def save_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
