"""Multi-level (block) Hankel lifts of d-dimensional arrays.

An array ``X`` of shape ``(N_1, ..., N_d)`` is lifted to the matrix with entries
``X[i_1 + j_1, ..., i_d + j_d]``, where the row multi-index ``i`` ranges over
the pencil box ``n_1 x ... x n_d`` and the column multi-index ``j`` over
``(N_1-n_1+1) x ... x (N_d-n_d+1)``.  Rows and columns are flattened with the
first axis fastest; the array itself (and every sample index) is flattened in
row-major order.  The FFT kernel is shared with the 1-D lift, so the solvers
in :mod:`hankelrec.solvers` run on these shapes unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import MemoryBudgetError, OracleScaleError
from .hankel import DENSE_MAX_CELLS, HankelLift, ramp_weights
from .solvers import SolverConfig, SolveResult, fiht_solve
from .spectral import default_amplitudes

DEFAULT_MEMORY_BUDGET = 4 * 2**30
_BINARY_ENCODING = "f64le-interleaved"


@dataclass(frozen=True, eq=False)
class NdHankelShape(HankelLift):
    """Dimensions of a multi-level Hankel lift.

    ``n1``/``n2`` are the row and column counts of the lifted matrix, ``n``
    the number of array entries, and ``weights`` has the array's shape.
    """

    dims: tuple[int, ...]
    pencils: tuple[int, ...]
    n: int
    n1: int
    n2: int
    weights: NDArray[np.int64] = field(repr=False)
    c_s: float

    def __eq__(self, other):
        return (isinstance(other, NdHankelShape)
                and (self.dims, self.pencils) == (other.dims, other.pencils))

    def __hash__(self):
        return hash((self.dims, self.pencils))


def make_nd_shape(N: Sequence[int], n: Sequence[int] | None = None) -> NdHankelShape:
    """Pencils default to ``ceil((N_k + 1) / 2)`` along every axis."""
    dims = tuple(int(v) for v in N)
    if not dims or any(v < 1 for v in dims):
        raise ValueError(f"invalid dims {N}")
    pencils = tuple((v + 2) // 2 for v in dims) if n is None else tuple(int(v) for v in n)
    if len(pencils) != len(dims) or any(not 1 <= p <= v for p, v in zip(pencils, dims)):
        raise ValueError(f"pencils {pencils} incompatible with dims {dims}")
    w = np.ones((), dtype=np.int64)
    for v, p in zip(dims, pencils):
        w = np.multiply.outer(w, ramp_weights(v, p))
    total = int(np.prod(dims))
    n1 = int(np.prod(pencils))
    n2 = int(np.prod([v - p + 1 for v, p in zip(dims, pencils)]))
    return NdHankelShape(dims=dims, pencils=pencils, n=total, n1=n1, n2=n2, weights=w,
                         c_s=max(total / n1, total / n2))


@dataclass(frozen=True)
class NdMode:
    f: tuple[float, ...]
    tau: tuple[float, ...]
    d: complex

    @property
    def poles(self) -> NDArray[np.complex128]:
        return np.exp(2j * np.pi * np.asarray(self.f) - np.asarray(self.tau))


def evaluate_nd_modes(dims: Sequence[int], modes: Sequence[NdMode]) -> NDArray[np.complex128]:
    out = np.zeros(tuple(dims), dtype=np.complex128)
    for mode in modes:
        term = np.asarray(mode.d, dtype=np.complex128)
        for y, v in zip(mode.poles, dims):
            term = np.multiply.outer(term, y ** np.arange(v))
        out += term
    return out


@dataclass(eq=False)
class NdSignal:
    dims: tuple[int, ...]
    entries: NDArray[np.complex128] = field(repr=False)
    modes: list[NdMode] | None = None

    @classmethod
    def from_modes(cls, dims, modes) -> NdSignal:
        dims = tuple(int(v) for v in dims)
        return cls(dims, evaluate_nd_modes(dims, modes), list(modes))

    @property
    def flat(self) -> NDArray[np.complex128]:
        return self.entries.reshape(-1)

    def _header(self) -> dict:
        head = {"dims": list(self.dims)}
        if self.modes is not None:
            head["modes"] = [
                {"f": list(m.f), "tau": list(m.tau), "d_re": float(np.real(m.d)),
                 "d_im": float(np.imag(m.d))}
                for m in self.modes
            ]
        return head

    def save(self, path, binary: bool = True) -> None:
        """Write a JSON header line plus raw ``(re, im)`` float64 payload, or pure JSON."""
        head = self._header()
        if not binary:
            head["entries"] = [[float(v.real), float(v.imag)] for v in self.flat]
            with open(path, "w") as fh:
                json.dump(head, fh)
            return
        payload = np.ascontiguousarray(self.flat).view("<f8").astype("<f8").tobytes()
        head["encoding"] = _BINARY_ENCODING
        head["payload_bytes"] = len(payload)
        with open(path, "wb") as fh:
            fh.write(json.dumps(head).encode() + b"\n")
            fh.write(payload)

    @classmethod
    def load(cls, path) -> NdSignal:
        with open(path, "rb") as fh:
            raw = fh.read()
        line, _, rest = raw.partition(b"\n")
        try:
            head = json.loads(line)
        except ValueError:
            head = {}
        if head.get("encoding") == _BINARY_ENCODING:
            if len(rest) != head["payload_bytes"]:
                raise ValueError(f"truncated payload in {path}")
            flat = np.frombuffer(rest, dtype="<f8").astype(np.float64).view(np.complex128)
        else:
            head = json.loads(raw)
            flat = np.array([complex(a, b) for a, b in head["entries"]], dtype=np.complex128)
        dims = tuple(int(v) for v in head["dims"])
        if flat.size != int(np.prod(dims)):
            raise ValueError(f"payload has {flat.size} entries, dims {dims} need {np.prod(dims)}")
        modes = None
        if "modes" in head:
            modes = [NdMode(tuple(m["f"]), tuple(m["tau"]), complex(m["d_re"], m["d_im"]))
                     for m in head["modes"]]
        return cls(dims, flat.reshape(dims).copy(), modes)


def generate_nd_signal(dims, r: int, damping_range=(0.0, 0.0), seed=None,
                       amplitude_law=default_amplitudes) -> NdSignal:
    """Random r-mode array: frequencies uniform on the unit d-cube, per-axis dampings uniform."""
    rng = np.random.default_rng(seed)
    d = len(dims)
    freqs = rng.uniform(0.0, 1.0, (r, d))
    lo, hi = damping_range
    taus = rng.uniform(lo, hi, (r, d)) if hi > lo else np.full((r, d), float(lo))
    amps = amplitude_law(rng, r)
    modes = [NdMode(tuple(map(float, f)), tuple(map(float, t)), complex(a))
             for f, t, a in zip(freqs, taus, amps)]
    return NdSignal.from_modes(dims, modes)


def nd_hankel_dense(X, shape: NdHankelShape) -> NDArray[np.complex128]:
    """Block-Hankel matrix built recursively over the last axis (reference oracle)."""
    if shape.n1 * shape.n2 > DENSE_MAX_CELLS:
        raise OracleScaleError("multi-level Hankel matrix too large to build")
    X = np.asarray(X, dtype=np.complex128).reshape(shape.dims)
    return _recursive_block(X, shape.pencils)


def _recursive_block(X, pencils):
    if X.ndim == 1:
        p = pencils[0]
        return np.array([[X[i + j] for j in range(X.size - p + 1)] for i in range(p)])
    p = pencils[-1]
    q = X.shape[-1] - p + 1
    blocks = [_recursive_block(X[..., k], pencils[:-1]) for k in range(X.shape[-1])]
    return np.block([[blocks[a + b] for b in range(q)] for a in range(p)])


def nd_hankel_matvec(X, v, shape: NdHankelShape) -> NDArray[np.complex128]:
    return shape.matvec(np.asarray(X).reshape(-1), v)


def nd_hankel_matvec_adjoint(X, u, shape: NdHankelShape) -> NDArray[np.complex128]:
    return shape.rmatvec(np.asarray(X).reshape(-1), u)


def nd_adjoint_rank_one(u, v, shape: NdHankelShape) -> NDArray[np.complex128]:
    """Entry ``l`` is the sum of ``u(i) * conj(v(j))`` over ``i + j = l``; returned with the array's shape."""
    return shape.adjoint_outer(np.asarray(u).reshape(-1), np.asarray(v).reshape(-1)).reshape(shape.dims)


def nd_vandermonde_factors(sig: NdSignal, shape: NdHankelShape):
    """``(E_L, E_R, D)`` with ``E_L @ D @ E_R.T`` equal to the lifted matrix."""
    if sig.modes is None:
        raise ValueError("signal has no mode list")

    def _columns(box):
        cols = []
        for m in sig.modes:
            col = np.ones((), dtype=np.complex128)
            # first axis fastest: build with the last axis outermost
            for y, v in zip(m.poles[::-1], box[::-1]):
                col = np.multiply.outer(col, y ** np.arange(v))
            cols.append(col.reshape(-1))
        return np.stack(cols, axis=1)

    D = np.diag([m.d for m in sig.modes])
    return _columns(shape.pencils), _columns(shape.col_pencils), D


def factor_bytes(shape: NdHankelShape, r: int) -> int:
    """Rough peak size of the factor matrices held by one FIHT iteration."""
    # U, V, the stacked [U Q2], [V Q1] and the tangent blocks, complex128
    return 16 * (shape.n1 + shape.n2) * r * 6


def nd_fiht_solve(observed, omega, r: int, shape: NdHankelShape, cfg: SolverConfig | None = None, *,
                  x_true=None, memory_budget: int = DEFAULT_MEMORY_BUDGET, initial=None) -> SolveResult:
    """FIHT on a flattened (row-major) array; refuses configurations over ``memory_budget``."""
    need = factor_bytes(shape, r)
    if need > memory_budget:
        raise MemoryBudgetError(f"factor matrices need about {need / 2**30:.2f} GiB, "
                                f"budget is {memory_budget / 2**30:.2f} GiB")
    observed = np.asarray(observed, dtype=np.complex128).reshape(-1)
    if x_true is not None:
        x_true = np.asarray(x_true).reshape(-1)
    return fiht_solve(observed, omega, r, shape, cfg, x_true=x_true, initial=initial)
