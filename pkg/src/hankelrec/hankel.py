"""Matrix-free Hankel operator algebra.

A length-``n`` vector ``z`` is lifted to the ``n1 x n2`` Hankel matrix
``H(z)[i, j] = z[i + j]`` with ``n1 + n2 = n + 1``.  Large Hankel matrices are
never formed: products with them are linear convolutions evaluated by
zero-padded FFTs.  Dense builders are kept for small problems because the test
suite uses them as reference oracles.

The FFT kernel in :class:`HankelLift` is written for d-dimensional arrays so the
multi-level (block) Hankel lift in :mod:`hankelrec.ndhankel` reuses it.  Vector
layout conventions:

* signal vectors are arrays of shape ``dims`` flattened in C (row-major) order;
* Hankel row and column vectors are flattened with the first pencil axis
  fastest, i.e. ``i = i1 + i2*n1 + i3*n1*n2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import NDArray
from scipy import fft as sfft

from .errors import OracleScaleError

# 2049 x 2048 cells, i.e. every 1-D lift with n <= 4096.
DENSE_MAX_CELLS = 2049 * 2048


def next_pow2(n: int) -> int:
    """Smallest power of two >= n."""
    return 1 << max(int(n) - 1, 0).bit_length()


def ramp_weights(n: int, n1: int) -> NDArray[np.int64]:
    """Number of cells on each anti-diagonal of an ``n1 x (n+1-n1)`` matrix."""
    n2 = n + 1 - n1
    a = np.arange(n)
    return np.minimum(np.minimum(a + 1, n - a), min(n1, n2)).astype(np.int64)


def _to_grid(M: NDArray, shape: tuple[int, ...]) -> NDArray:
    # (prod(shape), k) with first axis fastest -> (k, *shape)
    d = len(shape)
    G = M.T.reshape((M.shape[1],) + tuple(shape[::-1]))
    return G.transpose((0,) + tuple(range(d, 0, -1)))


def _from_grid(G: NDArray) -> NDArray:
    d = G.ndim - 1
    k = G.shape[0]
    return G.transpose((0,) + tuple(range(d, 0, -1))).reshape(k, -1).T


def _as_columns(A, length: int, name: str) -> tuple[NDArray[np.complex128], bool]:
    A = np.asarray(A, dtype=np.complex128)
    single = A.ndim == 1
    if single:
        A = A[:, None]
    if A.ndim != 2 or A.shape[0] != length:
        raise ValueError(f"{name} must have {length} rows, got shape {A.shape}")
    return A, single


class HankelLift:
    """FFT implementation of the Hankel lift and its adjoint-side products.

    Subclasses provide ``dims`` (signal array shape), ``pencils`` (row block
    sizes), ``n``, ``n1``, ``n2`` and a flat ``weights`` vector.
    """

    dims: tuple[int, ...]
    pencils: tuple[int, ...]
    n: int
    n1: int
    n2: int

    @cached_property
    def col_pencils(self) -> tuple[int, ...]:
        return tuple(N - p + 1 for N, p in zip(self.dims, self.pencils))

    @cached_property
    def fft_shape(self) -> tuple[int, ...]:
        return tuple(next_pow2(N) for N in self.dims)

    @cached_property
    def _axes(self) -> tuple[int, ...]:
        return tuple(range(1, len(self.dims) + 1))

    @cached_property
    def flat_weights(self) -> NDArray[np.float64]:
        return np.asarray(self.weights, dtype=np.float64).reshape(-1)

    def _check_signal(self, z) -> NDArray[np.complex128]:
        z = np.asarray(z, dtype=np.complex128).reshape(-1)
        if z.size != self.n:
            raise ValueError(f"signal must have {self.n} entries, got {z.size}")
        return z

    def signal_fft(self, z) -> NDArray[np.complex128]:
        """Zero-padded FFT of ``z``; pass it back as ``zf`` to reuse it."""
        z = self._check_signal(z)
        return sfft.fftn(z.reshape(self.dims), s=self.fft_shape)

    def _window(self, offsets, sizes):
        return (slice(None),) + tuple(slice(o, o + s) for o, s in zip(offsets, sizes))

    def matvec(self, z, V, zf=None) -> NDArray[np.complex128]:
        """``H(z) @ V`` for a vector or a column block ``V``."""
        V, single = _as_columns(V, self.n2, "V")
        if zf is None:
            zf = self.signal_fft(z)
        flip = (slice(None),) + (slice(None, None, -1),) * len(self.dims)
        W = _to_grid(V, self.col_pencils)[flip]
        P = sfft.ifftn(sfft.fftn(W, s=self.fft_shape, axes=self._axes) * zf, axes=self._axes)
        offsets = [m - 1 for m in self.col_pencils]
        out = _from_grid(P[self._window(offsets, self.pencils)])
        return out[:, 0] if single else out

    def rmatvec(self, z, U, zf=None) -> NDArray[np.complex128]:
        """``H(z)^* @ U`` (conjugate transpose) for a vector or column block."""
        U, single = _as_columns(U, self.n1, "U")
        if zf is None:
            zf = self.signal_fft(z)
        flip = (slice(None),) + (slice(None, None, -1),) * len(self.dims)
        W = np.conj(_to_grid(U, self.pencils))[flip]
        P = sfft.ifftn(sfft.fftn(W, s=self.fft_shape, axes=self._axes) * zf, axes=self._axes)
        offsets = [p - 1 for p in self.pencils]
        out = np.conj(_from_grid(P[self._window(offsets, self.col_pencils)]))
        return out[:, 0] if single else out

    def adjoint_outer(self, U, V, sigma=None) -> NDArray[np.complex128]:
        """``H^*(U diag(sigma) V^*)`` as a flat signal vector.

        Each rank-one term is one convolution of ``U[:, k]`` with
        ``conj(V[:, k])``; the sum over ``k`` is taken in the frequency domain
        so only a single inverse FFT is needed.
        """
        U, _ = _as_columns(U, self.n1, "U")
        V, _ = _as_columns(V, self.n2, "V")
        if U.shape[1] != V.shape[1]:
            raise ValueError("U and V must have the same number of columns")
        if sigma is not None:
            U = U * np.asarray(sigma, dtype=np.float64)[None, :]
        Uf = sfft.fftn(_to_grid(U, self.pencils), s=self.fft_shape, axes=self._axes)
        Vf = sfft.fftn(np.conj(_to_grid(V, self.col_pencils)), s=self.fft_shape, axes=self._axes)
        P = sfft.ifftn((Uf * Vf).sum(axis=0))
        return P[tuple(slice(0, N) for N in self.dims)].reshape(-1)

    def pinv_lowrank(self, U, sigma, V) -> NDArray[np.complex128]:
        """Signal whose Hankel lift is closest to ``U diag(sigma) V^*`` (weighted anti-diagonal average)."""
        return self.adjoint_outer(U, V, sigma) / self.flat_weights

    # -- dense reference routines -------------------------------------------------

    def _guard(self):
        if self.n1 * self.n2 > DENSE_MAX_CELLS:
            raise OracleScaleError(
                f"dense {self.n1}x{self.n2} Hankel exceeds {DENSE_MAX_CELLS} cells"
            )

    @cached_property
    def _dense_index(self) -> NDArray[np.intp]:
        rows = np.unravel_index(np.arange(self.n1), self.pencils, order="F")
        cols = np.unravel_index(np.arange(self.n2), self.col_pencils, order="F")
        multi = tuple(r[:, None] + c[None, :] for r, c in zip(rows, cols))
        return np.ravel_multi_index(multi, self.dims)

    def dense(self, z) -> NDArray[np.complex128]:
        """Explicit Hankel matrix of ``z`` (small problems only)."""
        self._guard()
        z = self._check_signal(z)
        return z[self._dense_index]

    def adjoint_dense(self, Z) -> NDArray[np.complex128]:
        """Anti-diagonal sums of an explicit matrix ``Z``."""
        Z = np.asarray(Z, dtype=np.complex128)
        if Z.shape != (self.n1, self.n2):
            raise ValueError(f"expected a {self.n1}x{self.n2} matrix, got {Z.shape}")
        self._guard()
        out = np.zeros(self.n, dtype=np.complex128)
        np.add.at(out, self._dense_index.ravel(), Z.ravel())
        return out


@dataclass(frozen=True, eq=False)
class HankelShape(HankelLift):
    """Dimensions of a 1-D Hankel lift.

    Attributes:
        n: signal length.
        n1, n2: Hankel matrix dimensions, ``n1 + n2 = n + 1``.
        weights: anti-diagonal cell counts ``w_a``; ``H^* H = diag(w)``.
        c_s: aspect penalty ``max(n / n1, n / n2)``.
    """

    n: int
    n1: int
    n2: int
    weights: NDArray[np.int64] = field(repr=False)
    c_s: float

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.n,)

    @property
    def pencils(self) -> tuple[int, ...]:
        return (self.n1,)

    def __eq__(self, other):
        return isinstance(other, HankelShape) and (self.n, self.n1) == (other.n, other.n1)

    def __hash__(self):
        return hash((self.n, self.n1))


def make_shape(n: int, n1: int | None = None) -> HankelShape:
    """Build a :class:`HankelShape`; ``n1`` defaults to the nearly square ``ceil((n+1)/2)``."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if n1 is None:
        n1 = (n + 2) // 2
    n1 = int(n1)
    if not 1 <= n1 <= n:
        raise ValueError(f"n1 must lie in [1, {n}], got {n1}")
    n2 = n + 1 - n1
    return HankelShape(n=n, n1=n1, n2=n2, weights=ramp_weights(n, n1), c_s=max(n / n1, n / n2))


def hankel_dense(z, shape: HankelLift) -> NDArray[np.complex128]:
    return shape.dense(z)


def hankel_adjoint_dense(Z, shape: HankelLift) -> NDArray[np.complex128]:
    return shape.adjoint_dense(Z)


def hankel_matvec(z, v, shape: HankelLift) -> NDArray[np.complex128]:
    """``H(z) @ v`` by FFT convolution in O(n log n)."""
    return shape.matvec(z, v)


def hankel_matvec_adjoint(z, u, shape: HankelLift) -> NDArray[np.complex128]:
    """``H(z)^* @ u`` by FFT convolution."""
    return shape.rmatvec(z, u)


def adjoint_rank_one(u, v, shape: HankelLift) -> NDArray[np.complex128]:
    """``H^*(u v^*)``: entry ``a`` is the sum of ``u[i] * conj(v[j])`` over ``i + j = a``."""
    u = np.asarray(u, dtype=np.complex128).reshape(-1)
    v = np.asarray(v, dtype=np.complex128).reshape(-1)
    return shape.adjoint_outer(u, v)


def apply_pseudo_inverse(L, shape: HankelLift) -> NDArray[np.complex128]:
    """Map a low-rank factor ``L = U diag(sigma) V^*`` back to a signal via ``D^-2 H^*``."""
    return shape.pinv_lowrank(L.U, L.sigma, L.V)


def sample_counts(omega, n: int | None = None) -> NDArray[np.int64]:
    """Multiplicity of every index in a sample set."""
    n = omega.n if n is None else n
    idx = np.asarray(omega.indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)][0]
        raise ValueError(f"sample index {bad} out of range [0, {n})")
    return np.bincount(idx, minlength=n)


def project_samples(z, omega) -> NDArray[np.complex128]:
    """Keep the observed entries of ``z``, scaled by their multiplicity."""
    z = np.asarray(z, dtype=np.complex128).reshape(-1)
    if omega.n != z.size:
        raise ValueError(f"sample set is over {omega.n} entries but z has {z.size}")
    return z * sample_counts(omega)
