"""Rank-r linear algebra for Hankel iterates.

Only thin factors are ever stored.  The tangent-space projection of a Hankel
matrix ``H(h)`` at ``L = U S V^*`` is encoded by three small blocks

    proj(H) = U C V^* + U X^* + Y V^*,
    C = U^* H V,  X = (I - V V^*) H^* U,  Y = (I - U U^*) H V,

and its best rank-r approximation follows from two thin QR factorizations and
one SVD of a ``2r x 2r`` matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .errors import OracleScaleError, PartialSVDError
from .hankel import DENSE_MAX_CELLS, HankelLift

QR_RANK_TOL = 1e-14


@dataclass(eq=False)
class LowRankFactor:
    """``L = U @ diag(sigma) @ V^*`` with orthonormal columns (except after trimming)."""

    U: NDArray[np.complex128]
    sigma: NDArray[np.float64]
    V: NDArray[np.complex128]

    @property
    def r(self) -> int:
        return int(self.sigma.size)

    @property
    def basis(self) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
        return self.U, self.V

    def dense(self) -> NDArray[np.complex128]:
        if self.U.shape[0] * self.V.shape[0] > DENSE_MAX_CELLS:
            raise OracleScaleError("low-rank factor too large to densify")
        return (self.U * self.sigma) @ self.V.conj().T

    @classmethod
    def zeros(cls, n1: int, n2: int, r: int) -> LowRankFactor:
        return cls(np.eye(n1, r, dtype=np.complex128), np.zeros(r), np.eye(n2, r, dtype=np.complex128))


@dataclass(eq=False)
class TangentCoeffs:
    C: NDArray[np.complex128]
    X: NDArray[np.complex128]
    Y: NDArray[np.complex128]

    def dense(self, U, V) -> NDArray[np.complex128]:
        return U @ self.C @ V.conj().T + U @ self.X.conj().T + self.Y @ V.conj().T


def project_tangent_dense(Z, U, V) -> NDArray[np.complex128]:
    """Reference ``U U^* Z + Z V V^* - U U^* Z V V^*``."""
    PU = U @ (U.conj().T @ Z)
    return PU + Z @ V @ V.conj().T - PU @ V @ V.conj().T


def tangent_coeffs(h_signal, basis, shape: HankelLift, zf=None) -> TangentCoeffs:
    """Tangent blocks of ``H(h_signal)`` using 2r fast Hankel products."""
    U, V = basis
    if zf is None:
        zf = shape.signal_fft(h_signal)
    HV = shape.matvec(h_signal, V, zf)
    HtU = shape.rmatvec(h_signal, U, zf)
    C = U.conj().T @ HV
    Y = HV - U @ C
    X = HtU - V @ C.conj().T
    return TangentCoeffs(C, X, Y)


def _hmul(A, B):
    # A^* @ B without copying the (usually tall) A
    return (B.conj().T @ A).conj().T


def _cholesky_qr(A):
    # Q factor via the Gram matrix; None when A is too ill-conditioned for it
    G = _hmul(A, A)
    w = np.linalg.eigvalsh(G)
    if w.size == 0 or w[0] < 1e-2 * w[-1]:
        return None
    R = scipy.linalg.cholesky(G, lower=False)
    return scipy.linalg.solve_triangular(R, A.T, trans="T", lower=False).T


def _orthonormalize_against(Q, B):
    # two rounds of projection keep Q orthogonal to B at working precision
    for _ in range(2):
        Q = Q - B @ _hmul(B, Q)
        # inputs are usually nearly orthonormal already, where the Gram route
        # is stable and far cheaper than forming a Householder Q
        Qc = _cholesky_qr(Q)
        Q = Qc if Qc is not None else np.linalg.qr(Q)[0]
    return Q


def _range_basis(A, against, tol=QR_RANK_TOL):
    """Orthonormal basis of range(A), numerically orthogonal to ``against``."""
    n = A.shape[0]
    cap = n - against.shape[1]
    nrm = np.linalg.norm(A)
    if nrm == 0.0 or cap <= 0:
        return np.zeros((n, 0), dtype=np.complex128)
    Q, R, _ = scipy.linalg.qr(A, mode="economic", pivoting=True)
    k = min(int(np.count_nonzero(np.abs(np.diag(R)) > tol * nrm)), cap)
    if k == 0:
        return np.zeros((n, 0), dtype=np.complex128)
    return _orthonormalize_against(Q[:, :k], against)


def complete_orthonormal(Q, k: int) -> NDArray[np.complex128]:
    """Append ``k`` orthonormal columns orthogonal to the orthonormal ``Q``."""
    n, q = Q.shape
    if k <= 0:
        return Q
    if q + k > n:
        raise ValueError(f"cannot fit {q + k} orthonormal columns in dimension {n}")
    cand = np.eye(n, q + k, dtype=np.complex128)
    cand = cand - Q @ (Q.conj().T @ cand)
    P, R, _ = scipy.linalg.qr(cand, mode="economic", pivoting=True)
    extra = _orthonormalize_against(P[:, :k], Q)
    return np.hstack([Q, extra])


def _pad(U, s, V, r):
    k = s.size
    if k >= r:
        return LowRankFactor(U[:, :r], s[:r].copy(), V[:, :r])
    return LowRankFactor(complete_orthonormal(U, r - k), np.concatenate([s, np.zeros(r - k)]),
                         complete_orthonormal(V, r - k))


def retract_rank_r(tc: TangentCoeffs, basis, r: int) -> LowRankFactor:
    """Best rank-r approximation of ``U C V^* + U X^* + Y V^*``."""
    U, V = basis
    Q1 = _range_basis(tc.X, V)
    Q2 = _range_basis(tc.Y, U)
    R1 = Q1.conj().T @ tc.X
    R2 = Q2.conj().T @ tc.Y
    k1, k2 = Q1.shape[1], Q2.shape[1]
    M = np.zeros((U.shape[1] + k2, V.shape[1] + k1), dtype=np.complex128)
    M[: U.shape[1], : V.shape[1]] = tc.C
    M[: U.shape[1], V.shape[1]:] = R1.conj().T
    M[U.shape[1]:, : V.shape[1]] = R2
    Uc, s, Vch = np.linalg.svd(M, full_matrices=False)
    k = min(r, s.size)
    Un = np.hstack([U, Q2]) @ Uc[:, :k]
    Vn = np.hstack([V, Q1]) @ Vch.conj().T[:, :k]
    return _pad(Un, s[:k], Vn, r)


def dense_hard_threshold(Z, r: int) -> LowRankFactor:
    """Best rank-r approximation of ``Z`` by dense SVD; numerically zero singular values are reported as 0."""
    Z = np.asarray(Z, dtype=np.complex128)
    if Z.size > DENSE_MAX_CELLS:
        raise OracleScaleError(f"{Z.shape} matrix too large for a dense SVD")
    Uz, s, Vzh = np.linalg.svd(Z, full_matrices=False)
    if s.size and s[0] > 0:
        s = np.where(s <= max(Z.shape) * np.finfo(float).eps * s[0], 0.0, s)
    else:
        s = np.zeros_like(s)
    k = min(r, s.size)
    return _pad(Uz[:, :k], s[:k], Vzh.conj().T[:, :k], r)


def _partial_svd(z, r, shape: HankelLift, tol, max_iters, oversample, seed):
    n1, n2 = shape.n1, shape.n2
    if not 1 <= r <= min(n1, n2):
        raise ValueError(f"rank {r} must lie in [1, min(n1, n2) = {min(n1, n2)}]")
    zf = shape.signal_fft(z)
    if not np.any(zf):
        return LowRankFactor.zeros(n1, n2, r), np.zeros(r), 0
    rng = np.random.default_rng(seed)
    b = min(r + oversample, n2)
    block = rng.standard_normal((n2, b)) + 1j * rng.standard_normal((n2, b))
    block, _ = np.linalg.qr(block)
    Vs, AVs = [block], [shape.matvec(z, block, zf)]
    # running QR of the image blocks, H V_all = Qa Ra, so Rayleigh-Ritz is an s x s SVD
    Qa, Ra = np.linalg.qr(AVs[0])
    best, best_res = None, np.inf
    for it in range(1, max_iters + 1):
        Vall = np.hstack(Vs)
        Ur_small, s, Wh = np.linalg.svd(Ra, full_matrices=False)
        Ur, sr, Vr = Qa @ Ur_small[:, :r], s[:r], Vall @ Wh.conj().T[:, :r]
        resid = np.linalg.norm(shape.rmatvec(z, Ur, zf) - Vr * sr, axis=0)
        worst = float(resid.max() / s[0]) if s[0] > 0 else 0.0
        if worst < best_res:
            best, best_res = LowRankFactor(Ur, sr.copy(), Vr), worst
        if worst <= tol or Vall.shape[1] >= n2:
            return best, s, it
        # next Krylov block: A^* A applied to the newest block
        nxt = shape.rmatvec(z, AVs[-1], zf)
        nxt = nxt[:, : min(b, n2 - Vall.shape[1])]
        scale = max(np.linalg.norm(nxt), 1e-300)
        nxt = nxt - Vall @ _hmul(Vall, nxt)
        Q, R, _ = scipy.linalg.qr(nxt, mode="economic", pivoting=True)
        keep = int(np.count_nonzero(np.abs(np.diag(R)) > 1e-12 * scale))
        if keep == 0:
            # invariant subspace reached; continue from a fresh random direction
            Q = rng.standard_normal((n2, 1)) + 1j * rng.standard_normal((n2, 1))
            keep = 1
        Q = _orthonormalize_against(Q[:, :keep], Vall)
        Vs.append(Q)
        W = shape.matvec(z, Q, zf)
        AVs.append(W)
        coef = _hmul(Qa, W)
        W = W - Qa @ coef
        c2 = _hmul(Qa, W)
        W, coef = W - Qa @ c2, coef + c2
        room = n1 - Qa.shape[1]
        if room >= W.shape[1]:
            Qw, Rw = np.linalg.qr(W)
        else:
            Qw = scipy.linalg.qr(W, mode="economic", pivoting=True)[0][:, :room]
            Rw = Qw.conj().T @ W
        Qa = np.hstack([Qa, Qw])
        Ra = np.block([[Ra, coef], [np.zeros((Rw.shape[0], Ra.shape[1])), Rw]])
    raise PartialSVDError(
        f"partial SVD residual {best_res:.3e} > {tol:.1e} after {max_iters} iterations",
        best=best, residual=best_res,
    )


def partial_svd_hankel(z, r: int, shape: HankelLift, tol: float = 1e-10, max_iters: int = 50,
                       oversample: int = 10, seed: int = 0) -> LowRankFactor:
    """Dominant rank-r SVD of ``H(z)`` from Hankel matrix-vector products only.

    Block Krylov iteration on ``H^* H`` with Rayleigh-Ritz extraction.  The
    Ritz pairs satisfy ``H v_k = s_k u_k`` exactly, so convergence is judged on
    the other residual, ``||H^* u_k - s_k v_k|| <= tol * s_1`` for all ``k <= r``.

    Raises:
        PartialSVDError: no convergence within ``max_iters`` blocks; the best
            iterate is attached to the exception.
    """
    factor, _, _ = _partial_svd(z, r, shape, tol, max_iters, oversample, seed)
    return factor
