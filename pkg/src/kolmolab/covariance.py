"""Covariance C(s), its conjugate M(s), determinants and onion volumes.

With ``E(s) = exp(-sB)``,

    C(s) = int_0^s E(u) A E(u)^T du,
    M(s) = E(-s) C(s) E(-s)^T = int_0^s exp(uB) A exp(uB^T) du.

Both come from a single exponential of the 2N x 2N matrix
``H = [[B, A], [0, -B^T]]``: the blocks of ``exp(sH)`` are
``F11 = exp(sB)``, ``F12 = exp(sB) C(s)`` and ``F22 = exp(-sB^T)``, so that
``C = F11^{-1} F12`` and ``M = F12 F22^{-1}``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NotPositiveDefiniteError
from .matrix_core import OperatorSpec, mat_exp
from .quadrature import adaptive_simpson

LOG_4PI = float(np.log(4.0 * np.pi))


def _sym(X):
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def _block_generator(spec: OperatorSpec) -> np.ndarray:
    N = spec.N
    H = np.zeros((2 * N, 2 * N))
    H[:N, :N] = spec.B
    H[:N, N:] = spec.A
    H[N:, N:] = -spec.B.T
    return H


def _blocks(spec: OperatorSpec, s):
    N = spec.N
    F = mat_exp(_block_generator(spec), s)
    F11 = F[..., :N, :N]
    F12 = F[..., :N, N:]
    F22 = F[..., N:, N:]
    # F11 and F12 pass through the same squaring chain, so their scale errors
    # are correlated; dividing by F11 (rather than multiplying by F22^T)
    # cancels them, which matters for oscillatory B at large s.
    C = _sym(np.linalg.solve(F11, F12))
    M = _sym(np.swapaxes(np.linalg.solve(np.swapaxes(F22, -1, -2), np.swapaxes(F12, -1, -2)), -1, -2))
    E = np.swapaxes(F22, -1, -2)
    return E, F11, C, M


def covariance_matrices(spec: OperatorSpec, s):
    """``(E, Einv, C, M)`` at gap(s) ``s`` without factorising anything.

    Useful when ``C`` is too ill-conditioned for a Cholesky factor but its
    entries are still wanted, e.g. at very small gaps for large ``n0``.
    """
    s = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise InvalidInputError("time gaps must be positive and finite")
    return _blocks(spec, s)


def _cholesky(X, s):
    try:
        return np.linalg.cholesky(X)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(s, "Cholesky factorisation failed") from exc


def _frozen(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True, eq=False)
class CovarianceBundle:
    """Snapshot of every covariance object at one time gap ``s``."""

    s: float
    E: np.ndarray
    Einv: np.ndarray
    C: np.ndarray
    M: np.ndarray
    cholC: np.ndarray
    cholM: np.ndarray
    logD: float

    @property
    def N(self) -> int:
        return self.C.shape[0]

    def _whiten(self, L, v):
        v = np.asarray(v, dtype=float)
        y = scipy.linalg.solve_triangular(L, v.reshape(-1, self.N).T, lower=True)
        return y.T.reshape(v.shape)

    def quad_C(self, v) -> np.ndarray:
        """``<C(s)^{-1} v, v>`` for a vector or a stack of vectors (last axis)."""
        y = self._whiten(self.cholC, v)
        return np.sum(y * y, axis=-1)

    def quad_M(self, v) -> np.ndarray:
        y = self._whiten(self.cholM, v)
        return np.sum(y * y, axis=-1)

    def solve_M(self, v) -> np.ndarray:
        """``M(s)^{-1} v`` along the last axis."""
        v = np.asarray(v, dtype=float)
        z = scipy.linalg.cho_solve((self.cholM, True), v.reshape(-1, self.N).T)
        return z.T.reshape(v.shape)


@lru_cache(maxsize=4096)
def _bundle_cached(spec: OperatorSpec, s: float) -> CovarianceBundle:
    E, Einv, C, M = _blocks(spec, s)
    cholC = _cholesky(C, s)
    cholM = _cholesky(M, s)
    logD = float(2.0 * np.sum(np.log(np.diag(cholC))))
    E, Einv, C, M = (np.array(a) for a in (E, Einv, C, M))
    _frozen(E, Einv, C, M, cholC, cholM)
    return CovarianceBundle(s, E, Einv, C, M, cholC, cholM, logD)


def covariance_bundle(spec: OperatorSpec, s: float) -> CovarianceBundle:
    """Exact covariance data at gap ``s > 0`` (memoised per ``(spec, s)``)."""
    s = float(s)
    if not np.isfinite(s) or s <= 0:
        raise NotPositiveDefiniteError(s, "time gap must be positive")
    return _bundle_cached(spec, s)


@dataclass(frozen=True)
class CovarianceBatch:
    """Stacked covariance data for an array of gaps, used by the samplers."""

    s: np.ndarray
    E: np.ndarray
    Einv: np.ndarray
    C: np.ndarray
    M: np.ndarray
    cholC: np.ndarray
    cholM: np.ndarray
    logD: np.ndarray


def covariance_batch(spec: OperatorSpec, s) -> CovarianceBatch:
    s = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise NotPositiveDefiniteError(float(np.min(s)), "time gaps must be positive")
    E, Einv, C, M = _blocks(spec, s)
    cholC = _cholesky(C, "batch")
    cholM = _cholesky(M, "batch")
    logD = 2.0 * np.sum(np.log(np.diagonal(cholC, axis1=-2, axis2=-1)), axis=-1)
    return CovarianceBatch(s, E, Einv, C, M, cholC, cholM, logD)


def covariance_quadrature_oracle(spec: OperatorSpec, s: float, tol: float = 1e-12) -> np.ndarray:
    """C(s) by adaptive Simpson on ``u -> E(u) A E(u)^T``.

    Independent of the block method: exponentials come from
    :func:`scipy.linalg.expm` and the integral is discretised directly.
    """
    if s <= 0:
        raise InvalidInputError("s must be positive")
    if tol < 1e-13:
        raise InvalidInputError("tol must be at least 1e-13")
    B = spec.B
    A = spec.A

    def integrand(u):
        E = scipy.linalg.expm(-u[:, None, None] * B)
        return E @ A @ np.swapaxes(E, -1, -2)

    # start with enough panels to resolve a few oscillation periods
    panels = int(np.ceil(s * max(1.0, np.abs(B).sum(axis=1).max()))) + 4
    C = adaptive_simpson(integrand, 0.0, float(s), tol, initial_panels=min(panels, 100000))
    return _sym(C)


@dataclass(frozen=True)
class Volume:
    D: float
    Vp: float
    logVp: float


def log_volume(N: int, p: int, s, logD):
    """``log V_p(s) = 0.5 * ((N+p) log 4pi + p log s + log D(s))``."""
    return 0.5 * ((N + p) * LOG_4PI + p * np.log(s) + logD)


def det_and_volume(bundle: CovarianceBundle, p: int) -> Volume:
    logVp = float(log_volume(bundle.N, p, bundle.s, bundle.logD))
    return Volume(D=float(np.exp(bundle.logD)), Vp=float(np.exp(logVp)), logVp=logVp)


def log_det_series(spec: OperatorSpec, s) -> np.ndarray:
    """``log D(s)`` for an array of gaps."""
    return covariance_batch(spec, np.atleast_1d(s)).logD
