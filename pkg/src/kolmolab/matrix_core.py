"""Dense-matrix primitives and structural classification of the pair (A, B).

The operator under study is ``L = tr(A D^2) + <Bx, D>`` on R^N with ``A``
symmetric positive semidefinite.  Everything downstream is a pure function of
an :class:`OperatorSpec`.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError, NumericError

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10
SPECTRAL_TOL = 1e-9

# Pade(13) coefficients and the matching scaling threshold (Higham 2005).
_PADE13 = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """The pair (A, B) defining the Ornstein-Uhlenbeck operator.

    Arrays are copied and frozen on construction; equality and hashing use
    the exact matrix entries so specs can key caches.
    """

    A: np.ndarray
    B: np.ndarray
    name: str = "unnamed"
    _key: bytes = field(init=False, repr=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float, copy=True)
        B = np.array(self.B, dtype=float, copy=True)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
            raise InvalidInputError(f"A must be a non-empty square matrix, got shape {A.shape}")
        if B.shape != A.shape:
            raise InvalidInputError(f"B has shape {B.shape}, expected {A.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise InvalidInputError("A and B must have finite entries")
        if np.max(np.abs(A - A.T)) > SYMMETRY_TOL:
            raise InvalidInputError("A is not symmetric")
        if np.linalg.eigvalsh(A)[0] < -PSD_TOL:
            raise InvalidInputError("A is not positive semidefinite")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        digest = hashlib.sha1(A.tobytes() + b"|" + B.tobytes()).digest()
        object.__setattr__(self, "_key", digest)

    @property
    def N(self) -> int:
        return self.A.shape[0]

    def __eq__(self, other):
        if not isinstance(other, OperatorSpec):
            return NotImplemented
        return self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def negated(self) -> "OperatorSpec":
        """The pair (A, -B); swaps the roles of C(t) and E(-t)C(t)E(-t)^T."""
        return OperatorSpec(self.A, -self.B, name=f"{self.name}[-B]")


class SpectralClass(str, enum.Enum):
    ALL_IMAGINARY = "AllImaginary"
    ALL_NONPOSITIVE_REAL = "AllNonpositiveReal"
    HAS_POSITIVE_REAL = "HasPositiveReal"


class KalmanResult(NamedTuple):
    hypoelliptic: bool
    n0: int | None


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: tuple
    spectral_class: SpectralClass
    liouville_Linf: bool
    kalman_index: int | None
    hypoelliptic: bool


def mat_exp(M, t=1.0) -> np.ndarray:
    """Return ``exp(t M)`` by scaling and squaring with a degree-13 Pade approximant.

    ``M`` may be a single ``(n, n)`` matrix or a stack ``(..., n, n)``; ``t``
    may be a scalar or an array broadcast against the stack's leading axes.
    """
    M = np.asarray(M, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(M)) or not np.all(np.isfinite(t_arr)):
        raise InvalidInputError("mat_exp requires finite entries")
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise InvalidInputError(f"mat_exp requires square matrices, got shape {M.shape}")
    X = t_arr[..., None, None] * M
    return _expm_pade13(X)


def _expm_pade13(X: np.ndarray) -> np.ndarray:
    n = X.shape[-1]
    lead = X.shape[:-2]
    X = X.reshape((-1, n, n))
    norm1 = np.abs(X).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        squarings = np.ceil(np.log2(norm1 / _THETA13))
    squarings = np.where(np.isfinite(squarings), np.maximum(squarings, 0), 0).astype(int)
    A = X / np.ldexp(1.0, squarings)[:, None, None]
    b = _PADE13
    ident = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    # Track Z = R - I: squaring (I + Z)^2 = I + (2Z + Z^2) keeps the small
    # deviation from the identity accurate instead of letting 1 - ulp on the
    # diagonal compound over many squarings.
    Z = np.linalg.solve(V - U, 2.0 * U)
    top = int(squarings.max()) if squarings.size else 0
    for k in range(top):
        active = squarings > k
        if active.all():
            Z = 2.0 * Z + Z @ Z
        else:
            Z[active] = 2.0 * Z[active] + Z[active] @ Z[active]
    return (Z + ident).reshape(lead + (n, n))


def sqrtm_psd(A) -> np.ndarray:
    """Symmetric PSD square root; eigenvalues below roundoff are clamped to 0."""
    A = np.asarray(A, dtype=float)
    w, Q = np.linalg.eigh(0.5 * (A + A.T))
    floor = len(w) * np.finfo(float).eps * max(float(np.abs(w).max(initial=0.0)), 0.0)
    w = np.where(w > floor, w, 0.0)
    return (Q * np.sqrt(w)) @ Q.T


def kalman_index(spec: OperatorSpec) -> KalmanResult:
    """Smallest k with ``[sqrt(A), B sqrt(A), ..., B^k sqrt(A)]`` of full rank N."""
    N = spec.N
    root = sqrtm_psd(spec.A)
    block = root
    columns = [root]
    for k in range(N):
        chain = np.hstack(columns)
        sv = np.linalg.svd(chain, compute_uv=False)
        tol = max(chain.shape) * (sv[0] if sv.size else 0.0) * 1e-12
        rank = int(np.sum(sv > tol)) if sv.size and sv[0] > 0 else 0
        if rank == N:
            return KalmanResult(True, k)
        block = spec.B @ block
        columns.append(block)
    return KalmanResult(False, None)


def _cluster_means(eigs: np.ndarray, radius: float) -> np.ndarray:
    """Replace each eigenvalue by the mean of its cluster.

    A defective eigenvalue of multiplicity m is perturbed by roundoff to a ring
    of radius ~eps^(1/m); the cluster mean is well conditioned.
    """
    n = len(eigs)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(eigs[i] - eigs[j]) <= radius:
                parent[find(i)] = find(j)
    roots = np.array([find(i) for i in range(n)])
    out = np.empty_like(eigs)
    for r in np.unique(roots):
        members = roots == r
        out[members] = eigs[members].mean()
    return out


def classify_spectrum(spec: OperatorSpec) -> SpectrumReport:
    try:
        eigs = np.linalg.eigvals(spec.B)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericError(f"eigenvalue solver failed for B={spec.B.tolist()}: {exc}") from exc
    scale = max(1.0, float(np.abs(spec.B).max()))
    radius = 10.0 * np.finfo(float).eps ** (1.0 / spec.N) * scale
    re = _cluster_means(eigs, radius).real
    if np.any(re > SPECTRAL_TOL):
        cls = SpectralClass.HAS_POSITIVE_REAL
    elif np.all(np.abs(re) <= SPECTRAL_TOL):
        cls = SpectralClass.ALL_IMAGINARY
    else:
        cls = SpectralClass.ALL_NONPOSITIVE_REAL
    kal = kalman_index(spec)
    order = np.lexsort((eigs.imag, eigs.real))
    return SpectrumReport(
        eigenvalues=tuple(complex(e) for e in eigs[order]),
        spectral_class=cls,
        liouville_Linf=cls is not SpectralClass.HAS_POSITIVE_REAL,
        kalman_index=kal.n0,
        hypoelliptic=kal.hypoelliptic,
    )


def is_all_imaginary(spec: OperatorSpec) -> bool:
    return classify_spectrum(spec).spectral_class is SpectralClass.ALL_IMAGINARY


def lambda_min_spd(M) -> np.ndarray:
    """Smallest eigenvalue of SPD matrices via ``1 / lambda_max(M^{-1})``.

    Graded matrices such as the small-time Gramians have entries of wildly
    different sizes; going through the Cholesky factor keeps the small
    eigenvalue accurate where a direct symmetric eigensolve would lose it.
    Works on stacks.
    """
    M = np.asarray(M, dtype=float)
    L = np.linalg.cholesky(M)
    n = M.shape[-1]
    eye = np.broadcast_to(np.eye(n), L.shape)
    Linv = np.linalg.solve(L, eye)
    inv = np.swapaxes(Linv, -1, -2) @ Linv
    return 1.0 / np.linalg.eigvalsh(0.5 * (inv + np.swapaxes(inv, -1, -2)))[..., -1]
