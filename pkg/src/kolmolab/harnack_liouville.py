"""Closed-form solutions of ``Ku = 0``, the paraboloid Harnack check and decay at ``t -> -inf``.

The time integrals needed by the families all reduce to

    psi(t; X) = int_0^t tr(A e^{tau B^T} X e^{tau B}) dtau
              = tr(X M(t))       for t > 0,
              = -tr(X C(|t|))    for t < 0,

which the covariance bundle already provides.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .constants import ConstantsReport
from .covariance import covariance_batch
from .errors import (CertificateError, ConsistencyError, DomainError, InvalidInputError,
                     PreconditionError)
from .geometry import analytic_c, paraboloid_q
from .kernel import as_point, log_fundamental_solution_batch, residual_K, uniform_ball
from .matrix_core import PSD_TOL, OperatorSpec, mat_exp

CERT_POINTS = 20
CERT_STEP = 1e-3
CERT_TOL = 1e-5
CERT_SEED = 20240229


class Family(enum.Enum):
    CONSTANT = "Constant"
    LINEAR = "Linear"
    QUADRATIC = "Quadratic"
    EXPONENTIAL = "Exponential"
    FUNDAMENTAL_POLE = "FundamentalPole"
    SUM = "Sum"


def psi(spec: OperatorSpec, t, X) -> np.ndarray:
    """``int_0^t tr(A e^{tau B^T} X e^{tau B}) dtau`` for an array of times."""
    t = np.asarray(t, dtype=float)
    flat = t.ravel()
    out = np.zeros(flat.shape)
    nz = flat != 0
    if nz.any():
        gaps, inv = np.unique(np.abs(flat[nz]), return_inverse=True)
        b = covariance_batch(spec, gaps)
        trM = np.einsum("ij,kji->k", X, b.M)
        trC = np.einsum("ij,kji->k", X, b.C)
        out[nz] = np.where(flat[nz] > 0, trM[inv], -trC[inv])
    return out.reshape(t.shape)


def _drifted(spec, t, c0):
    """``e^{t B^T} c0`` for each time."""
    t = np.asarray(t, dtype=float)
    return mat_exp(spec.B.T, t) @ c0


@dataclass(frozen=True, eq=False)
class SolutionHandle:
    """A closed-form solution of ``Ku = 0`` with its residual certificate."""

    spec: OperatorSpec
    family: Family
    params: dict
    domain_floor: float = -np.inf
    nonnegative: bool = False
    infimum: float | None = None
    certificate: float = field(default=np.nan, compare=False)
    children: tuple = ()
    weights: tuple = ()

    @property
    def ancient(self) -> bool:
        return self.domain_floor == -np.inf

    def __call__(self, x, t) -> np.ndarray:
        x, t = self._prep(x, t)
        return self._eval(x, t)

    def _prep(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n = max(x.shape[0], t.shape[0])
        x = np.broadcast_to(x, (n, self.spec.N))
        t = np.broadcast_to(t, (n,))
        if np.any(t <= self.domain_floor):
            raise DomainError(f"{self.family.value} solution is undefined for t <= {self.domain_floor}")
        return x, t

    def log_value(self, x, t) -> np.ndarray:
        """``log u`` for positive families, evaluated without overflow."""
        x, t = self._prep(x, t)
        return self._log(x, t)

    def _log(self, x, t):
        f, p = self.family, self.params
        if f is Family.EXPONENTIAL:
            return np.einsum("ki,ki->k", _drifted(self.spec, t, p["c0"]), x) + p["g0"] + psi(self.spec, t, p["X"])
        if f is Family.FUNDAMENTAL_POLE:
            pole = p["pole"]
            s = t - pole.t
            return log_fundamental_solution_batch(self.spec, x, t, pole.x, pole.t) - s * np.trace(self.spec.B)
        if f is Family.SUM:
            logs = np.stack([c._log(x, t) for c in self.children])
            return logsumexp(logs, axis=0, b=np.asarray(self.weights)[:, None])
        with np.errstate(divide="ignore"):
            return np.log(self._eval(x, t))

    def _eval(self, x, t):
        f, p = self.family, self.params
        if f is Family.CONSTANT:
            return np.full(t.shape, p["c"])
        if f is Family.LINEAR:
            return np.einsum("ki,ki->k", _drifted(self.spec, t, p["c0"]), x)
        if f is Family.QUADRATIC:
            Et = mat_exp(self.spec.B, t)
            y = np.einsum("kij,kj->ki", Et, x)
            return np.einsum("ki,ij,kj->k", y, p["S0"], y) + p["m0"] + 2.0 * psi(self.spec, t, p["S0"])
        if f is Family.SUM:
            return sum(w * c._eval(x, t) for w, c in zip(self.weights, self.children))
        return np.exp(self._log(x, t))


def _vector(params, key, N):
    v = np.asarray(params[key], dtype=float).reshape(-1)
    if v.shape != (N,) or not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{key} must be a finite vector of length {N}")
    return v


def _certify(handle: SolutionHandle) -> float:
    """Worst relative ``|Ku|`` over random admissible points.

    The residual at steps ``h`` and ``h/2`` is Richardson-combined so that the
    O(h^2) truncation error of the differences does not mask exactness.
    """
    rng = np.random.default_rng(CERT_SEED)
    N = handle.spec.N
    xs = rng.standard_normal((CERT_POINTS, N))
    if handle.ancient:
        ts = rng.uniform(-2.0, 2.0, CERT_POINTS)
    else:
        ts = handle.domain_floor + rng.uniform(1.0, 3.0, CERT_POINTS)
    worst = 0.0
    for x, t in zip(xs, ts):
        r1 = residual_K(handle.spec, handle, (x, t), CERT_STEP)
        r2 = residual_K(handle.spec, handle, (x, t), 0.5 * CERT_STEP)
        res = (4.0 * r2 - r1) / 3.0
        scale = max(1.0, abs(float(handle(x[None], t)[0])))
        worst = max(worst, abs(res) / scale)
    return worst


def make_solution(spec: OperatorSpec, family, params: dict | None = None, *, certify: bool = True) -> SolutionHandle:
    """Build a solution handle and run its residual certificate.

    Parameters per family: ``Constant`` {c}; ``Linear`` {c0}; ``Quadratic``
    {S0, m0}; ``Exponential`` {c0, g0}; ``FundamentalPole`` {pole: (x, t)};
    ``Sum`` {children: handles, weights}.
    """
    family = Family(family) if not isinstance(family, Family) else family
    params = dict(params or {})
    N = spec.N
    kw = {}
    if family is Family.CONSTANT:
        c = float(params.get("c", 1.0))
        params = {"c": c}
        kw = dict(nonnegative=c >= 0, infimum=c)
    elif family is Family.LINEAR:
        params = {"c0": _vector(params, "c0", N)}
    elif family is Family.QUADRATIC:
        S0 = np.asarray(params["S0"], dtype=float).reshape(N, N)
        if np.max(np.abs(S0 - S0.T)) > 1e-12 or np.linalg.eigvalsh(S0)[0] < -PSD_TOL:
            raise InvalidInputError("S0 must be symmetric positive semidefinite")
        params = {"S0": 0.5 * (S0 + S0.T), "m0": float(params.get("m0", 0.0))}
    elif family is Family.EXPONENTIAL:
        c0 = _vector(params, "c0", N)
        params = {"c0": c0, "g0": float(params.get("g0", 0.0)), "X": np.outer(c0, c0)}
        kw = dict(nonnegative=True, infimum=0.0)
    elif family is Family.FUNDAMENTAL_POLE:
        pole = as_point(params["pole"], N)
        params = {"pole": pole}
        kw = dict(nonnegative=True, domain_floor=pole.t)
    else:
        children = tuple(params["children"])
        weights = tuple(float(w) for w in params.get("weights", [1.0] * len(children)))
        if not children or len(weights) != len(children):
            raise InvalidInputError("Sum needs children and one weight per child")
        if any(c.spec != spec for c in children):
            raise InvalidInputError("Sum children must share the operator")
        nonneg = all(c.nonnegative for c in children) and all(w >= 0 for w in weights)
        floor = max(c.domain_floor for c in children)
        inf = None
        if nonneg and all(c.infimum is not None for c in children):
            inf = float(sum(w * c.infimum for w, c in zip(weights, children)))
        params = {}
        kw = dict(nonnegative=nonneg, infimum=inf, domain_floor=floor, children=children, weights=weights)
    handle = SolutionHandle(spec, family, params, **kw)
    if certify:
        worst = _certify(handle)
        if not worst <= CERT_TOL:
            raise CertificateError(f"{family.value} solution fails the residual certificate",
                                   {"worst_residual": worst, "tol": CERT_TOL})
        object.__setattr__(handle, "certificate", worst)
    return handle


def estimate_c_star(constants: ConstantsReport, c_from_lemma61: float) -> float:
    """``c* = c / (theta_bar 2^{p/2} sqrt(c_d))``."""
    c = float(c_from_lemma61)
    if not (c > 0 and constants.theta_bar > 0 and constants.c_d > 0):
        raise InvalidInputError("c, theta_bar and c_d must be positive")
    c_star = c / (constants.theta_bar * 2.0 ** (constants.p / 2.0) * np.sqrt(constants.c_d))
    if not 0 < c_star <= 1:
        raise ConsistencyError("c* must lie in (0, 1]", {"c_star": c_star})
    return float(c_star)


@dataclass(frozen=True)
class HarnackReport:
    samples: int
    violations: int
    worst_log_ratio: float
    bound_log: float
    empirical_best: float
    c_star: float
    depth: float
    seed: int

    @property
    def worst_ratio(self) -> float:
        return float(np.exp(self.worst_log_ratio))


def sample_paraboloid(spec: OperatorSpec, z0, n: int, rng, *, depth: float = 1e3):
    """Points of the paraboloid with ``t0 - t`` log-uniform in ``[1, depth]``."""
    z0 = as_point(z0, spec.N)
    s = np.exp(rng.uniform(0.0, np.log(depth), n))
    b = covariance_batch(spec, s)
    ball = uniform_ball(rng, n, spec.N)
    x = b.Einv @ z0.x + np.einsum("kij,kj->ki", b.cholM, ball)
    t = z0.t - s
    keep = paraboloid_q(spec, z0, x, t) < 1.0
    return x[keep], t[keep]


def verify_harnack(spec: OperatorSpec, constants: ConstantsReport, u: SolutionHandle, z0,
                   sample_count: int = 1000, seed: int = 0, *, c_star: float | None = None,
                   depth: float = 1e3) -> HarnackReport:
    """Count violations of ``u(z) <= u(z0) / c*`` over paraboloid samples."""
    if not u.nonnegative:
        raise PreconditionError("Harnack check needs a nonnegative solution", reason="sign")
    z0 = as_point(z0, spec.N)
    if u.domain_floor > z0.t - depth:
        raise PreconditionError("solution is not defined over the sampled depth", reason="domain")
    if c_star is None:
        c_star = estimate_c_star(constants, analytic_c(spec, constants)["c"])
    x, t = sample_paraboloid(spec, z0, sample_count, np.random.default_rng(seed), depth=depth)
    if x.shape[0] == 0:
        raise DomainError("no paraboloid points were sampled")
    log_u0 = float(u.log_value(z0.x[None], z0.t)[0])
    log_ratio = u.log_value(x, t) - log_u0
    bound = -np.log(c_star)
    worst = float(np.max(log_ratio))
    return HarnackReport(int(x.shape[0]), int(np.sum(log_ratio > bound)), worst, float(bound),
                         float(np.exp(-worst)), float(c_star), float(depth), seed)


def default_t_sequence() -> np.ndarray:
    return -(10.0 ** (np.arange(13) / 2.0))


@dataclass(frozen=True)
class LiouvilleReport:
    passed: bool
    infimum: float
    t: np.ndarray
    gaps: np.ndarray
    monotone: np.ndarray
    final_ok: np.ndarray


def verify_liouville_decay(spec: OperatorSpec, u: SolutionHandle, x_list, t_sequence=None,
                           *, tail: int = 6) -> LiouvilleReport:
    """Check that ``u(x, t)`` approaches its infimum as ``t`` decreases.

    For each ``x`` the gaps ``|u(x, t_k) - inf|`` must be nonincreasing over
    the last ``tail`` times and the final gap must be at most
    ``1e-3 * (u(x, t_0) - inf + 1)``.
    """
    if not u.ancient:
        raise PreconditionError("decay check needs an ancient solution", reason="domain")
    if u.infimum is None:
        raise PreconditionError("no infimum is declared for this solution", reason="infimum")
    t = default_t_sequence() if t_sequence is None else np.asarray(t_sequence, dtype=float)
    if np.any(np.diff(t) >= 0):
        raise InvalidInputError("t_sequence must be strictly decreasing")
    xs = np.atleast_2d(np.asarray(x_list, dtype=float))
    gaps = np.empty((xs.shape[0], t.size))
    for i, x in enumerate(xs):
        gaps[i] = np.abs(u(np.broadcast_to(x, (t.size, spec.N)), t) - u.infimum)
    last = gaps[:, -tail:]
    monotone = np.all(np.diff(last, axis=1) <= 1e-15 * (1.0 + last[:, :-1]), axis=1)
    final_ok = gaps[:, -1] <= 1e-3 * (gaps[:, 0] + 1.0)
    return LiouvilleReport(bool(np.all(monotone & final_ok)), float(u.infimum), t, gaps, monotone, final_ok)
