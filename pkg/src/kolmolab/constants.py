"""Empirical estimates of the large- and small-time constants, and the theta chain.

None of these are certified bounds: each is the extreme value of a ratio
over a finite grid, i.e. an empirical envelope.  The grids used are stored
in the report so any number can be reproduced.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .covariance import covariance_batch
from .errors import InvalidInputError, NumericError, PreconditionError, PropertyViolation
from .matrix_core import OperatorSpec, SpectralClass, classify_spectrum, lambda_min_spd
from .quadrature import maximize_scalar

POSITIVITY_FLOOR = 1e-12
DOUBLING_FLOOR = 1.0 + 1e-12
SLOPE_TOL = 0.1


def log_grid(lo: float, hi: float, points: int) -> np.ndarray:
    if not (0 < lo < hi) or points < 2:
        raise InvalidInputError(f"bad log grid [{lo}, {hi}] with {points} points")
    return np.logspace(np.log10(lo), np.log10(hi), points)


def default_large_grid(t_max: float = 1e6, points: int = 200) -> np.ndarray:
    return log_grid(1.0, t_max, points)


def default_small_grid(T0: float = 1.0, points: int = 200) -> np.ndarray:
    return log_grid(1e-6, T0, points)


def default_mu_grid(points: int = 64) -> np.ndarray:
    return np.logspace(-20, 0, points, base=2.0)


def default_doubling_grid(points: int = 200) -> np.ndarray:
    # every evaluated gap (t and 2t) stays inside [1e-6, 1e6]
    return log_grid(1e-6, 5e5, points)


def _require_all_imaginary(spec: OperatorSpec, what: str):
    report = classify_spectrum(spec)
    if not report.hypoelliptic:
        raise PreconditionError(f"{what} requires a hypoelliptic spec", reason="not hypoelliptic")
    if report.spectral_class is not SpectralClass.ALL_IMAGINARY:
        raise PreconditionError(f"{what} requires sigma(B) on the imaginary axis, got {report.spectral_class.value}",
                                reason="spectrum")
    return report


def estimate_growth_constants(spec: OperatorSpec, t_grid) -> dict:
    """``c_-`` and ``c_+``: grid minima of ``lambda_min(C(t))/t`` and ``lambda_min(M(t))/t``."""
    _require_all_imaginary(spec, "growth constants")
    t = np.asarray(t_grid, dtype=float)
    if t.min() < 1.0:
        raise InvalidInputError("growth-constant grid must lie in t >= 1")
    batch = covariance_batch(spec, t)
    c_minus = float(np.min(lambda_min_spd(batch.C) / t))
    c_plus = float(np.min(lambda_min_spd(batch.M) / t))
    if min(c_minus, c_plus) <= POSITIVITY_FLOOR:
        raise PropertyViolation("growth constant estimate is not positive",
                                {"c_minus": c_minus, "c_plus": c_plus})
    return {"c_minus": c_minus, "c_plus": c_plus}


def estimate_doubling(spec: OperatorSpec, t_grid, p: int | None = None) -> dict:
    """``c_d = max D(2t)/D(t)`` over the grid (log space), and ``Q_p`` when ``p`` is given."""
    t = np.asarray(t_grid, dtype=float)
    logD = covariance_batch(spec, t).logD
    logD2 = covariance_batch(spec, 2.0 * t).logD
    c_d = max(float(np.exp(np.max(logD2 - logD))), DOUBLING_FLOOR)
    out = {"c_d": c_d}
    if p is not None:
        out["Q_p"] = q_p(p, c_d)
    return out


def q_p(p: int, c_d: float) -> float:
    return (p + np.log2(c_d)) / 2.0


def estimate_k0(spec: OperatorSpec, t_grid, mu_grid) -> float:
    """Grid minimum of ``mu * lambda_min(M(mu t)^{-1/2} M(t) M(mu t)^{-1/2})``."""
    _require_all_imaginary(spec, "k0 estimate")
    t = np.asarray(t_grid, dtype=float)
    mu = np.asarray(mu_grid, dtype=float)
    if np.any(mu <= 0) or np.any(mu > 1):
        raise InvalidInputError("mu grid must lie in (0, 1]")
    Mt = covariance_batch(spec, t).M
    tt, mm = np.meshgrid(t, mu, indexing="ij")
    Mmu = covariance_batch(spec, (tt * mm).ravel()).M
    try:
        L = np.linalg.cholesky(Mmu)
    except np.linalg.LinAlgError as exc:
        raise NumericError("Cholesky factorisation of M(mu t) failed") from exc
    big = np.repeat(Mt, len(mu), axis=0)
    X = np.linalg.solve(L, big)
    X = np.linalg.solve(L, np.swapaxes(X, -1, -2))
    X = 0.5 * (X + np.swapaxes(X, -1, -2))
    try:
        lam = lambda_min_spd(X)
    except np.linalg.LinAlgError as exc:
        raise NumericError("generalised eigenproblem for k0 lost definiteness") from exc
    return float(np.min(mm.ravel() * lam))


def _min_max_eig(M):
    lo = lambda_min_spd(M)
    hi = np.linalg.eigvalsh(M)[..., -1]
    return lo, hi


def small_time_slope(spec: OperatorSpec, lo: float = 1e-4, hi: float = 1e-2, points: int = 41) -> float:
    """Least-squares log-log slope of ``lambda_min(M(t))`` on ``[lo, hi]``."""
    t = log_grid(lo, hi, points)
    lam = lambda_min_spd(covariance_batch(spec, t).M)
    slope, _ = np.polyfit(np.log(t), np.log(lam), 1)
    return float(slope)


def small_time_constants(spec: OperatorSpec, T0: float, t_grid=None, *, strict: bool = True) -> dict:
    """``K(T0)`` and the check that ``lambda_min(M(t))`` behaves like ``t^(2 n0 + 1)``."""
    report = classify_spectrum(spec)
    if not report.hypoelliptic:
        raise PreconditionError("small-time constants require a hypoelliptic spec", reason="not hypoelliptic")
    n0 = report.kalman_index
    t = default_small_grid(T0) if t_grid is None else np.asarray(t_grid, dtype=float)
    if t.max() > T0 * (1 + 1e-12) or t.min() <= 0:
        raise InvalidInputError("small-time grid must lie in (0, T0]")
    lo, hi = _min_max_eig(covariance_batch(spec, t).M)
    K = float(np.max(np.maximum(t ** (2 * n0 + 1) / lo, hi / t)))
    K = max(K, 1.0)
    slope = small_time_slope(spec)
    ok = abs(slope - (2 * n0 + 1)) <= SLOPE_TOL
    if strict and not ok:
        raise PropertyViolation("small-time slope does not match 2 n0 + 1",
                                {"slope": slope, "expected": 2 * n0 + 1})
    return {"K_T0": K, "T0": float(T0), "n0": n0, "slope": slope, "n0_slope_check": ok}


def default_p(n0: int) -> int:
    """Smallest integer exceeding ``2 + 4 n0``."""
    return 4 * n0 + 3


def theta_inner_max(c_d: float, Q_p: float) -> tuple[float, float]:
    """Maximiser and maximum of ``s log(c_d^{1/(2Q_p)} (1/s - 1))`` on (0, 1/2]."""
    a = np.log(c_d) / (2.0 * Q_p)

    def f(s):
        return s * (a + np.log(1.0 / s - 1.0))

    return maximize_scalar(f, 1e-12, 0.5)


def compute_theta_chain(c_d: float, Q_p: float, k0: float, n0: int, p: int | None = None) -> dict:
    if p is None:
        p = default_p(n0)
    if p <= 2 + 4 * n0:
        raise InvalidInputError(f"p={p} must exceed 2 + 4 n0 = {2 + 4 * n0}")
    if k0 <= 0:
        raise InvalidInputError("k0 must be positive")
    _, inner = theta_inner_max(c_d, Q_p)
    log_theta = 0.5 + (2.0 * Q_p / k0) * inner
    theta = float(np.exp(log_theta))
    return {
        "p": int(p),
        "theta": theta,
        "theta_bar": 2.0 * theta,
        "r_theta_coefficient": theta * 2.0 ** (p / 2.0) * np.sqrt(c_d),
    }


@dataclass(frozen=True)
class ConstantsReport:
    model_name: str
    c_minus: float
    c_plus: float
    c_d: float
    Q_p: float
    k0: float
    n0: int
    K_T0: float
    T0: float
    p: int
    theta: float
    theta_bar: float
    r_theta_coefficient: float
    small_time_slope: float
    grids: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grids"] = {k: [float(x) for x in v] for k, v in self.grids.items()}
        return d


def compute_constants(spec: OperatorSpec, p: int | None = None, *, t_max: float = 1e6, t_points: int = 200,
                      mu_points: int = 64, T0: float = 1.0, small_points: int = 200,
                      doubling_points: int = 200) -> ConstantsReport:
    """Run the whole estimation chain with the default (or overridden) grids."""
    large = default_large_grid(t_max, t_points)
    mu = default_mu_grid(mu_points)
    small = default_small_grid(T0, small_points)
    doubling = default_doubling_grid(doubling_points)
    growth = estimate_growth_constants(spec, large)
    small_res = small_time_constants(spec, T0, small)
    n0 = small_res["n0"]
    if p is None:
        p = default_p(n0)
    dbl = estimate_doubling(spec, doubling, p)
    k0 = estimate_k0(spec, large, mu)
    chain = compute_theta_chain(dbl["c_d"], dbl["Q_p"], k0, n0, p)
    return ConstantsReport(
        model_name=spec.name,
        c_minus=growth["c_minus"],
        c_plus=growth["c_plus"],
        c_d=dbl["c_d"],
        Q_p=dbl["Q_p"],
        k0=k0,
        n0=n0,
        K_T0=small_res["K_T0"],
        T0=small_res["T0"],
        p=chain["p"],
        theta=chain["theta"],
        theta_bar=chain["theta_bar"],
        r_theta_coefficient=chain["r_theta_coefficient"],
        small_time_slope=small_res["slope"],
        grids={"large_t": large, "mu": mu, "small_t": small, "doubling_t": doubling},
    )
