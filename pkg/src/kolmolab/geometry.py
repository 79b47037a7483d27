"""Paraboloids, their sections, and the two onion lemmas checked by sampling.

The paraboloid with vertex ``z0`` is the set of ``(x, t)`` with ``t < t0`` and

    q(s) = <C(s)^{-1}(x0 - E(s)x), x0 - E(s)x> < 1,   s = t0 - t,

and its time slices are the sections ``Sigma_s(z0)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import ConstantsReport, log_grid
from .covariance import covariance_batch, covariance_bundle, det_and_volume
from .errors import InvalidInputError, PreconditionError, PropertyViolation
from .kernel import OnionDescriptor, as_point, kernel_values, omega, onion_geometry
from .matrix_core import OperatorSpec
from .quadrature import maximize_scalar

ENTRY_MARGIN = 1e-9
ENTRY_HORIZON = 1e6
ENTRY_POINTS = 400
HYPOTHESIS_TOL = 1e-12


def paraboloid_q(spec: OperatorSpec, z0, x, t) -> np.ndarray:
    """The paraboloid quadratic form; ``+inf`` where ``t >= t0``."""
    z0 = as_point(z0, spec.N)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    s = z0.t - np.atleast_1d(np.asarray(t, dtype=float))
    n = max(x.shape[0], s.shape[0])
    x = np.broadcast_to(x, (n, spec.N))
    s = np.broadcast_to(s, (n,))
    out = np.full(n, np.inf)
    live = s > 0
    if live.any():
        b = covariance_batch(spec, s[live])
        d = z0.x - np.einsum("kij,kj->ki", b.E, x[live])
        w = np.linalg.solve(b.cholC, d[..., None])[..., 0]
        out[live] = np.sum(w * w, axis=-1)
    return out


def in_paraboloid(spec: OperatorSpec, z0, x, t) -> np.ndarray:
    return paraboloid_q(spec, z0, x, t) < 1.0


def sigma_section(spec: OperatorSpec, z0, s: float):
    """``Sigma_s(z0)`` as an ellipsoid: ``(center, cholM)`` with unit radius."""
    z0 = as_point(z0, spec.N)
    b = covariance_bundle(spec, s)
    return b.Einv @ z0.x, b.cholM


def in_sigma(spec: OperatorSpec, z0, s: float, x) -> np.ndarray:
    """Membership in ``Sigma_s(z0)`` through the ellipsoid (``M^{-1}``) form."""
    center, L = sigma_section(spec, z0, s)
    y = np.atleast_2d(np.asarray(x, dtype=float)) - center
    w = np.linalg.solve(L, y.T).T
    return np.sum(w * w, axis=-1) < 1.0


@dataclass(frozen=True)
class ParaboloidResult:
    member: bool | None
    q: float | None
    T_entry: float | None
    found: bool
    horizon: float


def paraboloid_membership_and_entry(spec: OperatorSpec, z0, x, t_probe: float | None = None, *,
                                    horizon: float = ENTRY_HORIZON,
                                    points: int = ENTRY_POINTS) -> ParaboloidResult:
    """Membership at ``t_probe``, or the empirical entry time when it is absent.

    The entry time is the largest time ``T`` such that ``q < 1 - 1e-9`` at
    every grid time below it, with the grid running down to ``t0 - horizon``;
    the last crossing is then refined by bisection.  ``found`` is False when
    the point is still outside at the horizon.
    """
    z0 = as_point(z0, spec.N)
    x = np.asarray(x, dtype=float).reshape(spec.N)
    if t_probe is not None:
        q = float(paraboloid_q(spec, z0, x, t_probe)[0])
        return ParaboloidResult(q < 1.0, q, None, True, horizon)
    s = log_grid(1e-6, horizon, points)
    q = paraboloid_q(spec, z0, x, z0.t - s)
    inside = q < 1.0 - ENTRY_MARGIN
    if not inside[-1]:
        return ParaboloidResult(None, None, None, False, horizon)
    outside = np.flatnonzero(~inside)
    if outside.size == 0:
        return ParaboloidResult(None, None, z0.t - s[0], True, horizon)
    k = outside[-1]
    lo, hi = s[k], s[k + 1]
    for _ in range(60):
        mid = np.sqrt(lo * hi)
        if paraboloid_q(spec, z0, x, z0.t - mid)[0] < 1.0:
            hi = mid
        else:
            lo = mid
    return ParaboloidResult(None, None, float(z0.t - hi), True, horizon)


def _check_hypotheses(spec, z0, t, x):
    if t > z0.t - 1.0 + HYPOTHESIS_TOL:
        raise PreconditionError(f"need t <= t0 - 1, got t0 - t = {z0.t - t}", reason="t too recent")
    if not in_paraboloid(spec, z0, x, t)[0]:
        raise PreconditionError("x is not in the paraboloid section at time t", reason="x outside Sigma")


def _vp(spec, p, s):
    return det_and_volume(covariance_bundle(spec, s), p).Vp


def outer_radius(constants: ConstantsReport, Vp: float, theta: float) -> float:
    return theta * 2.0 ** (constants.p / 2.0) * np.sqrt(constants.c_d) * Vp


@dataclass(frozen=True)
class LemmaSetup:
    inner: OnionDescriptor
    outer: OnionDescriptor
    Vp: float
    r_outer: float


def lemma_setup(spec, constants, z0, t, x, theta) -> LemmaSetup:
    z0 = as_point(z0, spec.N)
    x = np.asarray(x, dtype=float).reshape(spec.N)
    _check_hypotheses(spec, z0, float(t), x)
    p = constants.p
    Vp = _vp(spec, p, z0.t - t)
    r_out = outer_radius(constants, Vp, theta)
    return LemmaSetup(onion_geometry(spec, (x, t), Vp, p), onion_geometry(spec, z0, r_out, p), Vp, r_out)


@dataclass(frozen=True)
class ContainmentReport:
    samples: int
    violations: int
    worst_margin: float
    r_inner: float
    r_outer: float
    theta: float
    seed: int


def onion_containment_check(spec: OperatorSpec, constants: ConstantsReport, z0, t: float, x,
                            sample_count: int = 10_000, seed: int = 0) -> ContainmentReport:
    """Sample the inner onion at ``(x, t)`` and test membership in the outer one at ``z0``."""
    if sample_count < 1:
        raise InvalidInputError("sample_count must be positive")
    setup = lemma_setup(spec, constants, z0, t, x, constants.theta)
    xs, ts = setup.inner.sample(sample_count, np.random.default_rng(seed))
    margin = setup.outer.margin(xs, ts)
    return ContainmentReport(sample_count, int(np.sum(margin <= 0)), float(margin.min()),
                             setup.Vp, setup.r_outer, constants.theta, seed)


def _max_s_power_log(a: float, c: float, b: float) -> float:
    """``max_{0<s<1} s^a (log(b/s))^c`` for ``a > 0``, ``b >= 1``, found in log s."""
    if a <= 0:
        raise InvalidInputError("exponent must be positive")
    logb = np.log(b)

    def f(v):  # v = log s
        return np.exp(a * v + c * np.log(logb - v)) if logb - v > 0 else 0.0

    _, val = maximize_scalar(f, -700.0 / max(a, 1e-3), 0.0, xatol=1e-12)
    return max(val, f(0.0))


def analytic_c(spec: OperatorSpec, constants: ConstantsReport) -> dict:
    """Assemble the kernel-ratio lower bound from the estimated constants.

    Every ingredient is an empirical grid estimate, so the result is
    empirical as well.
    """
    p, n0, Q, c_d = constants.p, constants.n0, constants.Q_p, constants.c_d
    b = c_d ** (1.0 / (2.0 * Q))
    Mp = _max_s_power_log((p - 2) / 2.0, (p + 2) / 2.0, b)
    Mp2 = _max_s_power_log((p - 2 - 4 * n0) / 2.0, (p + 2) / 2.0, b)
    lam_A = float(np.linalg.eigvalsh(spec.A)[-1])
    w = omega(p) * 2.0 ** p
    Cp = w * (lam_A / constants.c_plus + p / (p + 2.0))
    Cp2 = w * max(p / (p + 2.0), lam_A * constants.K_T0)
    c = (p * w / ((p + 2.0) * (Mp + Mp2) * max(Cp, Cp2))) * (np.log(2.0) / Q) ** ((p + 2) / 2.0)
    return {"c": float(c), "M_p": Mp, "M_p_prime": Mp2, "C_p": float(Cp), "C_p_prime": float(Cp2),
            "Lambda_A": lam_A}


def _boundary_samples(onion: OnionDescriptor, n: int, rng, R_max: float):
    """Points of the onion whose ``R`` is at most ``R_max``."""
    xs, ts = onion.sample(n, rng)
    s = onion.z0.t - ts
    b = covariance_batch(onion.spec, s)
    rho2 = onion.rho2(s)
    R2 = (R_max * rng.random(n)) ** 2
    target = np.maximum(rho2 - R2 / s, 0.0)
    d = rng.standard_normal((n, onion.N))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    x = b.Einv @ onion.z0.x + np.sqrt(target)[:, None] * np.einsum("kij,kj->ki", b.cholM, d)
    return x, ts


@dataclass(frozen=True)
class KernelRatioReport:
    samples: int
    min_ratio: float
    analytic_c: float
    exceeds_analytic: bool
    zero_denominators: int
    boundary: bool
    theta_bar: float
    seed: int


def kernel_ratio_check(spec: OperatorSpec, constants: ConstantsReport, z0, t: float, x,
                       sample_count: int = 10_000, seed: int = 0, *, boundary: bool = False,
                       R_max: float = 1e-3) -> KernelRatioReport:
    """Minimum of ``W_outer(z0; zeta) / W_inner((x, t); zeta)`` over the inner onion.

    The outer radius uses ``theta_bar``.  With ``boundary`` the samples are
    pushed to the shell where the inner ``R`` is below ``R_max``.
    """
    setup = lemma_setup(spec, constants, z0, t, x, constants.theta_bar)
    rng = np.random.default_rng(seed)
    if boundary:
        xs, ts = _boundary_samples(setup.inner, sample_count, rng, R_max)
    else:
        xs, ts = setup.inner.sample(sample_count, rng)
    num = kernel_values(setup.outer, xs, ts)
    den = kernel_values(setup.inner, xs, ts, strict=False)
    live = den > 0
    ratio = num[live] / den[live]
    min_ratio = float(ratio.min()) if ratio.size else np.inf
    c = analytic_c(spec, constants)["c"]
    if not min_ratio > 0:
        raise PropertyViolation("kernel ratio is not bounded away from zero",
                                {"min_ratio": min_ratio, "samples": sample_count})
    return KernelRatioReport(sample_count, min_ratio, c, bool(min_ratio >= c), int(np.sum(~live)),
                             boundary, constants.theta_bar, seed)
