"""Fundamental solution, onion sets and the mean value formula.

For a gap ``s = t0 - t > 0`` put ``y = x - E(-s) x0``.  Then

    q   = <C(s)^{-1}(x0 - E(s)x), x0 - E(s)x> = <M(s)^{-1} y, y>,
    rho2(s) = 4 log(r / V_p(s)),
    R^2 = s (rho2 - q),

and the onion ``Omega_r^(p)(z0)`` is the set where ``q < rho2(s)``.  Every
time slice of it is the ellipsoid ``{y : <M^{-1} y, y> < rho2}``, which is
what the samplers and the deterministic scheme integrate over.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .covariance import LOG_4PI, covariance_batch, covariance_bundle, log_volume
from .errors import DomainError, InvalidInputError
from .matrix_core import OperatorSpec, kalman_index
from .quadrature import gauss_legendre

BOUNDARY_TOL = 1e-12
BISECTION_STEPS = 50
DEFAULT_STRATA = 128
DEFAULT_PER_STRATUM = 8192
TENSOR_CHUNK = 1 << 16


@dataclass(frozen=True)
class SpacetimePoint:
    x: np.ndarray
    t: float

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        t = float(self.t)
        if not (np.all(np.isfinite(x)) and np.isfinite(t)):
            raise InvalidInputError("spacetime point must have finite entries")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)

    @property
    def N(self) -> int:
        return self.x.shape[0]


def as_point(z, N: int | None = None) -> SpacetimePoint:
    if not isinstance(z, SpacetimePoint):
        x, t = z
        z = SpacetimePoint(x, t)
    if N is not None and z.N != N:
        raise InvalidInputError(f"point has dimension {z.N}, expected {N}")
    return z


def omega(p: int) -> float:
    """Volume of the unit ball in R^p."""
    return float(np.exp(0.5 * p * np.log(np.pi) - gammaln(0.5 * p + 1.0)))


def log_fundamental_solution(spec: OperatorSpec, z0, z) -> float:
    """``log Gamma(z0; z)``; ``-inf`` when ``t >= t0``."""
    z0 = as_point(z0, spec.N)
    z = as_point(z, spec.N)
    s = z0.t - z.t
    if s <= 0:
        return -np.inf
    b = covariance_bundle(spec, s)
    q = float(b.quad_C(z0.x - b.E @ z.x))
    return -0.5 * spec.N * LOG_4PI - 0.5 * b.logD - 0.25 * q


def log_fundamental_solution_batch(spec: OperatorSpec, x0, t0, x, t) -> np.ndarray:
    """Vectorised ``log Gamma((x0, t0); (x, t))``; leading axes broadcast."""
    x0 = np.asarray(x0, dtype=float)
    x = np.asarray(x, dtype=float)
    s = np.asarray(t0, dtype=float) - np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(x0.shape[:-1], x.shape[:-1], s.shape)
    N = spec.N
    x0 = np.broadcast_to(x0, shape + (N,)).reshape(-1, N)
    x = np.broadcast_to(x, shape + (N,)).reshape(-1, N)
    s = np.broadcast_to(s, shape).ravel()
    out = np.full(s.shape, -np.inf)
    live = s > 0
    if live.any():
        b = covariance_batch(spec, s[live])
        d = x0[live] - np.einsum("kij,kj->ki", b.E, x[live])
        w = np.linalg.solve(b.cholC, d[..., None])[..., 0]
        q = np.sum(w * w, axis=-1)
        out[live] = -0.5 * N * LOG_4PI - 0.5 * b.logD - 0.25 * q
    return out.reshape(shape)


def _whitened_quad(chol, y):
    w = np.linalg.solve(chol, y[..., None])[..., 0]
    return np.sum(w * w, axis=-1)


@dataclass(frozen=True, eq=False)
class OnionDescriptor:
    """The set ``Omega_r^(p)(z0)`` together with its section oracle."""

    spec: OperatorSpec
    z0: SpacetimePoint
    r: float
    p: int
    s_max: float
    log_r: float = field(repr=False)

    @property
    def N(self) -> int:
        return self.spec.N

    def rho2(self, s):
        """Squared section radius ``4 log(r / V_p(s))`` (array in, array out)."""
        s = np.asarray(s, dtype=float)
        logD = covariance_batch(self.spec, np.atleast_1d(s)).logD.reshape(s.shape)
        return 4.0 * (self.log_r - log_volume(self.N, self.p, s, logD))

    def section(self, s: float):
        """``(center, cholM, rho2)`` of the time slice at gap ``s``."""
        if not 0 < s < self.s_max:
            raise DomainError(f"gap {s} outside (0, s_max={self.s_max})")
        b = covariance_bundle(self.spec, s)
        center = b.Einv @ self.z0.x
        rho2 = 4.0 * (self.log_r - log_volume(self.N, self.p, s, b.logD))
        return center, b.cholM, float(rho2)

    def section_volume(self, s):
        """Lebesgue measure of each slice (zero outside ``(0, s_max)``)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros(s.shape)
        live = (s > 0) & (s < self.s_max)
        if live.any():
            b = covariance_batch(self.spec, s[live])
            rho2 = 4.0 * (self.log_r - log_volume(self.N, self.p, s[live], b.logD))
            logdetL = np.sum(np.log(np.diagonal(b.cholM, axis1=-2, axis2=-1)), axis=-1)
            out[live] = omega(self.N) * np.maximum(rho2, 0.0) ** (0.5 * self.N) * np.exp(logdetL)
        return out

    def margin(self, x, t) -> np.ndarray:
        """``rho2(s) - q`` at each point; positive inside, ``-inf`` for ``t >= t0``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = self.z0.t - np.atleast_1d(np.asarray(t, dtype=float))
        s = np.broadcast_to(s, x.shape[:-1]).ravel()
        x = x.reshape(-1, self.N)
        out = np.full(s.shape, -np.inf)
        live = s > 0
        if live.any():
            b = covariance_batch(self.spec, s[live])
            y = x[live] - b.Einv @ self.z0.x
            q = _whitened_quad(b.cholM, y)
            rho2 = 4.0 * (self.log_r - log_volume(self.N, self.p, s[live], b.logD))
            out[live] = rho2 - q
        return out

    def contains(self, x, t) -> np.ndarray:
        return self.margin(x, t) > 0

    def sample(self, n: int, rng: np.random.Generator, *, grid: int = 2048):
        """``n`` points drawn uniformly from the onion.

        The gap is drawn from the density proportional to the section volume
        (rejection against a grid envelope), then the point is drawn uniformly
        in that section.  Returns ``(x, t)``.
        """
        sg = self.s_max * (np.arange(1, grid + 1) - 0.5) / grid
        bound = 1.25 * float(self.section_volume(sg).max())
        kept = []
        total = 0
        while total < n:
            batch = max(2 * (n - total), 256)
            s = self.s_max * rng.random(batch)
            s = s[s > 0]
            vol = self.section_volume(s)
            if np.any(vol > bound):
                raise DomainError("section volume exceeded the sampling envelope")
            s = s[rng.random(s.shape) * bound < vol]
            kept.append(s)
            total += s.size
        s = np.concatenate(kept)[:n]
        b = covariance_batch(self.spec, s)
        rho = np.sqrt(np.maximum(self.rho2(s), 0.0))
        ball = uniform_ball(rng, n, self.N)
        x = b.Einv @ self.z0.x + rho[:, None] * np.einsum("kij,kj->ki", b.cholM, ball)
        return x, self.z0.t - s


def uniform_ball(rng: np.random.Generator, n: int, N: int) -> np.ndarray:
    """Uniform points in the unit ball: Gaussian direction, radius ``U^(1/N)``."""
    g = rng.standard_normal((n, N))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random(n)[:, None] ** (1.0 / N)


def _log_vp(spec: OperatorSpec, p: int, s: float) -> float:
    return float(log_volume(spec.N, p, s, covariance_bundle(spec, s).logD))


def onion_geometry(spec: OperatorSpec, z0, r: float, p: int) -> OnionDescriptor:
    """Locate ``s_max`` with ``V_p(s_max) = r`` by bisection in log s."""
    if not (np.isfinite(r) and r > 0):
        raise InvalidInputError(f"onion radius must be positive, got {r}")
    if p < 1:
        raise InvalidInputError("p must be a positive integer")
    z0 = as_point(z0, spec.N)
    log_r = float(np.log(r))
    lo = hi = 1.0
    if _log_vp(spec, p, 1.0) < log_r:
        while _log_vp(spec, p, hi) < log_r:
            lo, hi = hi, 2.0 * hi
    else:
        while _log_vp(spec, p, lo) >= log_r:
            lo, hi = 0.5 * lo, lo
    for _ in range(BISECTION_STEPS):
        mid = np.sqrt(lo * hi)
        if _log_vp(spec, p, mid) < log_r:
            lo = mid
        else:
            hi = mid
    s_max = float(np.sqrt(lo * hi))
    return OnionDescriptor(spec, z0, float(r), int(p), s_max, log_r)


def _kernel_from_parts(p, s, rho2, q, WA):
    """``W_r^(p)`` from slice data; returns (kernel, log-argument ``(rho2 - q)/4``)."""
    arg = 0.25 * (rho2 - q)
    R2 = 4.0 * s * np.maximum(arg, 0.0)
    R2 = np.where(np.abs(arg) <= BOUNDARY_TOL, 0.0, R2)
    R = np.sqrt(R2)
    ker = omega(p) * R ** p * (WA + p / (4.0 * (p + 2)) * R2 / s ** 2)
    return ker, arg


def kernel_values(onion: OnionDescriptor, x, t, *, strict: bool = True) -> np.ndarray:
    """Batched ``W_r^(p)(z0; (x, t))``.

    With ``strict`` a point outside the closure raises :class:`DomainError`;
    otherwise such points get kernel 0.
    """
    spec = onion.spec
    x = np.atleast_2d(np.asarray(x, dtype=float)).reshape(-1, spec.N)
    s = onion.z0.t - np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    out = np.zeros(x.shape[0])
    live = s > 0
    if strict and not live.all():
        raise DomainError("kernel evaluated at t >= t0")
    if live.any():
        b = covariance_batch(spec, s[live])
        ker, arg = _slice_kernel(onion, b, x[live], s[live])
        if strict and np.any(arg < -BOUNDARY_TOL):
            raise DomainError("kernel evaluated outside the closure of the onion")
        out[live] = np.where(arg < -BOUNDARY_TOL, 0.0, ker)
    return out


def _slice_kernel(onion, b, x, s):
    y = x - b.Einv @ onion.z0.x
    z = np.linalg.solve(b.M, y[..., None])[..., 0]
    q = np.sum(y * z, axis=-1)
    WA = 0.25 * np.einsum("ij,kj,ki->k", onion.spec.A, z, z)
    rho2 = 4.0 * (onion.log_r - log_volume(onion.N, onion.p, s, b.logD))
    return _kernel_from_parts(onion.p, s, rho2, q, WA)


def mean_value_kernel(spec: OperatorSpec, z0, r: float, p: int, z) -> float:
    """``W_r^(p)(z0; z)`` for a single point in the closure of the onion."""
    onion = onion_geometry(spec, z0, r, p)
    z = as_point(z, spec.N)
    return float(kernel_values(onion, z.x[None], z.t)[0])


def w_quadratic(spec: OperatorSpec, z0, z) -> float:
    """The quadratic part ``W(z0; z)`` in the ``M^{-1}`` form."""
    z0 = as_point(z0, spec.N)
    z = as_point(z, spec.N)
    b = covariance_bundle(spec, z0.t - z.t)
    v = b.solve_M(z.x - b.Einv @ z0.x)
    return 0.25 * float(v @ spec.A @ v)


# ---------------------------------------------------------------- schemes


@dataclass(frozen=True)
class MonteCarloScheme:
    samples: int = DEFAULT_STRATA * DEFAULT_PER_STRATUM
    seed: int = 0
    strata: int = DEFAULT_STRATA


@dataclass(frozen=True)
class TensorScheme:
    slices: int = 96
    nodes: int = 24


@dataclass(frozen=True)
class MeanValueParams:
    p: int
    r: float
    scheme: MonteCarloScheme | TensorScheme = field(default_factory=MonteCarloScheme)

    def __post_init__(self):
        if not (isinstance(self.p, (int, np.integer)) and self.p >= 1):
            raise InvalidInputError("p must be a positive integer")
        if not (np.isfinite(self.r) and self.r > 0):
            raise InvalidInputError("r must be positive")
        sc = self.scheme
        if isinstance(sc, MonteCarloScheme):
            if sc.strata < 1 or sc.samples < 2 * sc.strata:
                raise InvalidInputError("need at least two samples per stratum")
        elif isinstance(sc, TensorScheme):
            if sc.slices < 1 or sc.nodes < 1:
                raise InvalidInputError("tensor scheme needs positive slice and node counts")
        else:
            raise InvalidInputError(f"unknown scheme {sc!r}")

    def check_against(self, spec: OperatorSpec):
        res = kalman_index(spec)
        if not res.hypoelliptic:
            raise InvalidInputError("mean value formula needs a hypoelliptic spec")
        if self.p <= 2 + 4 * res.n0:
            raise InvalidInputError(f"p={self.p} must exceed 2 + 4 n0 = {2 + 4 * res.n0}")


@dataclass(frozen=True)
class MVFResult:
    estimate: float
    stderr: float
    scale: float
    s_max: float
    evaluations: int


def _phi(v):
    return v ** 3 * (10.0 - 15.0 * v + 6.0 * v * v)


def _dphi(v):
    return 30.0 * v * v * (1.0 - v) ** 2


def _slice_integrand(onion, u, s, ball, weight_ball):
    """Values ``u * W * |section|`` at ball points mapped into the slices at ``s``.

    ``ball`` has shape (n, K, N): K unit-ball points per slice.  Returns the
    weighted sums over K for ``u W`` and ``|u| W``.
    """
    spec = onion.spec
    n, K, N = ball.shape
    b = covariance_batch(spec, s)
    rho2 = 4.0 * (onion.log_r - log_volume(N, onion.p, s, b.logD))
    rho = np.sqrt(np.maximum(rho2, 0.0))
    logdetL = np.sum(np.log(np.diagonal(b.cholM, axis1=-2, axis2=-1)), axis=-1)
    vol_unit = rho ** N * np.exp(logdetL)
    dy = rho[:, None, None] * np.einsum("kij,kmj->kmi", b.cholM, ball)
    x = (b.Einv @ onion.z0.x)[:, None, :] + dy
    # q and M^{-1} y follow from the whitened ball point directly
    w = rho[:, None, None] * ball
    zM = np.linalg.solve(np.swapaxes(b.cholM, -1, -2)[:, None], w[..., None])[..., 0]
    q = np.sum(w * w, axis=-1)
    WA = 0.25 * np.einsum("ij,kmj,kmi->km", spec.A, zM, zM)
    ker, _ = _kernel_from_parts(onion.p, s[:, None], rho2[:, None], q, WA)
    t = np.broadcast_to((onion.z0.t - s)[:, None], (n, K))
    uv = np.asarray(u(x.reshape(-1, N), t.reshape(-1)), dtype=float).reshape(n, K)
    f = uv * ker
    return vol_unit[:, None] * f * weight_ball, vol_unit[:, None] * np.abs(f) * weight_ball


def _mvf_monte_carlo(onion, u, scheme: MonteCarloScheme) -> MVFResult:
    J = scheme.strata
    per = scheme.samples // J
    N = onion.N
    means = np.empty(J)
    vars_ = np.empty(J)
    abs_means = np.empty(J)
    for j in range(J):
        rng = np.random.default_rng(np.random.SeedSequence(scheme.seed, spawn_key=(j,)))
        v = (j + rng.random(per)) / J
        s = onion.s_max * _phi(v)
        ball = uniform_ball(rng, per, N)[:, None, :]
        jac = onion.s_max * _dphi(v)
        live = (s > 0) & (s < onion.s_max)
        vals = np.zeros(per)
        absv = np.zeros(per)
        if live.any():
            f, fa = _slice_integrand(onion, u, s[live], ball[live], omega(N))
            vals[live] = f[:, 0] * jac[live]
            absv[live] = fa[:, 0] * jac[live]
        means[j] = vals.mean()
        vars_[j] = vals.var(ddof=1)
        abs_means[j] = absv.mean()
    est = means.sum() / J / onion.r
    se = np.sqrt(np.sum(vars_ / per)) / J / onion.r
    scale = abs_means.sum() / J / onion.r
    return MVFResult(float(est), float(se), float(scale), onion.s_max, J * per)


def sphere_rule(N: int, n: int):
    """Tensor quadrature on the unit sphere ``S^{N-1}`` in hyperspherical angles.

    Returns points (K, N) and weights summing to the surface area.
    """
    if N == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    # last angle: periodic trapezoid, exact for trigonometric polynomials
    m = 2 * n
    phi = 2.0 * np.pi * np.arange(m) / m
    pts = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    wts = np.full(m, 2.0 * np.pi / m)
    gx, gw = gauss_legendre(n)
    for k in range(3, N + 1):
        # prepend a polar angle in [0, pi] with weight sin^{k-2}
        th = np.pi * gx
        wt = np.pi * gw * np.sin(th) ** (k - 2)
        new = np.concatenate([np.repeat(np.cos(th), len(pts))[:, None],
                              (np.sin(th)[:, None, None] * pts[None]).reshape(-1, k - 1)], axis=1)
        wts = (wt[:, None] * wts[None]).ravel()
        pts = new
    return pts, wts


def ball_rule(N: int, n: int):
    """Points and weights integrating over the unit ball in R^N."""
    gx, gw = gauss_legendre(n)
    sp, sw = sphere_rule(N, n)
    pts = (gx[:, None, None] * sp[None]).reshape(-1, N)
    wts = ((gw * gx ** (N - 1))[:, None] * sw[None]).ravel()
    return pts, wts


def _mvf_tensor(onion, u, scheme: TensorScheme) -> MVFResult:
    vx, vw = gauss_legendre(scheme.slices)
    s = onion.s_max * _phi(vx)
    jac = onion.s_max * _dphi(vx) * vw
    pts, wts = ball_rule(onion.N, scheme.nodes)
    chunk = max(1, TENSOR_CHUNK // len(wts))
    est = scale = 0.0
    for lo in range(0, len(s), chunk):
        sl = slice(lo, lo + chunk)
        ball = np.broadcast_to(pts, (len(s[sl]),) + pts.shape)
        f, fa = _slice_integrand(onion, u, s[sl], ball, wts[None, :])
        est += float(np.sum(f.sum(axis=1) * jac[sl]))
        scale += float(np.sum(fa.sum(axis=1) * jac[sl]))
    return MVFResult(est / onion.r, 0.0, scale / onion.r, onion.s_max, len(s) * len(wts))


def mvf_integrate(spec: OperatorSpec, u, z0, params: MeanValueParams) -> MVFResult:
    """``(1/r) * integral of u * W_r^(p)`` over the onion at ``z0``.

    ``u`` is called as ``u(x, t)`` with ``x`` of shape (n, N) and ``t`` of
    shape (n,).  For the Monte Carlo scheme ``stderr`` is the stratified
    standard error; the tensor scheme reports 0.
    """
    params.check_against(spec)
    onion = onion_geometry(spec, z0, params.r, params.p)
    if isinstance(params.scheme, MonteCarloScheme):
        return _mvf_monte_carlo(onion, u, params.scheme)
    return _mvf_tensor(onion, u, params.scheme)


def residual_K(spec: OperatorSpec, u, z, h: float) -> float:
    """Finite-difference ``tr(A D^2 u) + <Bx, Du> - du/dt`` at ``z``."""
    if not h > 0:
        raise InvalidInputError("step must be positive")
    z = as_point(z, spec.N)
    N = spec.N
    x, t = z.x, z.t
    I = np.eye(N) * h
    xs = [x]
    ts = [t, t + h, t - h]
    for i in range(N):
        xs += [x + I[i], x - I[i]]
    pairs = [(i, j) for i in range(N) for j in range(i + 1, N) if spec.A[i, j] != 0.0]
    for i, j in pairs:
        xs += [x + I[i] + I[j], x + I[i] - I[j], x - I[i] + I[j], x - I[i] - I[j]]
    X = np.array([x, x] + xs)
    T = np.array(ts[1:] + [t] * len(xs))
    vals = np.asarray(u(X, T), dtype=float)
    up_t, dn_t, u0 = vals[0], vals[1], vals[2]
    side = vals[3:3 + 2 * N].reshape(N, 2)
    cross = vals[3 + 2 * N:].reshape(-1, 4)
    grad = (side[:, 0] - side[:, 1]) / (2 * h)
    lap = np.zeros((N, N))
    lap[np.diag_indices(N)] = (side[:, 0] - 2 * u0 + side[:, 1]) / h ** 2
    for (i, j), c in zip(pairs, cross):
        lap[i, j] = lap[j, i] = (c[0] - c[1] - c[2] + c[3]) / (4 * h * h)
    return float(np.sum(spec.A * lap) + (spec.B @ x) @ grad - (up_t - dn_t) / (2 * h))
