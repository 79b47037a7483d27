"""Large-time structure of the covariance for B^T in real Jordan form.

The user declares the block structure of ``B^T``: nilpotent Jordan blocks
``J_n`` (ones on the superdiagonal) followed by rotation blocks ``C_m(b)``
(2x2 cells ``[[0, -b], [b, 0]]`` on the diagonal, ``I_2`` on the block
superdiagonal).  From it we assemble the dilations ``delta_r``, the limit
projector ``D_inf``, the frequency projectors ``Pi_j`` and the matrices
entering the lower bound for ``<A_t e^{-sigma B_t} v, e^{-sigma B_t} v>``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .covariance import covariance_batch, covariance_bundle
from .errors import (HypoellipticityViolation, InvalidInputError, NotPositiveDefiniteError,
                     PropertyViolation)
from .matrix_core import OperatorSpec, lambda_min_spd, mat_exp
from .quadrature import composite_gauss_legendre

STRUCTURE_TOL = 1e-12
DILATION_TOL = 1e-9
GROWTH_PER_DECADE = 3.0


@dataclass(frozen=True)
class JordanStructure:
    """Declared block form of ``B^T``.

    ``rotation_blocks`` holds ``(m, b)`` pairs.  The sign of ``b`` is kept as
    declared (the cell is ``[[0, -b], [b, 0]]``); frequencies are grouped and
    ordered by ``|b|``.
    """

    nilpotent_sizes: tuple = ()
    rotation_blocks: tuple = ()

    def __post_init__(self):
        nil = tuple(int(n) for n in self.nilpotent_sizes)
        rot = tuple((int(m), float(b)) for m, b in self.rotation_blocks)
        if any(n < 1 for n in nil):
            raise InvalidInputError("nilpotent block sizes must be >= 1")
        if any(m < 1 or b == 0 or not np.isfinite(b) for m, b in rot):
            raise InvalidInputError("rotation blocks need m >= 1 and a finite nonzero b")
        if any(abs(rot[i][1]) > abs(rot[i + 1][1]) for i in range(len(rot) - 1)):
            raise InvalidInputError("rotation blocks must be sorted by nondecreasing |b|")
        if not nil and not rot:
            raise InvalidInputError("empty Jordan structure")
        object.__setattr__(self, "nilpotent_sizes", nil)
        object.__setattr__(self, "rotation_blocks", rot)

    @property
    def N(self) -> int:
        return sum(self.nilpotent_sizes) + 2 * sum(m for m, _ in self.rotation_blocks)

    def blocks(self):
        """Yield ``(kind, offset, size, m_or_n, b)`` for each block in coordinate order."""
        off = 0
        for n in self.nilpotent_sizes:
            yield "nilpotent", off, n, n, 0.0
            off += n
        for m, b in self.rotation_blocks:
            yield "rotation", off, 2 * m, m, b
            off += 2 * m

    def assemble_BT(self, scale: float = 1.0) -> np.ndarray:
        """``B^T`` from the blocks; ``scale`` multiplies every rotation frequency (``B_t``)."""
        out = np.zeros((self.N, self.N))
        for kind, off, size, k, b in self.blocks():
            if kind == "nilpotent":
                out[off:off + size, off:off + size] = jordan_block(k)
            else:
                out[off:off + size, off:off + size] = rotation_block(k, scale * b)
        return out

    def validate_against(self, B) -> None:
        B = np.asarray(B, dtype=float)
        if B.shape != (self.N, self.N):
            raise InvalidInputError(f"declared blocks imply N={self.N}, but B is {B.shape[0]}x{B.shape[1]}")
        resid = np.max(np.abs(self.assemble_BT() - B.T))
        if resid > STRUCTURE_TOL:
            raise InvalidInputError(f"declared blocks do not reproduce B^T (max deviation {resid:.3g})")

    def level(self) -> np.ndarray:
        """Position of each coordinate inside its block: 0, 1, 2, ... (cells for rotations)."""
        d = []
        for kind, _off, _size, k, _b in self.blocks():
            d.extend(range(k) if kind == "nilpotent" else np.repeat(np.arange(k), 2))
        return np.array(d, dtype=int)

    def dilation(self, r: float) -> np.ndarray:
        """Diagonal of ``delta_r``: ``r, r^3, ..., r^(2k-1)`` per block (pairs for rotations)."""
        return r ** (2.0 * self.level() + 1.0)

    def time_scaling(self, t: float) -> np.ndarray:
        """Diagonal of ``D_t = sqrt(t) delta_{1/sqrt(t)}``, i.e. ``t^(-level)``."""
        return float(t) ** (-self.level().astype(float))

    def frequency_groups(self) -> list:
        """``[(|b|, coordinate indices of the leading 2x2 cells)]`` grouped by equal |b|."""
        groups: dict = {}
        for kind, off, _size, _k, b in self.blocks():
            if kind == "rotation":
                groups.setdefault(abs(b), []).extend([off, off + 1])
        return [(bb, np.array(idx)) for bb, idx in sorted(groups.items())]

    def group_coordinates(self) -> list:
        """Coordinates spanned by ``Pi_0, Pi_1, ...`` (whole blocks)."""
        nil = [i for kind, off, size, _k, _b in self.blocks() if kind == "nilpotent" for i in range(off, off + size)]
        groups: dict = {}
        for kind, off, size, _k, b in self.blocks():
            if kind == "rotation":
                groups.setdefault(abs(b), []).extend(range(off, off + size))
        return [np.array(nil, dtype=int)] + [np.array(v) for _, v in sorted(groups.items())]

    def leading_nilpotent(self) -> np.ndarray:
        return np.array([off for kind, off, *_ in self.blocks() if kind == "nilpotent"], dtype=int)


def jordan_block(n: int) -> np.ndarray:
    return np.eye(n, k=1)


def rotation_block(m: int, b: float) -> np.ndarray:
    out = np.zeros((2 * m, 2 * m))
    cell = np.array([[0.0, -b], [b, 0.0]])
    for i in range(m):
        out[2 * i:2 * i + 2, 2 * i:2 * i + 2] = cell
        if i + 1 < m:
            out[2 * i:2 * i + 2, 2 * i + 2:2 * i + 4] = np.eye(2)
    return out


def exp_minus_block(structure: JordanStructure, sigma, scale: float = 1.0) -> np.ndarray:
    """Closed form of ``e^{-sigma B_t}``.

    ``B_t`` is the declared block form of ``B^T`` with every rotation
    frequency multiplied by ``scale`` (so ``B_1 = B^T``).

    ``sigma`` may be an array; the result has shape ``sigma.shape + (N, N)``.
    """
    sigma = np.asarray(sigma, dtype=float)
    out = np.zeros(sigma.shape + (structure.N, structure.N))
    for kind, off, size, k, b in structure.blocks():
        for i in range(k):
            for j in range(i, k):
                coeff = (-sigma) ** (j - i) / factorial(j - i)
                if kind == "nilpotent":
                    out[..., off + i, off + j] = coeff
                else:
                    ang = sigma * scale * b
                    c, s = np.cos(ang), np.sin(ang)
                    r0, c0 = off + 2 * i, off + 2 * j
                    out[..., r0, c0] = coeff * c
                    out[..., r0, c0 + 1] = coeff * s
                    out[..., r0 + 1, c0] = -coeff * s
                    out[..., r0 + 1, c0 + 1] = coeff * c
    return out


@dataclass(frozen=True, eq=False)
class AsymptoticBundle:
    structure: JordanStructure
    D_inf: np.ndarray
    A_inf: np.ndarray
    Pi: list
    A_cut: np.ndarray
    S: np.ndarray
    lambda_0: float
    Lambda_0: float
    lambda_parts: dict
    C_inf_1: np.ndarray
    frequencies: list = field(default_factory=list)


def build_asymptotic_bundle(spec: OperatorSpec, structure: JordanStructure) -> AsymptoticBundle:
    structure.validate_against(spec.B)
    N = spec.N
    A, B = spec.A, spec.B
    d = np.zeros(N)
    for kind, off, _size, _k, _b in structure.blocks():
        d[off:off + (1 if kind == "nilpotent" else 2)] = 1.0
    D_inf = np.diag(d)
    Pi = []
    for idx in structure.group_coordinates():
        P = np.zeros((N, N))
        P[idx, idx] = 1.0
        Pi.append(P)
    A_cut = sum(P @ A @ P for P in Pi)
    S = D_inf @ (A - A_cut) @ D_inf

    parts = {}
    lead0 = structure.leading_nilpotent()
    candidates = []
    if lead0.size:
        lam = float(np.linalg.eigvalsh(A[np.ix_(lead0, lead0)])[0])
        parts["lambda^(0)"] = lam
        if lam <= STRUCTURE_TOL:
            raise HypoellipticityViolation("lambda^(0) is not positive", {"lambda^(0)": lam})
        candidates.append(lam)
    BAB = B @ A @ B.T
    frequencies = []
    for j, (bb, idx) in enumerate(structure.frequency_groups(), start=1):
        lam = float(np.linalg.eigvalsh((A + BAB)[np.ix_(idx, idx)])[0])
        parts[f"lambda^({j})"] = lam
        if lam <= STRUCTURE_TOL:
            raise HypoellipticityViolation(f"lambda^({j}) is not positive", {f"lambda^({j})": lam, "b": bb})
        candidates.append(lam / (2.0 * max(1.0, bb * bb)))
        frequencies.append(bb)
    try:
        C_inf_1 = covariance_bundle(OperatorSpec(D_inf, B, name=f"{spec.name}[D_inf]"), 1.0).C
    except NotPositiveDefiniteError as exc:
        raise HypoellipticityViolation("C_inf(1) is not positive definite") from exc
    return AsymptoticBundle(
        structure=structure,
        D_inf=D_inf,
        A_inf=D_inf @ A @ D_inf,
        Pi=Pi,
        A_cut=A_cut,
        S=S,
        lambda_0=float(min(candidates)),
        Lambda_0=float(np.linalg.eigvalsh(A)[-1]),
        lambda_parts=parts,
        C_inf_1=np.array(C_inf_1),
        frequencies=frequencies,
    )


def verify_dilation_identities(structure: JordanStructure, r_samples, sigma_samples) -> dict:
    """Check ``e^{-sigma r^2 J} = delta_{1/r} e^{-sigma J} delta_r`` and its rotation analogue.

    Residuals are entrywise and relative to ``max(1, |entry|)``.
    """
    worst = 0.0
    worst_at = None
    for kind, _off, _size, k, b in structure.blocks():
        for r, sigma in zip(np.atleast_1d(r_samples), np.atleast_1d(sigma_samples)):
            if kind == "nilpotent":
                J = jordan_block(k)
                lhs = mat_exp(J, -sigma * r * r)
                inner = mat_exp(J, -sigma)
                powers = r ** (2.0 * np.arange(k) + 1.0)
            else:
                lhs = mat_exp(rotation_block(k, b), -sigma * r * r)
                inner = mat_exp(rotation_block(k, r * r * b), -sigma)
                powers = np.repeat(r ** (2.0 * np.arange(k) + 1.0), 2)
            rhs = (inner / powers[:, None]) * powers[None, :]
            resid = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))))
            if resid > worst:
                worst = resid
                worst_at = {"block": kind, "size": k, "b": b, "r": float(r), "sigma": float(sigma)}
    return {"max_residual": worst, "worst": worst_at, "passed": worst <= DILATION_TOL}


def sigma_rule(structure: JordanStructure, t: float, nodes: int = 64, refine: int = 1):
    """Composite Gauss-Legendre nodes on [0, 1] resolving frequencies up to ``2 t max|b|``."""
    bmax = max([abs(b) for _, b in structure.rotation_blocks], default=0.0)
    # about six periods of the fastest product frequency per 64-node panel
    panels = int(np.ceil(2.0 * t * bmax / (2.0 * np.pi) / 6.0)) + 1
    return composite_gauss_legendre(0.0, 1.0, panels * refine, nodes)


def sigma_integral(structure: JordanStructure, t: float, X, *, refine_check: bool = True):
    """``int_0^1 e^{-sigma B_t^T} X e^{-sigma B_t} dsigma`` for one or several X.

    Returns ``(value, check_difference)`` where the difference compares the
    rule against one with twice as many panels.
    """
    Xs = np.asarray(X, dtype=float)
    single = Xs.ndim == 2
    Xs = Xs[None] if single else Xs

    def run(refine):
        sig, w = sigma_rule(structure, t, refine=refine)
        E = exp_minus_block(structure, sig, scale=t)
        XE = np.matmul(Xs[:, None], E[None])
        return np.einsum("nji,xnjl->xil", w[:, None, None] * E, XE, optimize=True)

    val = run(1)
    diff = float(np.max(np.abs(run(2) - val))) if refine_check else 0.0
    return (val[0] if single else val), diff


def _decade_growth(t, env, floor=1e-12):
    """Largest growth factor of a nonnegative envelope over any decade of t."""
    t = np.asarray(t)
    env = np.maximum(np.asarray(env), floor)
    worst = 1.0
    for i, ti in enumerate(t):
        later = (t > ti) & (t <= 10.0 * ti)
        if later.any():
            worst = max(worst, float(np.max(env[later]) / env[i]))
    return worst


def verify_claimstructure(spec: OperatorSpec, structure: JordanStructure, t_grid, v_samples,
                          bundle: AsymptoticBundle | None = None) -> dict:
    """Deficit envelope ``t * max(0, lambda_0 RHS - LHS)`` of the lower bound on ``A_inf``."""
    bundle = bundle or build_asymptotic_bundle(spec, structure)
    t = np.asarray(t_grid, dtype=float)
    V = np.atleast_2d(np.asarray(v_samples, dtype=float))
    V = V / np.linalg.norm(V, axis=1, keepdims=True)
    env_sampled, env_worst, quad_err = [], [], 0.0
    for tt in t:
        (GA, GD), diff = sigma_integral(structure, tt, np.stack([bundle.A_inf, bundle.D_inf]))
        quad_err = max(quad_err, diff)
        gap = bundle.lambda_0 * GD - GA
        sampled = np.einsum("vi,ij,vj->v", V, gap, V)
        env_sampled.append(tt * max(0.0, float(np.max(sampled))))
        env_worst.append(tt * max(0.0, float(np.linalg.eigvalsh(0.5 * (gap + gap.T))[-1])))
    growth = _decade_growth(t, env_worst)
    return {
        "t": t,
        "envelope_sampled": np.array(env_sampled),
        "envelope_worst": np.array(env_worst),
        "max_envelope": float(max(env_worst)),
        "growth_per_decade": growth,
        "bounded": growth <= GROWTH_PER_DECADE,
        "quadrature_check": quad_err,
        "lambda_0": bundle.lambda_0,
    }


def oscillatory_residuals(spec: OperatorSpec, structure: JordanStructure, t, bundle: AsymptoticBundle | None = None):
    """The three residuals at a single t: S-term, worst flip term, and ``||A_t - A_inf||``."""
    bundle = bundle or build_asymptotic_bundle(spec, structure)
    A, B = spec.A, spec.B
    mats = [bundle.S]
    freqs = []
    for P, bb in zip(bundle.Pi[1:], bundle.frequencies):
        DP = bundle.D_inf @ P
        mats.append(DP @ B @ A @ B.T @ DP.T)
        mats.append(DP @ A @ DP.T)
        freqs.append(bb)
    vals, diff = sigma_integral(structure, t, np.stack(mats))
    res_S = float(np.linalg.norm(vals[0], 2))
    res_flip = 0.0
    for j, bb in enumerate(freqs):
        res_flip = max(res_flip, float(np.linalg.norm(vals[1 + 2 * j] - bb * bb * vals[2 + 2 * j], 2)))
    Dt = structure.time_scaling(t)
    A_t = Dt[:, None] * A * Dt[None, :]
    res_A = float(np.linalg.norm(A_t - bundle.A_inf, 2))
    return res_S, res_flip, res_A, diff


def _envelope_slope(t, res, lo, hi):
    """Slope of log(max over [t, 2t] of the residual) against log t on [lo, hi]."""
    t = np.asarray(t)
    res = np.asarray(res)
    sel = (t >= lo) & (t <= hi)
    env = np.array([np.max(res[(t >= ti) & (t <= 2.0 * ti)]) for ti in t[sel]])
    if np.max(env) <= 1e-14:
        return None, env
    slope, _ = np.polyfit(np.log(t[sel]), np.log(env), 1)
    return float(slope), env


def verify_oscillatory_decay(spec: OperatorSpec, structure: JordanStructure, t_lo: float = 10.0,
                             t_hi: float = 1e4, points_per_decade: int = 64,
                             bundle: AsymptoticBundle | None = None) -> dict:
    """Decay of the cut-off, flip and ``A_t`` residuals like ``1/t``.

    Oscillating residuals such as ``sin(t)/t`` are summarised by their
    running envelope ``max_{t' in [t, 2t]} res(t')`` before the log-log fit.
    A residual that vanishes identically has no slope and is reported as such.
    """
    bundle = bundle or build_asymptotic_bundle(spec, structure)
    decades = np.log10(2.0 * t_hi / t_lo)
    t = np.logspace(np.log10(t_lo), np.log10(2.0 * t_hi), int(np.ceil(decades * points_per_decade)) + 1)
    rows = np.array([oscillatory_residuals(spec, structure, tt, bundle) for tt in t])
    out = {"t": t, "res_S": rows[:, 0], "res_flip": rows[:, 1], "res_A": rows[:, 2],
           "quadrature_check": float(rows[:, 3].max())}
    for key in ("res_S", "res_flip"):
        slope, _ = _envelope_slope(t, out[key], t_lo, t_hi)
        out[f"slope_{key}"] = slope
    sel = t <= t_hi
    scaled = t[sel] * out["res_A"][sel]
    out["tA_growth_per_decade"] = _decade_growth(t[sel], scaled)
    out["tA_bounded"] = out["tA_growth_per_decade"] <= GROWTH_PER_DECADE
    return out


def check_oscillatory_decay(report: dict, tol: float = 0.1) -> list:
    """Violations of the ``-1`` slope (and of t*||A_t - A_inf|| boundedness)."""
    bad = []
    for key in ("slope_res_S", "slope_res_flip"):
        slope = report[key]
        if slope is not None and abs(slope + 1.0) > tol:
            bad.append({"location": key, "margin": abs(slope + 1.0) - tol})
    if not report["tA_bounded"]:
        bad.append({"location": "t*|A_t - A_inf|", "margin": report["tA_growth_per_decade"] - GROWTH_PER_DECADE})
    return bad


def verify_sandwich(spec: OperatorSpec, structure: JordanStructure, t_grid, xi_samples=None,
                    bundle: AsymptoticBundle | None = None) -> dict:
    """Two-sided comparison of ``M(t)`` with ``|delta_sqrt(t) xi|^2``.

    Lower and upper constants are ``lambda_0 c / 2`` and ``2 Lambda_0 C`` with
    ``c, C`` the extreme eigenvalues of ``C_inf(1)``.  Returns the smallest
    grid time ``T`` from which the bounds hold on the rest of the grid.
    """
    bundle = bundle or build_asymptotic_bundle(spec, structure)
    t = np.asarray(t_grid, dtype=float)
    ev = np.linalg.eigvalsh(bundle.C_inf_1)
    lower = bundle.lambda_0 * ev[0] / 2.0
    upper = 2.0 * bundle.Lambda_0 * ev[-1]
    M = covariance_batch(spec, t).M
    inv = np.array([structure.dilation(1.0 / np.sqrt(tt)) for tt in t])
    X = inv[:, :, None] * M * inv[:, None, :]
    lo = lambda_min_spd(X)
    hi = np.linalg.eigvalsh(X)[:, -1]
    ok = (lo >= lower) & (hi <= upper)
    if xi_samples is not None:
        xi = np.atleast_2d(np.asarray(xi_samples, dtype=float))
        xi = xi / np.linalg.norm(xi, axis=1, keepdims=True)
        ratios = np.einsum("vi,tij,vj->tv", xi, X, xi)
        ok &= np.all((ratios >= lower) & (ratios <= upper), axis=1)
    T = None
    for i in range(len(t)):
        if ok[i:].all():
            T = float(t[i])
            break
    return {"lower": lower, "upper": upper, "T": T, "min_ratio": lo, "max_ratio": hi, "holds": ok}


def require(condition: bool, message: str, details: dict | None = None):
    if not condition:
        raise PropertyViolation(message, details)
