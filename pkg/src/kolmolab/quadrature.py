"""Quadrature and 1-D optimisation helpers shared by the numerical modules."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import optimize

from .errors import ConvergenceError, InvalidInputError

_ROUNDOFF = 64 * np.finfo(float).eps


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_gauss_legendre(a: float, b: float, panels: int, n: int = 64):
    """Nodes and weights of a composite rule with ``panels`` equal panels on [a, b]."""
    x, w = gauss_legendre(n)
    edges = np.linspace(a, b, panels + 1)
    h = np.diff(edges)
    nodes = (edges[:-1, None] + h[:, None] * x[None, :]).ravel()
    weights = (h[:, None] * w[None, :]).ravel()
    return nodes, weights


def adaptive_simpson(f, a: float, b: float, tol: float, *, initial_panels: int = 1,
                     max_depth: int = 40, max_panels: int = 1 << 20) -> np.ndarray:
    """Adaptive composite Simpson rule for vector- or matrix-valued integrands.

    ``f`` is vectorised: it receives a 1-D array of abscissae and returns an
    array whose leading axis runs over them.  Panels are refined breadth-first;
    a panel of width h is accepted once the Richardson estimate
    ``|S_2 - S_1| / 15`` is entrywise below ``tol * h / (b - a)``, so the
    accumulated error estimate stays below ``tol``.  A panel whose estimate
    is already at the roundoff level of its own value is accepted too, since
    splitting it further cannot help.
    """
    if not (np.isfinite(a) and np.isfinite(b)) or b <= a:
        raise InvalidInputError(f"adaptive_simpson needs a finite interval with a < b, got [{a}, {b}]")
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    width = b - a
    left = np.linspace(a, b, initial_panels + 1)[:-1]
    h = np.full(initial_panels, width / initial_panels)
    quarter = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    vals = _evaluate(f, left[:, None] + h[:, None] * quarter[None, :])
    total = None
    for _depth in range(max_depth + 1):
        hh = h.reshape((-1,) + (1,) * (vals.ndim - 2))
        coarse = hh / 6.0 * (vals[:, 0] + 4.0 * vals[:, 2] + vals[:, 4])
        fine = hh / 12.0 * (vals[:, 0] + 4.0 * vals[:, 1] + 2.0 * vals[:, 2] + 4.0 * vals[:, 3] + vals[:, 4])
        diff = fine - coarse
        err = np.abs(diff).reshape(len(h), -1).max(axis=1) / 15.0
        noise = _ROUNDOFF * np.abs(fine).reshape(len(h), -1).max(axis=1)
        ok = err <= np.maximum(tol * h / width, noise)
        accepted = (fine[ok] + diff[ok] / 15.0).sum(axis=0)
        total = accepted if total is None else total + accepted
        if ok.all():
            return total
        if 2 * int((~ok).sum()) > max_panels:
            break
        # split the rejected panels, reusing the three known abscissae of each half
        left, h, old = left[~ok], 0.5 * h[~ok], vals[~ok]
        new = _evaluate(f, left[:, None] + h[:, None] * np.array([0.25, 0.75, 1.25, 1.75])[None, :])
        lo = np.stack([old[:, 0], new[:, 0], old[:, 1], new[:, 1], old[:, 2]], axis=1)
        hi = np.stack([old[:, 2], new[:, 2], old[:, 3], new[:, 3], old[:, 4]], axis=1)
        left = np.concatenate([left, left + h])
        h = np.concatenate([h, h])
        vals = np.concatenate([lo, hi])
    raise ConvergenceError(f"adaptive Simpson exceeded depth {max_depth} or {max_panels} panels on [{a}, {b}] with tol={tol}")


def _evaluate(f, pts):
    vals = np.asarray(f(pts.ravel()))
    return vals.reshape(pts.shape + vals.shape[1:])


def maximize_scalar(f, lo: float, hi: float, *, xatol: float = 1e-10, grid: int = 257):
    """Maximise a 1-D function on [lo, hi].

    A coarse grid brackets the best point, then Brent's bounded method
    (golden-section with parabolic steps) polishes it.  Returns ``(x, f(x))``.
    """
    xs = np.linspace(lo, hi, grid)
    vals = np.array([f(x) for x in xs])
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    k = int(np.argmax(vals))
    a = xs[max(k - 1, 0)]
    b = xs[min(k + 1, grid - 1)]
    res = optimize.minimize_scalar(lambda x: -f(x), bounds=(a, b), method="bounded",
                                   options={"xatol": xatol})
    if res.success and -res.fun >= vals[k]:
        return float(res.x), float(-res.fun)
    return float(xs[k]), float(vals[k])
