"""Suite orchestration and report serialisation.

A suite turns one model configuration into a :class:`SuiteReport`: a flat
metrics map, the grids and seeds needed to reproduce it, and the list of
violations.  Serialisation is canonical (fixed key order, 17 significant
digits, ``null`` for non-finite numbers) so identical runs give identical
bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .asymptotic import (build_asymptotic_bundle, check_oscillatory_decay, verify_claimstructure,
                         verify_dilation_identities, verify_oscillatory_decay, verify_sandwich)
from .constants import compute_constants
from .covariance import covariance_batch, covariance_bundle, det_and_volume
from .errors import InvalidInputError, PreconditionError
from .geometry import analytic_c, kernel_ratio_check, onion_containment_check, sigma_section
from .harnack_liouville import default_t_sequence, estimate_c_star, make_solution, verify_harnack, verify_liouville_decay
from .kernel import MeanValueParams, MonteCarloScheme, TensorScheme, mvf_integrate
from .matrix_core import SpectralClass, classify_spectrum, lambda_min_spd
from .models import ModelConfig

STATUSES = ("pass", "flagged", "fail")
DEFAULT_SEED = 20240229


@dataclass
class SuiteReport:
    suite: str
    model: str
    status: str = "pass"
    metrics: dict = field(default_factory=dict)
    grids_and_seeds: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    table: list = field(default_factory=list, repr=False)
    columns: tuple = field(default=(), repr=False)

    def violate(self, location: str, margin: float):
        self.violations.append({"location": location, "margin": float(margin)})
        self.status = "fail"

    def flag(self):
        if self.status == "pass":
            self.status = "flagged"

    def to_dict(self) -> dict:
        if self.status == "pass" and self.violations:
            raise AssertionError("a passing report cannot carry violations")
        return {"suite": self.suite, "model": self.model, "status": self.status, "metrics": self.metrics,
                "grids_and_seeds": self.grids_and_seeds, "violations": self.violations}


# ------------------------------------------------------------ serialisation


def _num(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        return "null"
    return "%.17g" % x


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def to_json(report: SuiteReport | dict) -> str:
    d = report.to_dict() if isinstance(report, SuiteReport) else report
    return _encode(d, 2, 0) + "\n"


def to_csv(report: SuiteReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.columns)
    for row in report.table:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_atomic(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ------------------------------------------------------------------- suites


@dataclass(frozen=True)
class Overrides:
    p: int | None = None
    seed: int | None = None
    t_min: float | None = None
    t_max: float | None = None
    t_points: int | None = None
    samples: int | None = None

    def resolve(self, config: ModelConfig, key: str, default):
        val = getattr(self, key)
        if val is None:
            val = config.defaults.get(key, default)
        return val


def _all_imaginary(spec, suite):
    rep = classify_spectrum(spec)
    if not rep.hypoelliptic or rep.spectral_class is not SpectralClass.ALL_IMAGINARY:
        raise PreconditionError(f"suite {suite!r} needs a hypoelliptic spec with imaginary spectrum",
                                reason="spectrum")
    return rep


def _constants(config, ov, spec):
    t_max = ov.resolve(config, "t_max", 1e6)
    t_points = ov.resolve(config, "t_points", 200)
    return compute_constants(spec, ov.resolve(config, "p", None), t_max=t_max, t_points=t_points)


def suite_classify(config, ov):
    spec = config.spec()
    rep = classify_spectrum(spec)
    ev = np.array(rep.eigenvalues, dtype=complex)
    out = SuiteReport("classify", config.name)
    out.metrics = {
        "N": spec.N,
        "hypoelliptic": rep.hypoelliptic,
        "kalman_index": -1 if rep.kalman_index is None else rep.kalman_index,
        "spectral_class": rep.spectral_class.value,
        "liouville_Linf": rep.liouville_Linf,
        "max_real_part": float(np.max(ev.real)),
        "max_abs_real_part": float(np.max(np.abs(ev.real))),
    }
    out.columns = ("index", "real", "imag")
    out.table = [(i, float(z.real), float(z.imag)) for i, z in enumerate(ev)]
    if not rep.hypoelliptic:
        out.violate("kalman_rank", 1.0)
    return out


def suite_constants(config, ov):
    spec = config.spec()
    K = _constants(config, ov, spec)
    out = SuiteReport("constants", config.name)
    d = K.to_dict()
    grids = d.pop("grids")
    d.pop("model_name")
    out.metrics = d
    out.grids_and_seeds = {"grids": grids}
    out.columns = ("t", "lambda_min_C_over_t", "lambda_min_M_over_t")
    t = np.asarray(grids["large_t"])
    batch = covariance_batch(spec, t)
    out.table = list(zip(t, lambda_min_spd(batch.C) / t, lambda_min_spd(batch.M) / t))
    if abs(K.small_time_slope - (2 * K.n0 + 1)) > 0.1:
        out.violate("small_time_slope", abs(K.small_time_slope - (2 * K.n0 + 1)) - 0.1)
    return out


def suite_structure(config, ov):
    structure = config.structure()
    if structure is None:
        raise InvalidInputError("structure suite needs a 'jordan' block in the model config")
    spec = config.spec()
    seed = ov.resolve(config, "seed", DEFAULT_SEED)
    rng = np.random.default_rng(seed)
    bundle = build_asymptotic_bundle(spec, structure)
    t_min = ov.resolve(config, "t_min", 10.0)
    t_max = ov.resolve(config, "t_max", 1e4)
    dil = verify_dilation_identities(structure, rng.uniform(0.1, 10.0, 20), rng.uniform(-5.0, 5.0, 20))
    claim = verify_claimstructure(spec, structure, np.logspace(1, 4, 13), rng.standard_normal((8, spec.N)), bundle)
    osc = verify_oscillatory_decay(spec, structure, t_min, t_max, bundle=bundle)
    sw = verify_sandwich(spec, structure, np.logspace(0, 6, 50), rng.standard_normal((8, spec.N)), bundle)
    out = SuiteReport("structure", config.name)
    out.metrics = {
        "lambda_0": bundle.lambda_0,
        "Lambda_0": bundle.Lambda_0,
        "dilation_max_residual": dil["max_residual"],
        "claim_max_envelope": claim["max_envelope"],
        "claim_growth_per_decade": claim["growth_per_decade"],
        "slope_res_S": osc["slope_res_S"],
        "slope_res_flip": osc["slope_res_flip"],
        "tA_growth_per_decade": osc["tA_growth_per_decade"],
        "quadrature_check": max(claim["quadrature_check"], osc["quadrature_check"]),
        "sandwich_lower": sw["lower"],
        "sandwich_upper": sw["upper"],
        "sandwich_T": sw["T"],
    }
    for i, row in enumerate(bundle.C_inf_1):
        for j, v in enumerate(row):
            out.metrics[f"C_inf_1[{i},{j}]"] = float(v)
    out.grids_and_seeds = {"seed": seed, "oscillatory_t": [float(t_min), float(t_max)]}
    out.columns = ("t", "res_S", "res_flip", "res_A")
    out.table = list(zip(osc["t"], osc["res_S"], osc["res_flip"], osc["res_A"]))
    if not dil["passed"]:
        out.violate("dilation_identities", dil["max_residual"])
    if not claim["bounded"]:
        out.violate("claimstructure_growth", claim["growth_per_decade"])
    for v in check_oscillatory_decay(osc):
        out.violate(v["location"], v["margin"])
    if sw["T"] is None:
        out.violate("sandwich", 1.0)
    return out


def _vp(spec, p, s):
    return det_and_volume(covariance_bundle(spec, s), p).Vp


def tensor_nodes(N: int) -> int:
    """Nodes per direction keeping the hyperspherical product near 10^5 points."""
    return {1: 24, 2: 24, 3: 12}.get(N, 8)


def suite_kernel(config, ov):
    spec = config.spec()
    rep = classify_spectrum(spec)
    p = ov.resolve(config, "p", None)
    if p is None:
        p = 4 * rep.kalman_index + 3
    seed = ov.resolve(config, "seed", DEFAULT_SEED)
    samples = ov.resolve(config, "samples", 128 * 8192)
    z0 = (np.zeros(spec.N), 0.0)
    one = lambda x, t: np.ones(len(t))  # noqa: E731
    out = SuiteReport("kernel", config.name)
    out.columns = ("r", "scheme", "estimate", "stderr")
    gaps = (1.0, 4.0)
    tensor = TensorScheme(nodes=tensor_nodes(spec.N))
    for k, s in enumerate(gaps):
        r = _vp(spec, p, s)
        mc = mvf_integrate(spec, one, z0, MeanValueParams(p, r, MonteCarloScheme(samples, seed + k)))
        det = mvf_integrate(spec, one, z0, MeanValueParams(p, r, tensor))
        out.metrics[f"normalization_mc_{k}"] = mc.estimate
        out.metrics[f"normalization_se_{k}"] = mc.stderr
        out.metrics[f"normalization_tensor_{k}"] = det.estimate
        out.metrics[f"r_{k}"] = r
        out.table += [(r, "mc", mc.estimate, mc.stderr), (r, "tensor", det.estimate, 0.0)]
        err = abs(mc.estimate - 1.0)
        if err > max(1e-2, 3 * mc.stderr):
            out.violate(f"normalization_mc_{k}", err - max(1e-2, 3 * mc.stderr))
        if abs(det.estimate - mc.estimate) > 1e-2 * abs(det.estimate) + 3 * mc.stderr:
            out.violate(f"scheme_agreement_{k}", abs(det.estimate - mc.estimate))
    out.metrics["p"] = p
    out.grids_and_seeds = {"seed": seed, "samples": samples, "strata": 128, "onion_gaps": list(gaps),
                           "tensor": {"slices": tensor.slices, "nodes": tensor.nodes}}
    return out


def lemma_triples(spec, z0=None):
    """Three ``(t, x)`` pairs with ``t <= t0 - 1`` and ``x`` in the section, including the edge."""
    z0 = z0 or (np.zeros(spec.N), 0.0)
    out = []
    for s, frac in ((1.0, 0.0), (5.0, 0.5), (50.0, 0.9)):
        center, L = sigma_section(spec, z0, s)
        direction = np.ones(spec.N) / np.sqrt(spec.N)
        out.append((z0[1] - s, center + frac * L @ direction))
    return z0, out


def suite_containment(config, ov):
    spec = config.spec()
    _all_imaginary(spec, "containment")
    K = _constants(config, ov, spec)
    seed = ov.resolve(config, "seed", DEFAULT_SEED)
    n = ov.resolve(config, "samples", 10_000)
    z0, triples = lemma_triples(spec)
    out = SuiteReport("containment", config.name)
    out.columns = ("t", "samples", "violations", "worst_margin")
    for k, (t, x) in enumerate(triples):
        r = onion_containment_check(spec, K, z0, t, x, n, seed + k)
        out.metrics[f"violations_{k}"] = r.violations
        out.metrics[f"worst_margin_{k}"] = r.worst_margin
        out.table.append((t, n, r.violations, r.worst_margin))
        if r.violations:
            out.violate(f"triple_{k}", r.worst_margin)
    out.metrics["theta"] = K.theta
    out.grids_and_seeds = {"seed": seed, "samples": n, "t": [t for t, _ in triples]}
    return out


def suite_kernel_ratio(config, ov):
    spec = config.spec()
    _all_imaginary(spec, "kernel-ratio")
    K = _constants(config, ov, spec)
    seed = ov.resolve(config, "seed", DEFAULT_SEED)
    n = ov.resolve(config, "samples", 10_000)
    z0, triples = lemma_triples(spec)
    out = SuiteReport("kernel-ratio", config.name)
    out.columns = ("t", "boundary", "samples", "min_ratio", "analytic_c")
    worst = np.inf
    for k, (t, x) in enumerate(triples):
        for boundary in (False, True):
            r = kernel_ratio_check(spec, K, z0, t, x, n, seed + k, boundary=boundary)
            out.table.append((t, int(boundary), n, r.min_ratio, r.analytic_c))
            worst = min(worst, r.min_ratio)
    ac = analytic_c(spec, K)
    out.metrics = {"min_ratio": worst, "analytic_c": ac["c"], "ratio_exceeds_analytic_c": bool(worst >= ac["c"]),
                   "M_p": ac["M_p"], "M_p_prime": ac["M_p_prime"], "C_p": ac["C_p"], "C_p_prime": ac["C_p_prime"],
                   "theta_bar": K.theta_bar, "p": K.p}
    out.grids_and_seeds = {"seed": seed, "samples": n, "t": [t for t, _ in triples], "boundary_R_max": 1e-3}
    if not worst >= ac["c"]:
        out.flag()
    return out


def _exponential_pair(spec):
    N = spec.N
    return [make_solution(spec, "Exponential", {"c0": np.eye(N)[-1]}),
            make_solution(spec, "Exponential", {"c0": 0.5 * np.ones(N)})]


def suite_harnack(config, ov):
    spec = config.spec()
    _all_imaginary(spec, "harnack")
    K = _constants(config, ov, spec)
    seed = ov.resolve(config, "seed", DEFAULT_SEED)
    n = ov.resolve(config, "samples", 1000)
    c_star = estimate_c_star(K, analytic_c(spec, K)["c"])
    z0 = (np.zeros(spec.N), 0.0)
    sols = [("constant", make_solution(spec, "Constant", {"c": 1.0}))]
    sols += [(f"exponential_{i}", u) for i, u in enumerate(_exponential_pair(spec))]
    out = SuiteReport("harnack", config.name)
    out.columns = ("solution", "samples", "violations", "worst_ratio", "empirical_best")
    out.metrics["c_star"] = c_star
    best = np.inf
    for k, (label, u) in enumerate(sols):
        r = verify_harnack(spec, K, u, z0, n, seed + k, c_star=c_star)
        out.metrics[f"violations_{label}"] = r.violations
        out.metrics[f"worst_ratio_{label}"] = r.worst_ratio
        out.table.append((label, r.samples, r.violations, r.worst_ratio, r.empirical_best))
        best = min(best, r.empirical_best)
        if r.violations:
            out.violate(label, r.worst_log_ratio - r.bound_log)
    out.metrics["empirical_best_constant"] = best
    out.grids_and_seeds = {"seed": seed, "samples": n, "depth": 1e3}
    return out


def suite_liouville(config, ov):
    spec = config.spec()
    seed = ov.resolve(config, "seed", DEFAULT_SEED)
    xs = np.random.default_rng(seed).standard_normal((5, spec.N))
    exps = _exponential_pair(spec)
    sols = [("constant", make_solution(spec, "Constant", {"c": 2.0})),
            ("exponential_0", exps[0]), ("exponential_1", exps[1]),
            ("sum", make_solution(spec, "Sum", {"children": exps, "weights": [1.0, 0.5]}))]
    out = SuiteReport("liouville", config.name)
    out.columns = ("solution", "x_index", "t", "gap")
    for label, u in sols:
        r = verify_liouville_decay(spec, u, xs)
        out.metrics[f"passed_{label}"] = r.passed
        out.metrics[f"final_gap_{label}"] = float(r.gaps[:, -1].max())
        for i in range(xs.shape[0]):
            out.table += [(label, i, float(t), float(g)) for t, g in zip(r.t, r.gaps[i])]
        if not r.passed:
            out.violate(label, float(r.gaps[:, -1].max()))
    out.grids_and_seeds = {"seed": seed, "t_sequence": default_t_sequence().tolist()}
    return out


SUITES = {
    "classify": suite_classify,
    "constants": suite_constants,
    "structure": suite_structure,
    "kernel": suite_kernel,
    "containment": suite_containment,
    "kernel-ratio": suite_kernel_ratio,
    "harnack": suite_harnack,
    "liouville": suite_liouville,
}


def run_suite(config: ModelConfig, suite: str, overrides: Overrides | None = None) -> SuiteReport:
    if suite not in SUITES:
        raise InvalidInputError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    return SUITES[suite](config, overrides or Overrides())


def merge_reports(reports: list[dict]) -> dict:
    """Combine several serialised reports; the merged status is the worst one."""
    if not reports:
        raise InvalidInputError("nothing to merge")
    status = max((r["status"] for r in reports), key=STATUSES.index)
    metrics, grids, violations = {}, {}, []
    for r in reports:
        key = f"{r['suite']}/{r['model']}"
        metrics.update({f"{key}.{k}": v for k, v in r["metrics"].items()})
        grids[key] = r["grids_and_seeds"]
        violations += [{"location": f"{key}.{v['location']}", "margin": v["margin"]} for v in r["violations"]]
    models = sorted({r["model"] for r in reports})
    return {"suite": "report", "model": ",".join(models), "status": status, "metrics": metrics,
            "grids_and_seeds": grids, "violations": violations}
