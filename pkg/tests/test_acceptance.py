"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import numpy as np
import pytest

from conftest import random_trace_free
from kolmolab.asymptotic import build_asymptotic_bundle, verify_dilation_identities, verify_oscillatory_decay
from kolmolab.cli import main
from kolmolab.constants import small_time_slope
from kolmolab.covariance import (covariance_bundle, covariance_matrices, covariance_quadrature_oracle,
                                 det_and_volume)
from kolmolab.geometry import analytic_c, kernel_ratio_check, onion_containment_check
from kolmolab.harnack_liouville import estimate_c_star, make_solution, verify_harnack, verify_liouville_decay
from kolmolab.kernel import (MeanValueParams, MonteCarloScheme, TensorScheme, log_fundamental_solution_batch,
                             mvf_integrate, residual_K)
from kolmolab.models import builtin_model
from kolmolab.reports import lemma_triples

MODELS = ("heat1d", "rotation", "kolmogorov", "mix")
MC_1E6 = MonteCarloScheme(samples=1 << 20, seed=11)


def verdict(record_property, k, ok, detail):
    line = f"ACCEPTANCE {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    record_property("acceptance", line)
    assert ok, line


def spec_of(name):
    return builtin_model(name).spec()


def one(x, t):
    return np.ones_like(t)


def test_01_covariance_oracle(record_property):
    specs = [spec_of(m) for m in ("heat1d", "rotation", "kolmogorov")]
    specs += [random_trace_free(seed) for seed in range(5)]
    worst = 0.0
    for spec in specs:
        for s in np.logspace(-3, 3, 20):
            C = covariance_matrices(spec, s)[2]
            scale = np.abs(C).max()
            ref = covariance_quadrature_oracle(spec, s, max(1e-13, 1e-10 * scale))
            worst = max(worst, np.abs(C - ref).max() / scale)
    verdict(record_property, 1, worst <= 1e-9, f"max relative error {worst:.2e} (tol 1e-9)")


def test_02_kolmogorov_pins(record_property):
    kol = spec_of("kolmogorov")
    worst = 0.0
    for s in (0.1, 1.0, 10.0):
        b = covariance_bundle(kol, s)
        C = np.array([[s, -s ** 2 / 2], [-s ** 2 / 2, s ** 3 / 3]])
        M = np.array([[s, s ** 2 / 2], [s ** 2 / 2, s ** 3 / 3]])
        worst = max(worst, np.max(np.abs(b.C - C) / np.abs(C)), np.max(np.abs(b.M - M) / np.abs(M)),
                    abs(np.exp(b.logD) / (s ** 4 / 12) - 1))
    verdict(record_property, 2, worst <= 1e-12, f"max relative error {worst:.2e} (tol 1e-12)")


def test_03_constants_fixtures(record_property, constants_cache):
    rot = constants_cache("rotation")
    errs = {
        "rot.c_minus": abs(rot.c_minus - 1), "rot.c_plus": abs(rot.c_plus - 1),
        "rot.c_d": abs(rot.c_d - 4), "rot.k0": abs(rot.k0 - 1),
        "heat.c_d": abs(constants_cache("heat1d").c_d - 2),
        "kol.c_d": abs(constants_cache("kolmogorov").c_d - 16),
    }
    slopes = {m: small_time_slope(spec_of(m)) for m in ("heat1d", "rotation", "kolmogorov")}
    expect = {"heat1d": 1, "rotation": 1, "kolmogorov": 3}
    ok = max(errs.values()) <= 1e-9 and all(abs(slopes[m] - expect[m]) <= 0.1 for m in slopes)
    detail = f"max fixture error {max(errs.values()):.1e}; slopes " + ", ".join(
        f"{m}={v:.3f}" for m, v in slopes.items())
    verdict(record_property, 3, ok, detail)


def test_04_kernel_normalisation(record_property):
    rows = []
    ok = True
    for name, p in (("heat1d", 3), ("kolmogorov", 7)):
        spec = spec_of(name)
        z0 = (np.zeros(spec.N), 0.0)
        for s in (1.0, 4.0):
            r = det_and_volume(covariance_bundle(spec, s), p).Vp
            mc = mvf_integrate(spec, one, z0, MeanValueParams(p, r, MC_1E6))
            ok &= abs(mc.estimate - 1) <= 1e-2
            rows.append(f"{name}(r={r:.3g})={mc.estimate:.4f}")
            if name == "heat1d":
                det = mvf_integrate(spec, one, z0, MeanValueParams(p, r, TensorScheme()))
                ok &= abs(det.estimate - mc.estimate) <= 1e-2 * abs(det.estimate)
                rows.append(f"tensor={det.estimate:.6f}")
    verdict(record_property, 4, ok, "; ".join(rows))


def _mvf_cases():
    heat, kol, rot = spec_of("heat1d"), spec_of("kolmogorov"), spec_of("rotation")
    return [
        ("quadratic/heat1d", heat, 3, make_solution(heat, "Quadratic", {"S0": [[1.0]], "m0": 0.5})),
        ("linear/kolmogorov", kol, 7, make_solution(kol, "Linear", {"c0": [0.3, 1.0]})),
        ("exponential/rotation", rot, 3, make_solution(rot, "Exponential", {"c0": [0.4, -0.2]})),
    ]


def test_05_mvf_exact_solutions(record_property):
    rng = np.random.default_rng(5)
    worst = -np.inf
    for label, spec, p, u in _mvf_cases():
        r = det_and_volume(covariance_bundle(spec, 1.0), p).Vp
        for _ in range(5):
            z0 = (rng.uniform(-1, 1, spec.N), rng.uniform(-1, 1))
            target = u(z0[0], z0[1])[0]
            res = mvf_integrate(spec, lambda x, t: u(x, t), z0, MeanValueParams(p, r, MC_1E6))
            tol = max(3 * res.stderr, 1e-2 * max(abs(target), 1.0))
            worst = max(worst, abs(res.estimate - target) / tol)
    verdict(record_property, 5, worst <= 1.0, f"worst error / tolerance = {worst:.3f}")


def test_06_residual_refinement(record_property):
    ratios = []
    for name in MODELS:
        spec = spec_of(name)
        rng = np.random.default_rng(6)

        def gamma(x, t, spec=spec):
            return np.exp(log_fundamental_solution_batch(spec, x, t, np.zeros(spec.N), -1.0))

        for _ in range(20):
            z = (rng.uniform(-0.5, 0.5, spec.N), rng.uniform(-0.5, 0.5))
            ratios.append(abs(residual_K(spec, gamma, z, 1e-2)) / abs(residual_K(spec, gamma, z, 5e-3)))
    ratios = np.array(ratios)
    ok = bool(np.all((ratios >= 3.5) & (ratios <= 4.5)))
    verdict(record_property, 6, ok, f"ratios in [{ratios.min():.3f}, {ratios.max():.3f}] over {ratios.size} points")


def test_07_asymptotic_structure(record_property):
    cfg = builtin_model("kolmogorov")
    b = build_asymptotic_bundle(cfg.spec(), cfg.structure())
    c_err = np.abs(b.C_inf_1 - np.array([[1, -0.5], [-0.5, 1 / 3]])).max()
    rng = np.random.default_rng(7)
    dil = max(verify_dilation_identities(builtin_model(m).structure(), rng.uniform(0.1, 10, 50),
                                         rng.uniform(-5, 5, 50))["max_residual"] for m in MODELS)
    mix = builtin_model("mix")
    osc = verify_oscillatory_decay(mix.spec(), mix.structure(), 10.0, 1e4)
    slopes = [osc[k] for k in ("slope_res_S", "slope_res_flip") if osc[k] is not None]
    ok = (c_err <= 1e-12 and dil <= 1e-9 and len(slopes) > 0
          and all(abs(s + 1) <= 0.1 for s in slopes) and osc["tA_growth_per_decade"] <= 3.0)
    detail = (f"C_inf(1) err {c_err:.1e}; dilation {dil:.1e}; mix slopes "
              + ", ".join(f"{s:.3f}" for s in slopes) + f"; tA growth {osc['tA_growth_per_decade']:.2f}")
    verdict(record_property, 7, ok, detail)


def test_08_containment(record_property, constants_cache):
    total = 0
    worst = np.inf
    for name in MODELS:
        spec = spec_of(name)
        z0, triples = lemma_triples(spec)
        assert triples[0][0] == z0[1] - 1
        for k, (t, x) in enumerate(triples):
            rep = onion_containment_check(spec, constants_cache(name), z0, t, x, 10_000, seed=k)
            total += rep.violations
            worst = min(worst, rep.worst_margin)
    verdict(record_property, 8, total == 0, f"{total} violations; worst margin {worst:.3e}")


def test_09_kernel_ratio(record_property, constants_cache):
    mins = {}
    for name in MODELS:
        spec = spec_of(name)
        z0, triples = lemma_triples(spec)
        t, x = triples[1]
        mins[name] = min(kernel_ratio_check(spec, constants_cache(name), z0, t, x, 10_000, seed=9,
                                            boundary=b).min_ratio for b in (False, True))
    rot_c = analytic_c(spec_of("rotation"), constants_cache("rotation"))["c"]
    ok = all(v > 0 for v in mins.values()) and mins["rotation"] >= rot_c
    detail = ", ".join(f"{m}={v:.3e}" for m, v in mins.items()) + f"; rotation analytic_c {rot_c:.3e}"
    verdict(record_property, 9, ok, detail)


def test_10_harnack(record_property, constants_cache):
    violations = 0
    for name in MODELS:
        spec = spec_of(name)
        K = constants_cache(name)
        c_star = estimate_c_star(K, analytic_c(spec, K)["c"])
        sols = [make_solution(spec, "Constant", {"c": 1.0}),
                make_solution(spec, "Exponential", {"c0": np.eye(spec.N)[-1]}),
                make_solution(spec, "Exponential", {"c0": 0.5 * np.ones(spec.N), "g0": 0.2})]
        for k, u in enumerate(sols):
            rep = verify_harnack(spec, K, u, (np.zeros(spec.N), 0.0), 1000, seed=k, c_star=c_star)
            assert rep.samples >= 100
            violations += rep.violations
    verdict(record_property, 10, violations == 0, f"{violations} violations over {len(MODELS)} models")


def test_11_liouville(record_property):
    rot = spec_of("rotation")
    e = make_solution(rot, "Exponential", {"c0": [1.0, 0.0]})
    rel = abs(e(np.zeros(2), -10.0)[0] / np.exp(-10.0) - 1)
    failed = []
    for name in MODELS:
        spec = spec_of(name)
        rng = np.random.default_rng(11)
        xs = rng.standard_normal((4, spec.N))
        e1 = make_solution(spec, "Exponential", {"c0": np.eye(spec.N)[0]})
        e2 = make_solution(spec, "Exponential", {"c0": 0.5 * rng.standard_normal(spec.N), "g0": 0.1})
        sols = [make_solution(spec, "Constant", {"c": 3.0}), e1, e2,
                make_solution(spec, "Sum", {"children": [e1, e2], "weights": [1.0, 2.0]})]
        failed += [(name, u.family.value) for u in sols if not verify_liouville_decay(spec, u, xs).passed]
    verdict(record_property, 11, rel <= 1e-12 and not failed, f"closed form rel err {rel:.1e}; failures {failed}")


@pytest.mark.parametrize("suite", ["constants", "kernel", "harnack"])
def test_12_determinism(suite, tmp_path, record_property):
    extra = ["--samples", "65536"] if suite == "kernel" else []
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    codes = [main([suite, "--model", "kolmogorov", *extra, "--out", str(p)]) for p in (a, b)]
    same = a.read_bytes() == b.read_bytes()
    verdict(record_property, 12, same and codes == [0, 0], f"{suite}: byte-identical={same}, exit codes {codes}")
