import numpy as np
import pytest

from kolmolab.errors import PreconditionError
from kolmolab.geometry import (analytic_c, in_paraboloid, in_sigma, kernel_ratio_check, lemma_setup,
                               onion_containment_check, paraboloid_membership_and_entry, paraboloid_q,
                               sigma_section)
from kolmolab.kernel import omega, onion_geometry

# frozen from a seeded run (seed 0, 10^4 samples); see test_heat_kernel_ratio_fixture
HEAT_MIN_RATIO = 1.122279838363928


def test_vertex_line_is_inside(heat):
    q = paraboloid_q(heat, ([1.5], 0.0), [1.5], -np.logspace(-3, 3, 20))
    np.testing.assert_array_equal(q, 0.0)
    assert paraboloid_q(heat, ([0.0], 0.0), [0.0], 0.0)[0] == np.inf


def test_heat_entry_time(heat):
    res = paraboloid_membership_and_entry(heat, ([0.0], 0.0), [2.0])
    assert res.found
    assert res.T_entry == pytest.approx(-4.0, rel=1e-8)
    assert paraboloid_membership_and_entry(heat, ([0.0], 0.0), [2.0], t_probe=-5.0).member
    assert not paraboloid_membership_and_entry(heat, ([0.0], 0.0), [2.0], t_probe=-3.0).member


@pytest.mark.parametrize("x", [[2.0, 2.0], [0.3, -1.0], [5.0, 0.0]])
def test_rotation_entry_time(rot, x):
    res = paraboloid_membership_and_entry(rot, (np.zeros(2), 1.0), x)
    assert res.T_entry == pytest.approx(1.0 - np.dot(x, x), rel=1e-8)


def test_entry_not_found_within_horizon(heat):
    res = paraboloid_membership_and_entry(heat, ([0.0], 0.0), [1e4], horizon=1e3)
    assert not res.found and res.T_entry is None and res.horizon == 1e3


@pytest.mark.parametrize("name", ["heat", "rot", "kol", "mix"])
def test_absorption(name, request):
    spec = request.getfixturevalue(name)
    rng = np.random.default_rng(7)
    z0 = (np.zeros(spec.N), 0.0)
    for _ in range(10):
        x = rng.standard_normal(spec.N)
        x *= rng.uniform(0, 10) / np.linalg.norm(x)
        res = paraboloid_membership_and_entry(spec, z0, x)
        assert res.found
        later = res.T_entry - np.logspace(-6, np.log10(1e6 + res.T_entry), 200)
        assert np.all(in_paraboloid(spec, z0, x, later))


@pytest.mark.parametrize("name", ["rot", "kol", "mix"])
def test_sigma_sections_are_paraboloid_slices(name, request):
    spec = request.getfixturevalue(name)
    rng = np.random.default_rng(3)
    z0 = (rng.standard_normal(spec.N), 0.5)
    for s in (0.3, 2.0, 30.0):
        center, L = sigma_section(spec, z0, s)
        pts = center + 0.8 * rng.standard_normal((500, spec.N)) @ L.T
        a = in_sigma(spec, z0, s, pts)
        b = in_paraboloid(spec, z0, pts, 0.5 - s)
        assert np.array_equal(a, b)
        assert 0 < a.sum() < len(a)


def test_onion_inclusion_monotone_in_r(kol):
    z0 = (np.array([0.2, 0.1]), 0.0)
    small = onion_geometry(kol, z0, 1e3, 7)
    big = onion_geometry(kol, z0, 1e5, 7)
    x, t = small.sample(1000, np.random.default_rng(0))
    assert np.all(big.contains(x, t))


def test_hypotheses_enforced(heat, constants_cache):
    c = constants_cache("heat1d")
    with pytest.raises(PreconditionError) as info:
        lemma_setup(heat, c, ([0.0], 0.0), -0.5, [0.0], c.theta)
    assert info.value.reason == "t too recent"
    with pytest.raises(PreconditionError) as info:
        lemma_setup(heat, c, ([0.0], 0.0), -2.0, [5.0], c.theta)
    assert info.value.reason == "x outside Sigma"


def test_containment_heat(heat, constants_cache):
    c = constants_cache("heat1d")
    rep = onion_containment_check(heat, c, ([0.0], 0.0), -2.0, [0.0], 10_000, seed=0)
    assert rep.violations == 0 and rep.worst_margin > 0


@pytest.mark.parametrize("name, model", [("heat", "heat1d"), ("rot", "rotation"), ("kol", "kolmogorov"),
                                         ("mix", "mix")])
def test_containment_edge_time(name, model, request, constants_cache):
    spec = request.getfixturevalue(name)
    c = constants_cache(model)
    rep = onion_containment_check(spec, c, (np.zeros(spec.N), 0.0), -1.0, np.zeros(spec.N), 5000, seed=1)
    assert rep.violations == 0


def test_inner_center_in_outer(rot, constants_cache):
    c = constants_cache("rotation")
    setup = lemma_setup(rot, c, (np.zeros(2), 0.0), -3.0, np.array([0.5, 0.5]), c.theta)
    s = 0.5 * setup.inner.s_max
    center, _, _ = setup.inner.section(s)
    assert setup.outer.contains(center[None], -3.0 - s)[0]


def test_containment_reproducible(kol, constants_cache):
    c = constants_cache("kolmogorov")
    args = (kol, c, (np.zeros(2), 0.0), -5.0, np.zeros(2), 2000)
    assert onion_containment_check(*args, seed=4) == onion_containment_check(*args, seed=4)


def _max_power_log_closed(a, c, b):
    s = b * np.exp(-c / a)
    return s ** a * (c / a) ** c if s < 1 else np.log(b) ** c


def test_analytic_c_rotation(rot, constants_cache):
    c = constants_cache("rotation")
    got = analytic_c(rot, c)
    b = 4.0 ** (1 / 5)
    Mp = _max_power_log_closed(0.5, 2.5, b)
    assert got["M_p"] == pytest.approx(Mp, rel=1e-9)
    assert got["M_p_prime"] == pytest.approx(Mp, rel=1e-9)
    w = omega(3) * 8
    Cp = w * (1 + 3 / 5)
    assert got["C_p"] == pytest.approx(Cp, rel=1e-9)
    assert got["C_p_prime"] == pytest.approx(w * max(3 / 5, c.K_T0), rel=1e-9)
    expect = 3 * w / (5 * 2 * Mp * Cp) * (np.log(2) / 2.5) ** 2.5
    assert got["c"] == pytest.approx(expect, rel=1e-9)


def test_analytic_c_kolmogorov_uses_both_maxima(kol, constants_cache):
    c = constants_cache("kolmogorov")
    got = analytic_c(kol, c)
    b = c.c_d ** (1 / (2 * c.Q_p))
    assert got["M_p"] == pytest.approx(_max_power_log_closed(2.5, 4.5, b), rel=1e-9)
    assert got["M_p_prime"] == pytest.approx(_max_power_log_closed(0.5, 4.5, b), rel=1e-9)


def test_heat_kernel_ratio_fixture(heat, constants_cache):
    c = constants_cache("heat1d")
    rep = kernel_ratio_check(heat, c, ([0.0], 0.0), -2.0, [0.0], 10_000, seed=0)
    assert rep.min_ratio == pytest.approx(HEAT_MIN_RATIO, rel=1e-9)
    assert rep.exceeds_analytic and rep.zero_denominators == 0


@pytest.mark.parametrize("name, model", [("rot", "rotation"), ("kol", "kolmogorov"), ("mix", "mix")])
def test_kernel_ratio_positive(name, model, request, constants_cache):
    spec = request.getfixturevalue(name)
    c = constants_cache(model)
    rep = kernel_ratio_check(spec, c, (np.zeros(spec.N), 0.0), -2.0, np.zeros(spec.N), 5000, seed=2)
    assert rep.min_ratio > 0
    assert rep.theta_bar == 2 * c.theta


@pytest.mark.parametrize("name, model", [("heat", "heat1d"), ("rot", "rotation"), ("kol", "kolmogorov")])
def test_kernel_ratio_near_boundary(name, model, request, constants_cache):
    spec = request.getfixturevalue(name)
    c = constants_cache(model)
    rep = kernel_ratio_check(spec, c, (np.zeros(spec.N), 0.0), -2.0, np.zeros(spec.N), 5000, seed=0,
                             boundary=True)
    assert rep.boundary and rep.min_ratio > 0
