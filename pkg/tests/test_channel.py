import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from femtocache.channel import (
    CellGeometry,
    DegenerateRates,
    FadingParams,
    LinkParams,
    PowerSet,
    draw_user_count,
    interference_pdf,
    link_params,
    outage_interference_limited,
    outage_probability,
    sample_sinr,
    sinr_cdf_closed,
    sinr_cdf_quad,
    sinr_pdf,
    user_outages,
)
from femtocache.verify import sample_link_sinr


def test_zero_density_gives_no_users():
    geo = CellGeometry(1.0, 0.0)
    assert all(draw_user_count(geo, s) == 0 for s in range(50))


def test_user_count_mean_matches_poisson_mean():
    geo = CellGeometry(1.0, 38.0)
    rng = np.random.default_rng(3)
    draws = rng.poisson(geo.mean_users, 100_000)  # same law, vectorised
    assert abs(draws.mean() - 38 * math.pi) < 0.01 * 38 * math.pi
    assert draw_user_count(geo, 5) == draw_user_count(geo, 5)


def test_geometry_rejects_crowded_sbs():
    with pytest.raises(ValueError):
        CellGeometry(1.0, 38.0, ((0, 0), (0.5, 0)))


def test_power_set_invariants():
    ps = PowerSet((1, 2, 4))
    assert (ps.p_min, ps.p_max, len(ps)) == (1.0, 4.0, 3)
    with pytest.raises(ValueError):
        PowerSet((2, 1))
    with pytest.raises(ValueError):
        PowerSet((0, 1))


def test_single_sbs_sinr_is_scaled_exponential():
    params = FadingParams(np.array([[2.0]]), noise_power_p0=0.5)
    s = sample_sinr(0, 0, [3.0], params, rng=1, size=200_000)
    # p * g / p0 with g ~ Exp(rate 2): mean 3 / (2 * 0.5)
    assert abs(s.value.mean() - 3.0) < 0.03
    assert stats.kstest(s.value, "expon", args=(0, 3.0)).statistic < 0.01


def test_zero_serving_power_rejected():
    params = FadingParams(np.array([[1.0, 1.0]]), 0.1)
    with pytest.raises(ValueError):
        sample_sinr(0, 0, [0.0, 1.0], params, rng=0)


def _median_from_pdf(link):
    return optimize.brentq(lambda r: sinr_cdf_quad(r, link) - 0.5, 1e-6, 1e3)


def test_three_equal_sbs_median_matches_density():
    params = FadingParams(np.ones((1, 3)), 0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        link = link_params(params.beta[0], [1.0, 1.0, 1.0], 0, 0.1)
    s = sample_sinr(0, 0, [1.0, 1.0, 1.0], params, rng=7, size=400_000)
    analytic = _median_from_pdf(link)
    assert abs(np.median(s.value) - analytic) / analytic < 0.02


def test_tied_rates_are_jittered_with_warning():
    with pytest.warns(RuntimeWarning):
        link = LinkParams.build(1.0, [2.0, 2.0], 0.0)
    assert link.interferer_rates[0] != link.interferer_rates[1]
    with pytest.raises(DegenerateRates):
        LinkParams.build(1.0, [2.0, 2.0], 0.0, jitter_ties=False)


def test_pdf_normalises():
    link = LinkParams.build(0.7, [0.4, 1.9], 0.3)
    mass, _ = integrate.quad(lambda r: float(sinr_pdf(r, link)), 0, np.inf, epsabs=1e-12, limit=500)
    assert abs(mass - 1) < 1e-6


def test_two_sbs_density_matches_samples():
    params = FadingParams(np.array([[0.8, 1.7]]), 0.2)
    link = link_params(params.beta[0], [2.0, 1.0], 0, 0.2)
    s = sample_sinr(0, 0, [2.0, 1.0], params, rng=11, size=1_000_000)
    assert stats.kstest(s.value, lambda r: sinr_cdf_closed(r, link)).statistic < 0.01


def test_noiseless_quadrature_matches_closed_outage():
    link = LinkParams.build(1.3, [0.5, 2.2], 0.0)
    for r in (0.1, 0.7, 2.5):
        assert abs(sinr_cdf_quad(r, link) - outage_interference_limited(r, link)) < 1e-6


def test_interference_limited_outage_matches_monte_carlo():
    link = LinkParams.build(1.0, [1.6], 0.0)
    u = 0.8
    x = sample_link_sinr(link, 1_000_000, np.random.default_rng(2))
    assert abs(outage_probability(1.0, u, link) - np.mean(np.log1p(x) < u)) < 0.005


def test_outage_limits():
    link = LinkParams.build(1.0, [1.6], 0.2)
    assert outage_probability(1.0, 1e-9, link) < 1e-8
    assert outage_probability(1.0, 800.0, link) == 1.0
    with pytest.raises(ValueError):
        outage_probability(1.0, 0.0, link)


def test_interference_density_normalises_and_matches_samples():
    rates = [0.6, 1.1, 2.5]
    mass, _ = integrate.quad(lambda y: float(interference_pdf(y, rates)), 0, np.inf, epsabs=1e-12)
    assert abs(mass - 1) < 1e-6
    rng = np.random.default_rng(4)
    y = sum(rng.exponential(1 / b, 1_000_000) for b in rates)
    cdf = lambda v: np.array([integrate.quad(lambda t: float(interference_pdf(t, rates)), 0, x)[0] for x in v])
    grid = np.quantile(y, np.linspace(0.01, 0.99, 60))
    emp = np.searchsorted(np.sort(y), grid, side="right") / y.size
    assert np.max(np.abs(emp - cdf(grid))) < 0.01


def test_worst_case_sinr_is_dominated():
    params = FadingParams(np.array([[1.0, 0.9, 1.4]]), 0.1)
    ps = PowerSet((1, 2, 4))
    actual = sample_sinr(0, 0, [2.0, 1.0, 2.0], params, rng=5, size=100_000).value
    worst = sample_sinr(0, 0, [2.0, 1.0, 2.0], params, rng=6, size=100_000, worst_case=True, power_set=ps).value
    grid = np.linspace(0.05, 5, 40)
    F = lambda x: np.searchsorted(np.sort(x), grid, side="right") / x.size
    assert np.all(F(worst) >= F(actual) - 0.01)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 3.0), st.lists(st.floats(0.2, 3.0), min_size=0, max_size=3), st.floats(0.05, 1.0))
def test_pdf_nonnegative_and_cdf_monotone(bs, rates, p0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        link = LinkParams.build(bs, rates, p0)
    r = np.linspace(0, 20, 200)
    assert np.all(sinr_pdf(r, link) >= 0)
    F = sinr_cdf_closed(r, link)
    assert np.all(np.diff(F) >= -1e-15)
    assert F[-1] <= 1


def test_outage_monotone_in_power_and_rate():
    beta = np.array([[1.2, 0.8]])
    ps = PowerSet((1, 2, 4))
    o = user_outages(beta, ps, 0.6, 0.3, interferer_powers=[0, 1.0])
    assert np.all(np.diff(o[0]) <= 0)
    us = [0.2, 0.5, 1.0, 2.0]
    vals = [user_outages(beta, ps, u, 0.3, interferer_powers=[0, 1.0])[0, 0] for u in us]
    assert np.all(np.diff(vals) >= 0)


def test_user_outages_single_sbs_closed_form():
    beta = np.array([[0.5], [2.0]])
    o = user_outages(beta, PowerSet((1, 2)), 0.5, 1.0)
    r = math.expm1(0.5)
    expect = 1 - np.exp(-beta * 1.0 * r / np.array([1.0, 2.0]))
    assert np.allclose(o, expect, atol=1e-8)
