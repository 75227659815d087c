import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from femtocache.rateless import (
    BroadcastSession,
    DeliveryPolicy,
    FileSpec,
    completion_time_cdf,
    completion_time_pmf,
    decode_success_probability,
    duration_distribution,
    duration_pmf,
    expected_utility,
    kth_order_cdf,
    kth_order_pmf_at_deadline,
    max_completion_cdf,
    reconstruction_pmf,
    simulate_broadcast,
    simulate_durations,
)
from femtocache.verify import enumerate_decode_probability


def test_overhead_rounds_up():
    f = FileSpec("A", 1, 1, ((0, 5.0),))
    assert f.Lprime == 2
    assert FileSpec("J", 40, 7, ((0, 5.0),)).Lprime == 42
    assert FileSpec("J", 20, 7, ((0, 5.0),)).Lprime == 21


def test_schedule_lookup():
    f = FileSpec("B", 1, 1, ((0, 6.0), (1500, 0.1)))
    assert f.intensity_at(1499) == 6.0 and f.intensity_at(1500) == 0.1
    assert f.change_points() == [1500]
    with pytest.raises(ValueError):
        FileSpec("B", 1, 1, ((5, 6.0),))


def test_deadline_from_kappa():
    assert DeliveryPolicy.for_file(2).deadline_D == 6
    assert DeliveryPolicy.for_file(3, kappa=2.5).deadline_D == 8


def test_decode_probability_edges():
    pol = DeliveryPolicy(5, delta=0.9)
    assert decode_success_probability(pol, 3, 0.0) == pytest.approx(0.9)
    assert decode_success_probability(pol, 3, 1.0) == 0.0


def test_decode_probability_four_packets():
    p = decode_success_probability(DeliveryPolicy(4, 1.0), 2, 0.5)
    assert Fraction(p).limit_denominator(1000) == Fraction(11, 16)


def test_decode_probability_enumeration_grid():
    for D in range(1, 9):
        for Lp in range(1, min(D, 4) + 1):
            for o in [0.1 * i for i in range(1, 10)]:
                got = decode_success_probability(DeliveryPolicy(D, 1.0), Lp, o)
                assert abs(got - enumerate_decode_probability(D, Lp, o)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 6), st.floats(0, 1), st.floats(0, 1))
def test_decode_probability_monotone(Lp, extra, o1, o2):
    D = Lp + extra
    lo, hi = sorted((o1, o2))
    pol = DeliveryPolicy(D, 1.0)
    assert decode_success_probability(pol, Lp, hi) <= decode_success_probability(pol, Lp, lo) + 1e-12
    assert decode_success_probability(DeliveryPolicy(D + 1, 1.0), Lp, lo) >= decode_success_probability(pol, Lp, lo) - 1e-12


def test_completion_pmf_special_cases():
    assert completion_time_pmf(3, 3, 0.0) == 1.0
    assert completion_time_pmf(4, 3, 0.0) == 0.0
    w = np.arange(1, 20)
    assert np.allclose(completion_time_pmf(w, 1, 0.5), 0.5**w)


def test_completion_series_and_cdf():
    w = np.arange(2, 201)
    pmf = completion_time_pmf(w, 2, 0.3)
    assert abs(pmf.sum() - 1) < 1e-9
    assert np.allclose(completion_time_cdf(w, 2, 0.3), np.cumsum(pmf), atol=1e-9)


def test_completion_mean():
    rng = np.random.default_rng(1)
    W = 3 + rng.negative_binomial(3, 0.6, 1_000_000)
    assert abs(W.mean() - 3 / 0.6) < 0.01 * 3 / 0.6


def _joint_enumeration(outages, Lp, w):
    """P[every user holds L' packets within w slots] by enumerating packet outcomes."""
    total = 0.0
    n = len(outages)
    for pattern in itertools.product((0, 1), repeat=n * w):
        p = 1.0
        ok = True
        for u in range(n):
            got = pattern[u * w : (u + 1) * w]
            for g in got:
                p *= (1 - outages[u]) if g else outages[u]
            ok &= sum(got) >= Lp
        if ok:
            total += p
    return total


def test_max_completion_matches_joint_enumeration():
    o = (0.2, 0.3, 0.4)
    assert abs(max_completion_cdf(5, o, 2) - _joint_enumeration(o, 2, 5)) < 1e-12
    assert max_completion_cdf(4, (0.3,), 2) == pytest.approx(completion_time_cdf(4, 2, 0.3))
    assert max_completion_cdf(4, (0.3, 0.3), 2) == pytest.approx(completion_time_cdf(4, 2, 0.3) ** 2)


def _kth_order_by_permutation(k, outages, pol, Lp):
    # P[W_(k) = D] summed over which users finish before, at and after D
    D = pol.deadline_D
    below = [completion_time_cdf(D - 1, Lp, o) for o in outages]
    at = [completion_time_pmf(D, Lp, o) for o in outages]
    total = 0.0
    for labels in itertools.product("bae", repeat=len(outages)):
        b, a = labels.count("b"), labels.count("a")
        if b < k <= b + a:
            total += math.prod({"b": below[i], "a": at[i], "e": 1 - below[i] - at[i]}[c] for i, c in enumerate(labels))
    return total


def test_kth_order_at_deadline():
    pol = DeliveryPolicy(4, 1.0)
    o = (0.2, 0.3, 0.4)
    assert abs(kth_order_pmf_at_deadline(2, o, pol, 2) - _kth_order_by_permutation(2, o, pol, 2)) < 1e-12
    assert kth_order_pmf_at_deadline(1, (0.35,), pol, 2) == pytest.approx(completion_time_pmf(4, 2, 0.35))
    assert kth_order_pmf_at_deadline(2, (0.0, 0.0, 0.0), DeliveryPolicy(5, 1.0), 2) == 0.0


def test_kth_order_cdf_extremes():
    o = (0.1, 0.5, 0.7)
    assert kth_order_cdf(6, 3, o, 2) == pytest.approx(max_completion_cdf(6, o, 2))


def test_zero_requesters_send_one_packet():
    out = simulate_broadcast([], DeliveryPolicy(6), 2, 2.0, rng=0)
    assert (out.duration_T, out.energy_E, out.recovered_K) == (1, 2.0, 0)


def test_perfect_channel_broadcast():
    out = simulate_broadcast([0.0] * 4, DeliveryPolicy(9, 1.0), 3, 1.0, rng=0)
    assert out.duration_T == 3 and out.recovered_K == 4


def test_early_stop_probability_matches_duration_law():
    o = (0.2, 0.3, 0.4)
    pol = DeliveryPolicy(6, 1.0)
    rng = np.random.default_rng(9)
    runs = [simulate_broadcast(o, pol, 2, 1.0, rng) for _ in range(100_000)]
    early = np.mean([r.duration_T < 6 for r in runs])
    assert abs(early - duration_pmf(o, pol, 2)[:6].sum()) < 0.01


def test_broadcast_invariants():
    rng = np.random.default_rng(2)
    pol = DeliveryPolicy(8, 0.9)
    for _ in range(2000):
        o = rng.uniform(0, 0.9, rng.integers(1, 6))
        out = simulate_broadcast(o, pol, 3, 2.0, rng)
        assert out.energy_E == 2.0 * out.duration_T
        assert 3 <= out.duration_T <= 8
        assert out.recovered_K <= len(o)
        if out.duration_T < 8:
            assert out.per_user_success.sum() == out.recovered_K


def test_session_refuses_extra_packets():
    s = BroadcastSession([0.0], DeliveryPolicy(3, 1.0), 1, 1.0)
    s.send(np.array([0.5]), np.array([0.5]))
    assert s.done
    with pytest.raises(RuntimeError):
        s.send(np.array([0.5]), np.array([0.5]))


def test_reconstruction_count_law():
    o = (0.2, 0.5, 0.4)
    pol = DeliveryPolicy(6, 0.95)
    rng = np.random.default_rng(4)
    _, K = simulate_durations(o, pol, 2, 100_000, rng)
    emp = np.bincount(K, minlength=4) / K.size
    assert np.max(np.abs(emp - reconstruction_pmf(o, pol, 2))) < 0.01


def test_fixed_count_one_is_censored_negative_binomial():
    pol = DeliveryPolicy(6, 1.0)
    d = duration_distribution(pol, 0.3, 2, 1)
    w = np.arange(2, 6)
    assert np.allclose(d[2:6], completion_time_pmf(w, 2, 0.3))
    assert d[6] == pytest.approx(1 - completion_time_cdf(5, 2, 0.3))


def test_zero_mean_count_is_point_mass():
    d = duration_distribution(DeliveryPolicy(6), 0.3, 2, 0.0)
    assert d[1] == 1.0 and d.sum() == 1.0


def test_poisson_count_duration_matches_monte_carlo():
    pol = DeliveryPolicy(8, 1.0)
    d = duration_distribution(pol, 0.3, 2, 2.0)
    rng = np.random.default_rng(5)
    q = rng.poisson(2.0, 1_000_000)
    W = 2 + rng.negative_binomial(2, 0.7, size=(q.size, max(q.max(), 1)))
    mask = np.arange(W.shape[1])[None, :] < q[:, None]
    T = np.where(q == 0, 1, np.minimum(np.where(mask, W, 0).max(axis=1), 8))
    emp = np.bincount(T, minlength=9) / T.size
    assert 0.5 * np.abs(emp - d).sum() < 0.01


def test_expected_utility_matches_monte_carlo():
    o = (0.2, 0.3, 0.4)
    pol = DeliveryPolicy(6, 0.9)
    rng = np.random.default_rng(6)
    dur, K = simulate_durations(o, pol, 2, 400_000, rng)
    mc = np.mean(K / (2.0 * dur))
    assert abs(expected_utility(o, pol, 2, 2.0) - mc) < 0.003
