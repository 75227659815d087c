"""Oracle checks for each component: independent reference computations
compared against the library paths.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from . import channel, rateless
from .bandit import ArmId, ArmStats, Oracle
from .placement import PlacementProblem, brute_force_knapsack, solve_knapsack
from .popularity import DetectorBank

COMPONENTS = ("channel", "rateless", "knapsack", "detector", "bandit")


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    deviation: float
    tolerance: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: deviation {self.deviation:.3g} (tolerance {self.tolerance:g})"


def _check(name, deviation, tol) -> Check:
    return Check(name, bool(deviation <= tol), float(deviation), tol)


# -- channel ---------------------------------------------------------------

def random_link(rng, n_interferers: int, noise_power: float) -> channel.LinkParams:
    rates = rng.uniform(0.3, 3.0, size=n_interferers + 1)
    return channel.LinkParams.build(float(rates[0]), rates[1:].tolist(), noise_power)


def sample_link_sinr(link: channel.LinkParams, n: int, rng) -> np.ndarray:
    """Draw SINR by simulating the received powers directly."""
    signal = rng.exponential(1.0 / link.signal_rate, n)
    interference = np.zeros(n)
    for b in link.interferer_rates:
        interference += rng.exponential(1.0 / b, n)
    return signal / (interference + link.noise_power)


def pdf_mass(link: channel.LinkParams) -> float:
    val, _ = integrate.quad(lambda r: float(channel.sinr_pdf(r, link)), 0, np.inf, epsabs=1e-12, epsrel=1e-10,
                            limit=500)
    return val


def verify_channel(draws: int = 1_000_000, sets: int = 5, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(sets):
        link = random_link(rng, int(rng.integers(1, 4)), float(rng.uniform(0.1, 1.0)))
        out.append(_check(f"channel pdf mass set {i}", abs(pdf_mass(link) - 1.0), 1e-6))
        x = sample_link_sinr(link, draws, rng)
        ks = stats.kstest(x, lambda r: channel.sinr_cdf_closed(r, link)).statistic
        out.append(_check(f"channel KS set {i}", ks, 0.01))
        r = float(rng.uniform(0.2, 3.0))
        out.append(_check(f"channel quadrature cdf set {i}",
                          abs(channel.sinr_cdf_quad(r, link) - float(channel.sinr_cdf_closed(r, link))), 1e-6))
    for i in range(sets):
        link = random_link(rng, int(rng.integers(1, 4)), 0.0)
        r_n = math.expm1(float(rng.uniform(0.2, 1.5)))
        mc = float((sample_link_sinr(link, 400_000, rng) < r_n).mean())
        out.append(_check(f"interference-limited outage set {i}",
                          abs(channel.outage_interference_limited(r_n, link) - mc), 0.005))
    return out


# -- rateless --------------------------------------------------------------

def enumerate_decode_probability(D: int, Lprime: int, outage: float) -> float:
    """Sum over all 2^D reception patterns with at least L' successes."""
    s = 1.0 - outage
    total = []
    for pattern in itertools.product((0, 1), repeat=D):
        k = sum(pattern)
        if k >= Lprime:
            total.append(s**k * outage ** (D - k))
    return math.fsum(total)


def enumerate_kth_order_cdf(w: int, k: int, outages, Lprime: int) -> float:
    """P[at least k users done by w] by enumerating which users are done."""
    F = [rateless.completion_time_cdf(w, Lprime, o) for o in outages]
    total = 0.0
    for done in itertools.product((0, 1), repeat=len(outages)):
        if sum(done) >= k:
            total += math.prod(F[i] if d else 1 - F[i] for i, d in enumerate(done))
    return total


def verify_rateless(runs: int = 200_000, seed: int = 0) -> list[Check]:
    out = []
    worst = 0.0
    for D in range(1, 9):
        for Lp in range(1, min(D, 4) + 1):
            for o in np.round(np.arange(0.1, 1.0, 0.1), 1):
                pol = rateless.DeliveryPolicy(D, delta=1.0)
                worst = max(worst, abs(rateless.decode_success_probability(pol, Lp, float(o))
                                       - enumerate_decode_probability(D, Lp, float(o))))
    out.append(_check("decode probability vs enumeration", worst, 1e-12))

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 6))
        outs = rng.uniform(0.05, 0.8, n).tolist()
        Lp = int(rng.integers(1, 4))
        w, k = int(rng.integers(Lp, 12)), int(rng.integers(1, n + 1))
        worst = max(worst, abs(rateless.kth_order_cdf(w, k, outs, Lp) - enumerate_kth_order_cdf(w, k, outs, Lp)))
    out.append(_check("order statistics vs enumeration", worst, 1e-12))

    for i, (outs, Lp) in enumerate([((0.2, 0.3, 0.4), 2), ((0.5,), 3), ((0.1, 0.6, 0.3, 0.7), 4)]):
        pol = rateless.DeliveryPolicy.for_file(Lp)
        pmf = rateless.duration_pmf(outs, pol, Lp)
        dur, _ = rateless.simulate_durations(outs, pol, Lp, runs, rng)
        emp = np.bincount(dur, minlength=len(pmf)) / runs
        out.append(_check(f"duration law vs Monte Carlo case {i}", 0.5 * np.abs(emp - pmf).sum(), 0.01))
    return out


# -- knapsack --------------------------------------------------------------

def random_problem(rng, max_items: int = 15, max_size: int = 20, max_capacity: int = 30) -> PlacementProblem:
    n = int(rng.integers(1, max_items + 1))
    items = tuple((f"f{i:02d}", int(rng.integers(1, max_size + 1)), float(rng.integers(1, 50)) / 4) for i in range(n))
    return PlacementProblem(items, int(rng.integers(0, max_capacity + 1)))


def verify_knapsack(instances: int = 1000, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(instances):
        p = random_problem(rng)
        a, b = solve_knapsack(p), brute_force_knapsack(p)
        if a.selected != b.selected or a.value != b.value:
            mismatches += 1
    return [_check(f"knapsack DP vs brute force on {instances} instances", mismatches, 0)]


# -- detector --------------------------------------------------------------

def _llr_direct(segment, psi0: float, psi1: float) -> float:
    total = 0.0
    for q in segment:
        if q > 0:
            if psi1 == 0:
                return -math.inf
            total += (psi0 - psi1) + q * math.log(psi1 / psi0)
        else:
            total += psi0 - psi1
    return total


def _sup_direct(segment, psi0: float, C: float) -> tuple[float, float]:
    m = sum(segment) / len(segment)
    if abs(m - psi0) >= C:
        return _llr_direct(segment, psi0, m), m
    best = (_llr_direct(segment, psi0, psi0 + C), psi0 + C)
    if psi0 - C >= 0:
        lo = (_llr_direct(segment, psi0, psi0 - C), psi0 - C)
        if lo[0] > best[0]:
            best = lo
    return best


def scan_detector(stream, h: float, C: float, init: int, window_max: int):
    """Reference detector: every onset's statistic summed term by term.

    Returns per-slot statistics (NaN while initialising) and alarms as
    ``(slot, onset, psi1)``.
    """
    stats_out, alarms = [], []
    start, rm, n_since = 0, 0.0, 0
    for t, q in enumerate(stream):
        n_since += 1
        rm += (q - rm) / n_since
        if t < init:
            stats_out.append(math.nan)
            continue
        best, onset, psi1 = -math.inf, None, None
        for j in range(max(start, t + 1 - window_max), t + 1):
            v, p1 = _sup_direct(stream[j : t + 1], rm, C)
            if v > best:
                best, onset, psi1 = v, j, p1
        stats_out.append(best)
        if best >= h:
            alarms.append((t, onset, psi1))
            start, rm, n_since = onset, psi1, t + 1 - onset
    return stats_out, alarms


def bank_statistics(stream, h: float, C: float, init: int, window_max: int):
    bank = DetectorBank(1, h, C, window_max)
    stats_out, alarms = [], []
    for t, q in enumerate(stream):
        if t < init:
            bank.observe([q])
            stats_out.append(math.nan)
            continue
        bank.arm()
        for a in bank.step([q]):
            alarms.append((a.alarm_t, a.change_t, a.psi1))
        stats_out.append(float(bank.last_stat[0]))
    return stats_out, alarms


def synthetic_stream(rng, kind: str, n: int = 200) -> list[int]:
    if kind == "none":
        mu = np.full(n, rng.uniform(1, 8))
    elif kind == "single":
        c = int(rng.integers(40, n - 20))
        mu = np.where(np.arange(n) < c, rng.uniform(1, 8), rng.uniform(0.1, 12))
    else:
        c1, c2 = sorted(rng.choice(np.arange(40, n - 10), 2, replace=False))
        a, b, c = rng.uniform(0.1, 12, 3)
        mu = np.select([np.arange(n) < c1, np.arange(n) < c2], [a, b], c)
    return rng.poisson(mu).astype(int).tolist()


def verify_detector(streams: int = 100, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst, alarm_mismatch = 0.0, 0
    for i in range(streams):
        kind = ("none", "single", "double")[i % 3]
        s = synthetic_stream(rng, kind)
        C = float(rng.choice([0.0, 0.5, 1.0]))
        ref, ref_alarms = scan_detector(s, 10.0, C, 20, 150)
        got, got_alarms = bank_statistics(s, 10.0, C, 20, 150)
        for a, b in zip(ref, got):
            if math.isnan(a) and math.isnan(b) or a == b:
                continue
            worst = max(worst, abs(a - b) / max(1.0, abs(a)))
        if [(t, j) for t, j, _ in ref_alarms] != [(t, j) for t, j, _ in got_alarms]:
            alarm_mismatch += 1
    out = [_check(f"GLR statistic vs full scan on {streams} streams", worst, 1e-9),
           _check("GLR alarm sequence vs full scan", alarm_mismatch, 0)]
    # a 6 -> 3 drop is inside a C = 10 band; with psi0 < C only the upper edge remains
    s = rng.poisson(np.where(np.arange(2000) < 1000, 6.0, 3.0)).tolist()
    _, alarms = bank_statistics(s, 10.0, 10.0, 200, 500)
    out.append(_check("no alarm when C exceeds the jump", len(alarms), 0))
    return out


# -- bandit ----------------------------------------------------------------

def verify_bandit(runs: int = 40_000, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    outs = {0: (0.6, 0.5), 1: (0.3, 0.2)}
    powers = (1.0, 2.0)
    Lp = 2
    pol = rateless.DeliveryPolicy.for_file(Lp)
    policy = Oracle(2)
    policy.arms = {ArmId("A", k): ArmStats() for k in (0, 1)}

    def expected(arm):
        return rateless.expected_utility(outs[arm.power], pol, Lp, powers[arm.power])

    pick = policy.choose(1, rng, expected)
    mc = {}
    for k in (0, 1):
        vals = [rateless.simulate_broadcast(outs[k], pol, Lp, powers[k], rng) for _ in range(runs)]
        mc[k] = float(np.mean([v.recovered_K / v.energy_E for v in vals]))
    exhaustive = max(mc, key=mc.get)
    worst = max(abs(mc[k] - expected(ArmId("A", k))) for k in (0, 1))
    return [_check("oracle arm equals exhaustive Monte Carlo choice", float(pick.power != exhaustive), 0),
            _check("analytic expected utility vs Monte Carlo", worst, 0.01)]


def run_component(name: str, quick: bool = False) -> list[Check]:
    if name == "channel":
        return verify_channel(draws=200_000 if quick else 1_000_000)
    if name == "rateless":
        return verify_rateless(runs=50_000 if quick else 200_000)
    if name == "knapsack":
        return verify_knapsack(200 if quick else 1000)
    if name == "detector":
        return verify_detector(30 if quick else 100)
    if name == "bandit":
        return verify_bandit(10_000 if quick else 40_000)
    raise ValueError(f"unknown component {name!r}")
