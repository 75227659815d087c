"""Rateless-coded broadcast: decode probability, completion times, round
duration, energy and reconstruction counts.

A packet slot is one channel use and one time unit, so energy is power
times the number of packets sent. Each requesting user keeps listening
until it holds L' packets, then Acks whether or not decoding succeeded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import special, stats

COUNT_MASS_TOL = 1e-9


@dataclass(frozen=True)
class FileSpec:
    """A cacheable file and its piecewise-constant per-user request intensity.

    ``popularity_schedule`` is a sequence of ``(start_slot, intensity)``
    pairs; the first entry must start at slot 0.
    """

    label: str
    blocks_L: int
    size_S: int
    popularity_schedule: tuple[tuple[int, float], ...]
    overhead_nu: int | None = None
    overhead_ratio: float = 0.05

    def __post_init__(self):
        if self.blocks_L < 1:
            raise ValueError(f"{self.label}: blocks_L must be >= 1")
        if self.size_S <= 0:
            raise ValueError(f"{self.label}: size must be positive")
        sched = tuple((int(t), float(mu)) for t, mu in self.popularity_schedule)
        if not sched or sched[0][0] != 0:
            raise ValueError(f"{self.label}: schedule must start at slot 0")
        if any(b[0] <= a[0] for a, b in zip(sched, sched[1:])):
            raise ValueError(f"{self.label}: schedule times must increase")
        if any(mu <= 0 for _, mu in sched):
            raise ValueError(f"{self.label}: intensities must be positive")
        object.__setattr__(self, "popularity_schedule", sched)
        if self.overhead_nu is None:
            object.__setattr__(self, "overhead_nu", math.ceil(self.overhead_ratio * self.blocks_L - 1e-12))
        if self.overhead_nu < 0:
            raise ValueError(f"{self.label}: overhead must be nonnegative")

    @property
    def Lprime(self) -> int:
        return self.blocks_L + self.overhead_nu

    def intensity_at(self, t: int) -> float:
        mu = self.popularity_schedule[0][1]
        for start, value in self.popularity_schedule:
            if t < start:
                break
            mu = value
        return mu

    def change_points(self) -> list[int]:
        return [t for t, _ in self.popularity_schedule[1:]]


@dataclass(frozen=True)
class DeliveryPolicy:
    deadline_D: int
    delta: float = 0.95

    def __post_init__(self):
        if self.deadline_D < 1:
            raise ValueError("deadline must be >= 1")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")

    @classmethod
    def for_file(cls, Lprime: int, kappa: float = 3.0, delta: float = 0.95) -> "DeliveryPolicy":
        """Deadline ceil(kappa * L'), so larger files get longer rounds."""
        if kappa < 1:
            raise ValueError("kappa must be >= 1")
        return cls(math.ceil(kappa * Lprime - 1e-12), delta)


@dataclass
class BroadcastOutcome:
    duration_T: int
    energy_E: float
    recovered_K: int
    per_user_success: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def _check_prob(o: float):
    if not 0.0 <= o <= 1.0:
        raise ValueError("outage must lie in [0, 1]")


def decode_success_probability(policy: DeliveryPolicy, Lprime: int, outage: float) -> float:
    """delta * P[at least L' of D packets get through]."""
    _check_prob(outage)
    D = policy.deadline_D
    if D < Lprime:
        raise ValueError("deadline shorter than L'")
    s = 1.0 - outage
    fail = math.fsum(math.comb(D, l) * s**l * outage ** (D - l) for l in range(Lprime))
    return policy.delta * (1.0 - fail)


def completion_time_pmf(w, Lprime: int, outage: float):
    """P[W = w]: negative binomial number of slots until L' receptions."""
    _check_prob(outage)
    w = np.asarray(w)
    k = w - Lprime
    out = stats.nbinom.pmf(np.maximum(k, 0), Lprime, 1.0 - outage)
    out = np.where(k < 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def completion_time_cdf(w, Lprime: int, outage: float):
    """P[W <= w] = 1 - I_O(w - L' + 1, L') via the regularised incomplete beta."""
    _check_prob(outage)
    w = np.asarray(w, dtype=float)
    k = w - Lprime + 1
    out = special.betainc(Lprime, np.maximum(k, 1.0), 1.0 - outage)
    out = np.where(k < 1, 0.0, out)
    return float(out) if out.ndim == 0 else out


def max_completion_cdf(w, per_user_outages: Sequence[float], Lprime: int):
    """P[max_n W_n <= w] for independent users."""
    out = np.ones_like(np.asarray(w, dtype=float))
    for o in per_user_outages:
        out = out * completion_time_cdf(w, Lprime, o)
    return float(out) if np.ndim(out) == 0 else out


def poisson_binomial_pmf(probs: Sequence[float]) -> np.ndarray:
    pmf = np.array([1.0])
    for p in probs:
        nxt = np.zeros(len(pmf) + 1)
        nxt[:-1] = pmf * (1 - p)
        nxt[1:] += pmf * p
        pmf = nxt
    return pmf


def kth_order_cdf(w: int, k: int, per_user_outages: Sequence[float], Lprime: int) -> float:
    """P[W_(k) <= w], i.e. at least k users done by slot w."""
    n = len(per_user_outages)
    if not 1 <= k <= n:
        raise ValueError("k must lie in 1..n")
    probs = [completion_time_cdf(w, Lprime, o) for o in per_user_outages]
    return float(poisson_binomial_pmf(probs)[k:].sum())


def kth_order_pmf_at_deadline(
    k: int, per_user_outages: Sequence[float], policy: DeliveryPolicy, Lprime: int
) -> float:
    """P[W_(k) = D]: fewer than k users done by D-1 but at least k by D."""
    n = len(per_user_outages)
    if not 1 <= k <= n:
        raise ValueError("k must lie in 1..n")
    D = policy.deadline_D
    # dp[b, e]: b users done before D, e users finishing exactly at D
    dp = np.zeros((n + 1, n + 1))
    dp[0, 0] = 1.0
    for o in per_user_outages:
        below = completion_time_cdf(D - 1, Lprime, o)
        at = completion_time_pmf(D, Lprime, o)
        above = 1.0 - below - at
        nxt = dp * above
        nxt[1:, :] += dp[:-1, :] * below
        nxt[:, 1:] += dp[:, :-1] * at
        dp = nxt
    b = np.arange(n + 1)[:, None]
    e = np.arange(n + 1)[None, :]
    return float(dp[(b < k) & (b + e >= k)].sum())


def reconstruction_pmf(per_user_outages: Sequence[float], policy: DeliveryPolicy, Lprime: int) -> np.ndarray:
    """Distribution of the number of users that recover the file."""
    probs = [policy.delta * completion_time_cdf(policy.deadline_D, Lprime, o) for o in per_user_outages]
    return poisson_binomial_pmf(probs)


def duration_pmf(per_user_outages: Sequence[float], policy: DeliveryPolicy, Lprime: int) -> np.ndarray:
    """Round-length distribution for a fixed requesting set.

    Index w holds P[T = w] for w = 0..D. An empty set sends one packet.
    """
    D = policy.deadline_D
    out = np.zeros(D + 1)
    if len(per_user_outages) == 0:
        out[1] = 1.0
        return out
    w = np.arange(D + 1)
    F = max_completion_cdf(w, per_user_outages, Lprime)
    out[1:D] = np.diff(F[:D])
    out[D] = 1.0 - F[D - 1]
    return out


def _count_pmf(count) -> np.ndarray:
    if isinstance(count, (int, np.integer)):
        pmf = np.zeros(int(count) + 1)
        pmf[int(count)] = 1.0
        return pmf
    mean = float(count)
    if mean <= 0:
        return np.array([1.0])
    qmax = int(stats.poisson.isf(COUNT_MASS_TOL, mean)) + 1
    pmf = stats.poisson.pmf(np.arange(qmax + 1), mean)
    while pmf.sum() <= 1 - COUNT_MASS_TOL:
        qmax *= 2
        pmf = stats.poisson.pmf(np.arange(qmax + 1), mean)
    return pmf


def duration_distribution(policy: DeliveryPolicy, outage: float, Lprime: int, user_count) -> np.ndarray:
    """Round-length distribution with i.i.d. user outages and a random count.

    ``user_count`` is either a fixed ``int`` or a ``float`` Poisson mean.
    The Poisson mixture is truncated once the summed mass exceeds 1 - 1e-9.
    Returns P[T = w] for w = 0..D.
    """
    _check_prob(outage)
    D = policy.deadline_D
    pmf_q = _count_pmf(user_count)
    w = np.arange(D + 1)
    F = completion_time_cdf(w, Lprime, outage)
    out = np.zeros(D + 1)
    for q, pq in enumerate(pmf_q):
        if pq == 0.0:
            continue
        if q == 0:
            out[1] += pq
            continue
        Fq = F**q
        out[1:D] += pq * np.diff(Fq[:D])
        out[D] += pq * (1.0 - Fq[D - 1])
    return out


def expected_utility(
    per_user_outages: Sequence[float], policy: DeliveryPolicy, Lprime: int, power: float
) -> float:
    """E[K / (p T)] for a fixed requesting set with independent links.

    Early stop at w < D means everyone holds L' packets, so E[K | T=w] is
    delta * n. At T = D the expected number of finished users is
    sum_i F_i(D) - n * prod_j F_j(D-1).
    """
    if power <= 0:
        raise ValueError("power must be positive")
    outages = tuple(float(o) for o in per_user_outages)
    return _expected_utility(outages, policy.deadline_D, policy.delta, Lprime) / power


@lru_cache(maxsize=65536)
def _expected_utility(outages: tuple, D: int, delta: float, Lprime: int) -> float:
    n = len(outages)
    if n == 0:
        return 0.0
    w = np.arange(D + 1)
    Fi = np.array([completion_time_cdf(w, Lprime, o) for o in outages])
    Fmax = Fi.prod(axis=0)
    total = n * float((np.diff(Fmax[:D]) / w[1:D]).sum())
    total += (Fi[:, D].sum() - n * Fmax[D - 1]) / D
    return float(delta * total)


def expected_utility_poisson(
    outage: float, policy: DeliveryPolicy, Lprime: int, power: float, mean_requests: float
) -> float:
    """E[K / (p T)] with i.i.d. outages and a Poisson requesting count."""
    pmf_q = _count_pmf(float(mean_requests))
    return float(sum(pq * expected_utility((outage,) * q, policy, Lprime, power) for q, pq in enumerate(pmf_q) if pq > 0))


class BroadcastSession:
    """Packet-by-packet state of one broadcast round.

    Feed one uniform per requesting user per packet to :meth:`send`; a user
    receives when its uniform is at least its outage. A second uniform,
    consumed at the slot where a user reaches L', decides recovery.
    """

    def __init__(self, per_user_outages, policy: DeliveryPolicy, Lprime: int, power: float):
        if power <= 0:
            raise ValueError("power must be positive")
        self.outages = np.asarray(per_user_outages, dtype=float)
        self.policy = policy
        self.Lprime = Lprime
        self.power = power
        n = len(self.outages)
        self.received = np.zeros(n, dtype=int)
        self.finished = np.zeros(n, dtype=bool)
        self.success = np.zeros(n, dtype=bool)
        self.sent = 0

    @property
    def done(self) -> bool:
        if self.sent == 0:
            return False
        return bool(self.finished.all()) or self.sent >= self.policy.deadline_D

    def send(self, reception_u: np.ndarray, recovery_u: np.ndarray) -> None:
        if self.done:
            raise RuntimeError("round already finished")
        self.sent += 1
        got = (reception_u >= self.outages) & ~self.finished
        self.received += got
        newly = got & (self.received >= self.Lprime)
        self.finished |= newly
        self.success |= newly & (recovery_u < self.policy.delta)

    def outcome(self) -> BroadcastOutcome:
        return BroadcastOutcome(self.sent, self.power * self.sent, int(self.success.sum()), self.success.copy())


def simulate_broadcast(per_user_outages, policy: DeliveryPolicy, Lprime: int, power: float, rng=None) -> BroadcastOutcome:
    """One Monte Carlo broadcast round."""
    rng = np.random.default_rng(rng)
    session = BroadcastSession(per_user_outages, policy, Lprime, power)
    n = len(session.outages)
    while not session.done:
        session.send(rng.random(n), rng.random(n))
    return session.outcome()


def simulate_durations(outages, policy: DeliveryPolicy, Lprime: int, runs: int, rng=None):
    """Vectorised replication of round duration and recoveries.

    Returns ``(durations, recovered)`` arrays of length ``runs``; agrees in
    law with :func:`simulate_broadcast` but draws completion times directly.
    """
    rng = np.random.default_rng(rng)
    o = np.asarray(outages, dtype=float)
    D = policy.deadline_D
    if o.size == 0:
        return np.ones(runs, dtype=int), np.zeros(runs, dtype=int)
    live = o < 1
    extra = rng.negative_binomial(Lprime, np.where(live, 1.0 - o, 1.0), size=(runs, o.size))
    W = np.where(live, Lprime + extra, D + 1)
    durations = np.minimum(W.max(axis=1), D)
    done = W <= D
    ok = rng.random((runs, o.size)) < policy.delta
    return durations, (done & ok).sum(axis=1)
