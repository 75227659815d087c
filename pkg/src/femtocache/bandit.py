"""Delivery decisions: mortal-arm UCB over (file, power) pairs, the greedy
baselines it is compared against, and regret bookkeeping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple

import numpy as np

from .rateless import BroadcastOutcome


class NoLiveArms(RuntimeError):
    pass


class ArmId(NamedTuple):
    file: str
    power: int  # index into the power set


@dataclass
class ArmStats:
    plays_V: int = 0
    mean_reward: float = 0.0
    alive: bool = True
    forced: bool = True


def ucb_index(stats: ArmStats, round_theta: int, beta_coef: float = 1.0, zeta_coef: float = 2.0) -> float:
    """mean + beta * sqrt(zeta * ln(theta) / V)."""
    if stats.plays_V < 1:
        raise ValueError("arm has not been played")
    if round_theta < 1:
        raise ValueError("round index starts at 1")
    return stats.mean_reward + beta_coef * math.sqrt(zeta_coef * math.log(round_theta) / stats.plays_V)


def _forced_arm(arms: Mapping[ArmId, ArmStats]) -> ArmId | None:
    pending = [a for a, s in arms.items() if s.alive and s.forced]
    return min(pending) if pending else None


def select_arm(arms: Mapping[ArmId, ArmStats], round_theta: int, beta_coef: float = 1.0,
               zeta_coef: float = 2.0) -> ArmId:
    """Pending forced plays first (lowest id), then the largest UCB index.

    Ties go to the lowest arm id.
    """
    forced = _forced_arm(arms)
    if forced is not None:
        return forced
    best, best_idx = None, -math.inf
    for arm in sorted(a for a, s in arms.items() if s.alive):
        idx = ucb_index(arms[arm], round_theta, beta_coef, zeta_coef)
        if idx > best_idx:
            best, best_idx = arm, idx
    if best is None:
        raise NoLiveArms("no live arms")
    return best


def on_cache_change(arms: Mapping[ArmId, ArmStats], new_cache: Iterable[str], n_powers: int,
                    reset_counts: bool = True) -> dict[ArmId, ArmStats]:
    """Drop arms of evicted files, add unplayed arms for new files.

    With ``reset_counts`` every surviving played arm restarts at one play
    while keeping its mean reward.
    """
    cache = set(new_cache)
    out: dict[ArmId, ArmStats] = {}
    for arm, s in arms.items():
        if arm.file in cache:
            plays = 1 if (reset_counts and s.plays_V >= 1) else s.plays_V
            out[arm] = ArmStats(plays, s.mean_reward, True, s.forced)
    for f in sorted(cache):
        for k in range(n_powers):
            arm = ArmId(f, k)
            if arm not in out:
                out[arm] = ArmStats()
    return out


def utility(outcome: BroadcastOutcome) -> float:
    """Successful reconstructions per joule."""
    if outcome.energy_E <= 0:
        raise ValueError("energy must be positive")
    return outcome.recovered_K / outcome.energy_E


def record_reward(arms: dict[ArmId, ArmStats], arm: ArmId, reward: float) -> None:
    s = arms[arm]
    s.plays_V += 1
    s.mean_reward += (reward - s.mean_reward) / s.plays_V
    s.forced = False


def record_outcome(arms: dict[ArmId, ArmStats], arm: ArmId, outcome: BroadcastOutcome) -> float:
    g = utility(outcome)
    record_reward(arms, arm, g)
    return g


class Policy:
    """Common shape of the delivery policies driven by the simulator."""

    kind = "base"

    def __init__(self, n_powers: int):
        self.n_powers = n_powers
        self.arms: dict[ArmId, ArmStats] = {}

    def set_cache(self, files: Iterable[str]) -> None:
        # round-robin over the first arm set only; later arrivals start
        # unplayed at mean 0 and are reached through exploration alone
        files = set(files)
        if files != {a.file for a in self.arms}:
            first = not self.arms
            self.arms = on_cache_change(self.arms, files, self.n_powers, reset_counts=False)
            if not first:
                for s in self.arms.values():
                    if s.plays_V == 0:
                        s.forced = False

    def live_arms(self) -> list[ArmId]:
        return sorted(a for a, s in self.arms.items() if s.alive)

    def choose(self, theta: int, rng: np.random.Generator, expected: Callable[[ArmId], float] | None = None) -> ArmId:
        raise NotImplementedError

    def update(self, arm: ArmId, reward: float) -> None:
        record_reward(self.arms, arm, reward)

    def _greedy(self) -> ArmId:
        forced = _forced_arm(self.arms)
        if forced is not None:
            return forced
        live = self.live_arms()
        if not live:
            raise NoLiveArms("no live arms")
        return max(live, key=lambda a: (self.arms[a].mean_reward, _neg(a)))


def _neg(arm: ArmId):
    # max() with ties broken toward the lowest id
    return tuple(-ord(c) for c in arm.file) + (1,), -arm.power


class MortalUCB(Policy):
    kind = "bandit"

    def __init__(self, n_powers: int, beta_coef: float = 1.0, zeta_coef: float = 2.0):
        super().__init__(n_powers)
        self.beta_coef = beta_coef
        self.zeta_coef = zeta_coef

    def set_cache(self, files: Iterable[str]) -> None:
        files = set(files)
        if files != {a.file for a in self.arms}:
            self.arms = on_cache_change(self.arms, files, self.n_powers, reset_counts=True)

    def choose(self, theta, rng, expected=None):
        return select_arm(self.arms, theta, self.beta_coef, self.zeta_coef)


class Greedy(Policy):
    kind = "greedy"

    def choose(self, theta, rng, expected=None):
        return self._greedy()


class EpsilonGreedy(Policy):
    """Greedy with fixed exploration probability ``epsilon``."""

    kind = "eps-fixed"

    def __init__(self, n_powers: int, epsilon: float = 0.1):
        super().__init__(n_powers)
        if not 0 <= epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        self.epsilon = epsilon

    def current_epsilon(self, theta: int) -> float:
        return self.epsilon

    def choose(self, theta, rng, expected=None):
        if _forced_arm(self.arms) is not None:
            return self._greedy()
        live = self.live_arms()
        if rng.random() < self.current_epsilon(theta):
            return live[int(rng.integers(len(live)))]
        return self._greedy()


class EpsilonDecreasing(EpsilonGreedy):
    """Exploration probability min(1, epsilon0 / theta)."""

    kind = "eps-decreasing"

    def __init__(self, n_powers: int, epsilon0: float = 5.0):
        super().__init__(n_powers, 0.0)
        if epsilon0 < 0:
            raise ValueError("epsilon0 must be nonnegative")
        self.epsilon0 = epsilon0

    def current_epsilon(self, theta: int) -> float:
        return min(1.0, self.epsilon0 / max(theta, 1))


class Oracle(Policy):
    """Picks the arm with the largest analytic expected utility."""

    kind = "oracle"

    def choose(self, theta, rng, expected=None):
        if expected is None:
            raise ValueError("oracle needs expected utilities")
        live = self.live_arms()
        if not live:
            raise NoLiveArms("no live arms")
        best, best_val = None, -math.inf
        for arm in live:
            v = expected(arm)
            if v > best_val:
                best, best_val = arm, v
        return best

    def update(self, arm, reward):
        record_reward(self.arms, arm, reward)


POLICY_KINDS = ("bandit", "greedy", "eps-fixed", "eps-decreasing", "oracle")


def make_policy(kind: str, n_powers: int, beta_coef=1.0, zeta_coef=2.0, epsilon=0.1, epsilon0=5.0) -> Policy:
    if kind == "bandit":
        return MortalUCB(n_powers, beta_coef, zeta_coef)
    if kind == "greedy":
        return Greedy(n_powers)
    if kind == "eps-fixed":
        return EpsilonGreedy(n_powers, epsilon)
    if kind == "eps-decreasing":
        return EpsilonDecreasing(n_powers, epsilon0)
    if kind == "oracle":
        return Oracle(n_powers)
    raise ValueError(f"unknown policy kind {kind!r}")


def baseline_policy(kind: str, arms: Mapping[ArmId, ArmStats], round_theta: int, rng=None, epsilon: float = 0.1,
                    epsilon0: float = 5.0, expected: Callable[[ArmId], float] | None = None) -> ArmId:
    """One decision of a baseline policy on the given arm statistics."""
    policy = make_policy(kind, 0, epsilon=epsilon, epsilon0=epsilon0)
    policy.arms = dict(arms)
    return policy.choose(round_theta, np.random.default_rng(rng), expected)


@dataclass
class RegretLedger:
    """Per-round pseudo-regret: oracle expected utility minus the chosen arm's."""

    rounds: list[int] = field(default_factory=list)
    arms: list[ArmId] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    expected: list[float] = field(default_factory=list)
    oracle: list[float] = field(default_factory=list)
    cumulative: list[float] = field(default_factory=list)

    def record(self, theta: int, arm: ArmId, reward: float, expected_reward: float, oracle_reward: float) -> float:
        prev = self.cumulative[-1] if self.cumulative else 0.0
        total = prev + (oracle_reward - expected_reward)
        self.rounds.append(theta)
        self.arms.append(arm)
        self.rewards.append(reward)
        self.expected.append(expected_reward)
        self.oracle.append(oracle_reward)
        self.cumulative.append(total)
        return total


@dataclass(frozen=True)
class DiagnosticResult:
    ok: bool
    best_cached: float
    uncached_bound: float
    worst_file: str | None


def decoupling_diagnostic(cache: Iterable[str], estimates: Mapping[str, float], Lprime: Mapping[str, int],
                          p_min: float, best_expected_utility: float) -> DiagnosticResult:
    """Check that no uncached file could beat the best cached action.

    An uncached file can earn at most its expected requests over the
    cheapest possible round, mu_f / (p_min * L'_f).
    """
    cache = set(cache)
    bound, worst = -math.inf, None
    for f, mu in sorted(estimates.items()):
        if f in cache:
            continue
        b = mu / (p_min * Lprime[f])
        if b > bound:
            bound, worst = b, f
    if worst is None:
        return DiagnosticResult(True, best_expected_utility, 0.0, None)
    return DiagnosticResult(best_expected_utility >= bound, best_expected_utility, bound, worst)
