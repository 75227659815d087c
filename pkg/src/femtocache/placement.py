"""Cache placement: 0-1 knapsack over the alive files, re-solved on alarms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

VALUE_RTOL = 1e-12


class EmptyAliveSet(ValueError):
    """No alive file to place; the caller keeps its previous cache."""


@dataclass(frozen=True)
class PlacementProblem:
    items: tuple[tuple[str, float, float], ...]  # (file id, size, value)
    capacity: float

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be nonnegative")
        for fid, size, value in self.items:
            if size <= 0 or value <= 0:
                raise ValueError(f"{fid}: sizes and values must be positive")
        ids = [it[0] for it in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate file ids")

    @classmethod
    def from_estimates(cls, sizes: Mapping[str, float], estimates: Mapping[str, float], alive: Iterable[str],
                       capacity: float) -> "PlacementProblem":
        items = tuple(sorted((f, sizes[f], estimates[f]) for f in alive))
        return cls(items, capacity)


@dataclass(frozen=True)
class KnapsackSolution:
    selected: tuple[str, ...]
    value: float


def _integer_grid(sizes: Sequence[float], capacity: float) -> tuple[list[int], int]:
    """Scale sizes to integers on their common grid; capacity is floored."""
    fr = [Fraction(s).limit_denominator(10**6) for s in sizes]
    scale = math.lcm(*(f.denominator for f in fr)) if fr else 1
    return [int(f * scale) for f in fr], math.floor(Fraction(capacity).limit_denominator(10**6) * scale)


def _better(a: float, b: float) -> bool:
    return a > b + VALUE_RTOL * max(1.0, abs(a), abs(b))


def solve_knapsack(problem: PlacementProblem) -> KnapsackSolution:
    """Exact 0-1 knapsack by dynamic programming over capacity.

    Among equal-value optima the lexicographically smallest id tuple wins:
    items are processed in id order and an item is taken whenever taking it
    is still optimal.

    Raises:
        EmptyAliveSet: the problem has no items.
    """
    if not problem.items:
        raise EmptyAliveSet("no alive files to place")
    items = sorted(problem.items)
    sizes, cap = _integer_grid([it[1] for it in items], problem.capacity)
    values = [it[2] for it in items]
    n = len(items)
    # best[i][c]: max value from items i.. with capacity c
    best = [[0.0] * (cap + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, nxt, w, v = best[i], best[i + 1], sizes[i], values[i]
        for c in range(cap + 1):
            skip = nxt[c]
            row[c] = skip
            if w <= c:
                take = nxt[c - w] + v
                if take > skip:
                    row[c] = take
    chosen = []
    c = cap
    for i in range(n):
        w = sizes[i]
        if w <= c and not _better(best[i + 1][c], best[i + 1][c - w] + values[i]):
            chosen.append(i)
            c -= w
    selected = tuple(items[i][0] for i in chosen)
    return KnapsackSolution(selected, math.fsum(values[i] for i in chosen))


def brute_force_knapsack(problem: PlacementProblem) -> KnapsackSolution:
    """Enumerate all subsets; same tie rule as :func:`solve_knapsack`."""
    if not problem.items:
        raise EmptyAliveSet("no alive files to place")
    items = sorted(problem.items)
    sizes, cap = _integer_grid([it[1] for it in items], problem.capacity)
    best_val, best_set = 0.0, ()
    for mask in range(1 << len(items)):
        idx = [i for i in range(len(items)) if mask >> i & 1]
        if sum(sizes[i] for i in idx) > cap:
            continue
        val = math.fsum(items[i][2] for i in idx)
        ids = tuple(items[i][0] for i in idx)
        if _better(val, best_val) or (not _better(best_val, val) and ids < best_set):
            best_val, best_set = val, ids
    return KnapsackSolution(best_set, best_val)


@dataclass(frozen=True)
class CacheState:
    capacity_C: float
    contents: frozenset = frozenset()
    epoch: int = 0
    value: float = 0.0

    def total_size(self, sizes: Mapping[str, float]) -> float:
        return sum(sizes[f] for f in self.contents)


def update_cache(
    cache: CacheState,
    alarms: Mapping[str, bool],
    estimates: Mapping[str, float],
    alive: Iterable[str],
    sizes: Mapping[str, float],
    epoch: int,
) -> CacheState:
    """Re-solve the placement if any file raised a change flag.

    Without a flag the cache is returned untouched. A re-solve with an
    unchanged optimum still advances the epoch.
    """
    if not any(alarms.values()):
        return cache
    alive = list(alive)
    missing = [f for f in alive if f not in estimates]
    if missing:
        raise ValueError(f"no estimate for alive files {missing}")
    sol = solve_knapsack(PlacementProblem.from_estimates(sizes, estimates, alive, cache.capacity_C))
    return CacheState(cache.capacity_C, frozenset(sol.selected), epoch, sol.value)


def fetch_delta(old: CacheState, new: CacheState, sizes: Mapping[str, float]):
    """Files to add and drop, and the backhaul volume of the additions."""
    added = new.contents - old.contents
    removed = old.contents - new.contents
    return frozenset(added), frozenset(removed), sum(sizes[f] for f in added)
