"""Request generation, intensity estimation and GLR change detection.

Counts are Poisson given the number of users in the cell. The detector
tests each new count against the running mean since the last change,
scanning every onset in a bounded window for a Poisson mean shift of at
least ``C``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .rateless import FileSpec


class EmptySample(ValueError):
    pass


def generate_requests(files: Sequence[FileSpec], user_count_x: int, t: int, rng=None) -> np.ndarray:
    """Aggregate request counts at slot ``t``: Poisson(x * mu_f(t)) per file."""
    rng = np.random.default_rng(rng)
    mu = np.array([f.intensity_at(t) for f in files])
    return rng.poisson(user_count_x * mu)


def generate_user_requests(intensities: np.ndarray, n_users: int, rng) -> np.ndarray:
    """Per-user counts, shape (files, users); rows sum to the aggregate counts."""
    mu = np.asarray(intensities, dtype=float)
    return rng.poisson(np.broadcast_to(mu[:, None], (len(mu), n_users)))


def request_pmf(q, mean_users: float, mu: float, tol: float = 1e-12) -> np.ndarray:
    """Marginal pmf of a slot's request count when the user count is Poisson."""
    q = np.atleast_1d(np.asarray(q))
    xmax = int(stats.poisson.isf(tol, mean_users)) + 2 if mean_users > 0 else 0
    x = np.arange(xmax + 1)
    px = stats.poisson.pmf(x, mean_users)
    # P[Q = q | X = x]; x = 0 puts all mass on q = 0
    cond = np.where(x[None, :] == 0, (q[:, None] == 0).astype(float), stats.poisson.pmf(q[:, None], x[None, :] * mu))
    return cond @ px


def mle_intensity(samples: Iterable[float]) -> float:
    arr = np.asarray(list(samples), dtype=float)
    if arr.size == 0:
        raise EmptySample("need at least one sample")
    return float(arr.mean())


@dataclass(frozen=True)
class AliveSet:
    threshold_alpha: float
    members: frozenset

    def __contains__(self, f):
        return f in self.members


def update_alive(estimates: Mapping[str, float], alpha: float) -> AliveSet:
    """Files whose estimated intensity exceeds ``alpha``."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    return AliveSet(alpha, frozenset(f for f, mu in estimates.items() if mu > alpha))


def _poisson_llr(n, S, psi0, ln_psi0, psi1, ln_psi1):
    # sum over the segment of log f(q; psi1) - log f(q; psi0); 0 * log 0 = 0
    with np.errstate(invalid="ignore"):
        return n * (psi0 - psi1) + np.where(S > 0, S * (ln_psi1 - ln_psi0), 0.0)


def constrained_glr(n, S, psi0, C):
    """Sup of the log-likelihood ratio over psi1 with |psi1 - psi0| >= C.

    Works elementwise on segment lengths ``n`` and sums ``S``. The ratio is
    concave in psi1 with its peak at the segment mean, so the sup is the
    mean when admissible and otherwise the better of the two band edges.
    Returns ``(value, psi1_hat)``.
    """
    n = np.asarray(n, dtype=float)
    S = np.asarray(S, dtype=float)
    psi0 = np.asarray(psi0, dtype=float)
    m = S / n
    with np.errstate(divide="ignore"):
        ln_psi0 = np.log(psi0)
        g_m = _poisson_llr(n, S, psi0, ln_psi0, m, np.log(m))
        if C <= 0:
            return g_m, m
        up = psi0 + C
        lo = np.maximum(psi0 - C, 0.0)
        g_up = _poisson_llr(n, S, psi0, ln_psi0, up, np.log(up))
        g_lo = _poisson_llr(n, S, psi0, ln_psi0, lo, np.log(lo))
    g_lo = np.where(psi0 - C >= 0, g_lo, -np.inf)
    take_up = g_up >= g_lo
    inside = np.abs(m - psi0) < C
    value = np.where(inside, np.where(take_up, g_up, g_lo), g_m)
    psi1 = np.where(inside, np.where(take_up, up, lo), m)
    return value, psi1


def glr_statistic(window: Sequence[float], psi0: float, C: float):
    """Max over onsets j of the constrained GLR for segment window[j:].

    Returns ``(stat, onset_index, psi1_hat)``; ties go to the earliest onset.
    """
    q = np.asarray(window, dtype=float)
    if q.size == 0:
        return -math.inf, None, None
    S = np.cumsum(q[::-1])[::-1]
    n = np.arange(q.size, 0, -1)
    vals, psi1 = constrained_glr(n, S, psi0, C)
    j = int(np.argmax(vals))
    return float(vals[j]), j, float(psi1[j])


@dataclass(frozen=True)
class Alarm:
    file_index: int
    alarm_t: int
    change_t: int
    psi1: float
    stat: float


class DetectorBank:
    """GLR detectors for several files advanced together, one count each per slot.

    Each file keeps a running mean since its last change (the null
    intensity) and a window of at most ``window_max`` counts since then.
    """

    def __init__(self, n_files: int, h: float = 10.0, C: float = 1.0, window_max: int = 500):
        if h <= 0:
            raise ValueError("h must be positive")
        if C < 0:
            raise ValueError("C must be nonnegative")
        if window_max < 1:
            raise ValueError("window_max must be >= 1")
        self.n_files = n_files
        self.h = float(h)
        self.C = float(C)
        self.window_max = int(window_max)
        self._cap = 2 * self.window_max + 64
        self._cum = np.zeros((n_files, self._cap + 1))
        self._end = 0
        self._start = np.zeros(n_files, dtype=int)
        self.running_mean = np.zeros(n_files)
        self.n_since = np.zeros(n_files, dtype=int)
        self.last_change_t = np.zeros(n_files, dtype=int)
        self.alarm_flag = np.zeros(n_files, dtype=bool)
        self.last_stat = np.full(n_files, -np.inf)
        self.t = 0
        self.armed = False

    @property
    def psi0(self) -> np.ndarray:
        return self.running_mean

    def window(self, f: int) -> np.ndarray:
        lo = max(self._start[f], self._end - self.window_max)
        return np.diff(self._cum[f, lo : self._end + 1])

    def _append(self, counts) -> None:
        if self._end == self._cap:
            keep = self.window_max
            shift = self._end - keep
            self._cum[:, : keep + 1] = self._cum[:, shift : self._end + 1] - self._cum[:, shift : shift + 1]
            self._start = np.maximum(self._start - shift, 0)
            self._end = keep
        self._cum[:, self._end + 1] = self._cum[:, self._end] + counts
        self._end += 1
        self.n_since += 1
        self.running_mean += (counts - self.running_mean) / self.n_since
        self.t += 1

    def observe(self, counts) -> None:
        """Record counts without testing (initialisation window)."""
        self._append(np.asarray(counts, dtype=float))

    def arm(self) -> None:
        self.armed = True

    def step(self, counts) -> list[Alarm]:
        counts = np.asarray(counts, dtype=float)
        self._append(counts)
        self.alarm_flag[:] = False
        if not self.armed:
            return []
        end = self._end
        lo = np.maximum(self._start, end - self.window_max)
        j0 = int(lo.min())
        cols = np.arange(j0, end)
        S = self._cum[:, end][:, None] - self._cum[:, j0:end]
        n = (end - cols)[None, :].astype(float)
        vals, psi1 = constrained_glr(n, S, self.running_mean[:, None], self.C)
        vals = np.where(cols[None, :] >= lo[:, None], vals, -np.inf)
        jstar = np.argmax(vals, axis=1)
        rows = np.arange(self.n_files)
        stat = vals[rows, jstar]
        self.last_stat = stat
        alarms = []
        for f in np.flatnonzero(stat >= self.h):
            psi = float(psi1[f, jstar[f]])
            j = j0 + int(jstar[f])
            change_t = self.t - (end - j)
            alarms.append(Alarm(int(f), self.t - 1, change_t, psi, float(stat[f])))
            self._start[f] = j
            self.n_since[f] = end - j
            self.running_mean[f] = psi
            self.last_change_t[f] = change_t
            self.alarm_flag[f] = True
        return alarms


class GLRDetector:
    """Single-stream convenience wrapper around :class:`DetectorBank`."""

    def __init__(self, psi0: float | None = None, h: float = 10.0, C: float = 1.0, window_max: int = 500,
                 bootstrap: Sequence[float] = ()):
        self._bank = DetectorBank(1, h, C, window_max)
        for q in bootstrap:
            self._bank.observe([q])
        if psi0 is not None:
            if psi0 <= 0:
                raise ValueError("psi0 must be positive")
            self._bank.running_mean[0] = psi0
            self._bank.n_since[0] = max(self._bank.n_since[0], 1)
        self._bank.arm()

    @property
    def psi0(self) -> float:
        return float(self._bank.running_mean[0])

    @property
    def running_mean(self) -> float:
        return float(self._bank.running_mean[0])

    @property
    def window(self) -> np.ndarray:
        return self._bank.window(0)

    @property
    def last_change_t(self) -> int:
        return int(self._bank.last_change_t[0])

    @property
    def last_stat(self) -> float:
        return float(self._bank.last_stat[0])

    @property
    def t(self) -> int:
        return self._bank.t

    def step(self, count: float) -> Alarm | None:
        alarms = self._bank.step([count])
        return alarms[0] if alarms else None


def glr_step(detector: GLRDetector, new_count: float):
    """Advance one slot; returns ``(detector, alarm or None)``."""
    alarm = detector.step(new_count)
    return detector, alarm
