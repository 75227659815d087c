"""Stochastic wireless layer: user counts, Rayleigh-faded SINR and outage.

Channel gains |H|^2 are exponential with rate ``beta``; dividing by the
transmit power gives the rate of the received-power variable, which is the
quantity the analytic SINR density works with. Rates are in nats.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

TIE_RTOL = 1e-9
TIE_JITTER = 1e-6


class DegenerateRates(ValueError):
    """Two interferer rates coincide and tie handling is disabled."""


@dataclass(frozen=True)
class CellGeometry:
    radius_d: float
    user_density_lambda: float
    sbs_positions: tuple[tuple[float, float], ...] = ((0.0, 0.0),)

    def __post_init__(self):
        if self.radius_d <= 0:
            raise ValueError("radius_d must be positive")
        if self.user_density_lambda < 0:
            raise ValueError("user_density_lambda must be nonnegative")
        pts = np.asarray(self.sbs_positions, dtype=float).reshape(-1, 2)
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if np.hypot(*(pts[i] - pts[j])) < self.radius_d:
                    raise ValueError("at most one SBS per disc of radius d")

    @property
    def mean_users(self) -> float:
        return self.user_density_lambda * math.pi * self.radius_d**2


@dataclass(frozen=True)
class FadingParams:
    """Per-link exponential gain rates, shape (users, SBSs), and noise power."""

    beta: np.ndarray
    noise_power_p0: float = 0.0

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        if np.any(beta <= 0):
            raise ValueError("all beta must be positive")
        if self.noise_power_p0 < 0:
            raise ValueError("noise power must be nonnegative")
        object.__setattr__(self, "beta", beta)


@dataclass(frozen=True)
class PowerSet:
    levels: tuple[float, ...]

    def __post_init__(self):
        lv = tuple(float(p) for p in self.levels)
        if not lv or lv[0] <= 0:
            raise ValueError("power levels must be positive")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("power levels must be strictly increasing")
        object.__setattr__(self, "levels", lv)

    @property
    def p_min(self) -> float:
        return self.levels[0]

    @property
    def p_max(self) -> float:
        return self.levels[-1]

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def __getitem__(self, i):
        return self.levels[i]


@dataclass(frozen=True)
class SinrSample:
    value: float | np.ndarray
    serving_sbs: int
    user: int


@dataclass(frozen=True)
class LinkParams:
    """Rates of the desired and interfering received powers for one link.

    ``signal_rate`` is beta_nm / p_m and ``interferer_rates`` holds
    beta_ni / p_i for every other SBS i.
    """

    signal_rate: float
    interferer_rates: tuple[float, ...] = ()
    noise_power: float = 0.0
    coefficients: tuple[float, ...] = field(default=(), compare=False)

    @classmethod
    def build(
        cls,
        signal_rate: float,
        interferer_rates: Sequence[float] = (),
        noise_power: float = 0.0,
        jitter_ties: bool = True,
    ) -> "LinkParams":
        if signal_rate <= 0:
            raise ValueError("signal rate must be positive")
        if noise_power < 0:
            raise ValueError("noise power must be nonnegative")
        rates = _separate_ties([float(r) for r in interferer_rates], jitter_ties)
        if not rates and noise_power == 0:
            raise ValueError("SINR is unbounded without interference or noise")
        return cls(signal_rate, tuple(rates), float(noise_power), tuple(_coefficients(rates)))


def _separate_ties(rates: list[float], jitter: bool) -> list[float]:
    if any(r <= 0 for r in rates):
        raise ValueError("interferer rates must be positive")
    out: list[float] = []
    for r in rates:
        while any(abs(r - o) <= TIE_RTOL * max(abs(r), abs(o)) for o in out):
            if not jitter:
                raise DegenerateRates(f"interferer rate {r!r} is repeated")
            warnings.warn(f"jittering tied interferer rate {r!r}", RuntimeWarning, stacklevel=3)
            r = r * (1.0 + TIE_JITTER)
        out.append(r)
    return out


def _coefficients(rates: Sequence[float]) -> list[float]:
    # A_i = prod_{l != i} b_l / (b_l - b_i)
    coeffs = []
    for i, bi in enumerate(rates):
        a = 1.0
        for l, bl in enumerate(rates):
            if l != i:
                a *= bl / (bl - bi)
        coeffs.append(a)
    return coeffs


def link_params(
    beta_row: Sequence[float],
    tx_powers: Sequence[float],
    serving: int,
    noise_power: float = 0.0,
    jitter_ties: bool = True,
) -> LinkParams:
    """Link rates for a user served by ``serving`` given every SBS's power.

    SBSs with zero transmit power contribute no interference.
    """
    beta_row = np.asarray(beta_row, dtype=float)
    tx = np.asarray(tx_powers, dtype=float)
    if tx[serving] <= 0:
        raise ValueError("serving power must be positive")
    interferers = [beta_row[i] / tx[i] for i in range(len(tx)) if i != serving and tx[i] > 0]
    return LinkParams.build(beta_row[serving] / tx[serving], interferers, noise_power, jitter_ties)


def draw_user_count(geometry: CellGeometry, rng: np.random.Generator | int | None = None) -> int:
    """Number of users in one cell: Poisson with mean lambda * pi * d^2."""
    rng = np.random.default_rng(rng)
    return int(rng.poisson(geometry.mean_users))


def place_users(geometry: CellGeometry, count: int, rng, center=(0.0, 0.0)) -> np.ndarray:
    """Uniform positions in the cell disc (HPPP conditioned on the count)."""
    rng = np.random.default_rng(rng)
    r = geometry.radius_d * np.sqrt(rng.random(count))
    phi = 2 * np.pi * rng.random(count)
    return np.column_stack([center[0] + r * np.cos(phi), center[1] + r * np.sin(phi)])


def sample_sinr(
    user: int,
    serving_sbs: int,
    tx_powers: Sequence[float],
    params: FadingParams,
    rng=None,
    size: int | None = None,
    worst_case: bool = False,
    power_set: PowerSet | None = None,
) -> SinrSample:
    """Draw SINR realisations for one link.

    With ``worst_case`` every interferer transmits at ``power_set.p_max``,
    which gives the lower bound an SBS can plan against when it does not
    know its neighbours' powers.
    """
    rng = np.random.default_rng(rng)
    tx = np.array(tx_powers, dtype=float)
    if tx[serving_sbs] <= 0:
        raise ValueError("serving power must be positive")
    if power_set is not None and tx[serving_sbs] not in power_set.levels:
        raise ValueError("serving power not in the power set")
    if worst_case:
        if power_set is None:
            raise ValueError("worst-case mode needs a power set")
        others = np.arange(len(tx)) != serving_sbs
        tx[others] = power_set.p_max
    beta = params.beta[user]
    n = 1 if size is None else size
    gains = rng.exponential(1.0 / beta[:, None], size=(len(beta), n))
    received = tx[:, None] * gains
    signal = received[serving_sbs]
    interference = received.sum(axis=0) - signal
    value = signal / (interference + params.noise_power_p0)
    if size is None:
        value = float(value[0])
    return SinrSample(value, serving_sbs, user)


def _tail(r, link: LinkParams):
    # P[SINR > r] = exp(-b_s p0 r) * prod_i b_i / (b_i + b_s r); the product is
    # the partial-fraction sum over A_i without its cancellation near ties
    bs = link.signal_rate
    out = np.exp(-bs * link.noise_power * r)
    for bi in link.interferer_rates:
        out = out * (bi / (bi + bs * r))
    return out


def sinr_pdf(r, link: LinkParams):
    """Density of the SINR at ``r`` (vectorised)."""
    r = np.asarray(r, dtype=float)
    rr = np.maximum(r, 0.0)
    bs = link.signal_rate
    hazard = bs * link.noise_power + sum(bs / (bi + bs * rr) for bi in link.interferer_rates)
    return np.where(r < 0, 0.0, _tail(rr, link) * hazard)


def interference_pdf(y, rates: Sequence[float]):
    """Density of a sum of independent exponentials with distinct rates."""
    y = np.asarray(y, dtype=float)
    rates = _separate_ties(list(rates), True)
    out = np.zeros_like(y)
    for bi, a in zip(rates, _coefficients(rates)):
        out = out + a * bi * np.exp(-bi * y)
    return np.where(y < 0, 0.0, out)


def sinr_cdf_closed(r, link: LinkParams):
    """Closed-form SINR cdf, 1 - exp(-b_s p0 r) * sum_i A_i b_i / (b_i + b_s r)."""
    r = np.asarray(r, dtype=float)
    return np.where(r <= 0, 0.0, 1.0 - _tail(np.maximum(r, 0.0), link))


def outage_interference_limited(r_n: float, link: LinkParams) -> float:
    """Outage at threshold ``r_n`` when noise is negligible.

    Equals sum_i A_i b_s r / (b_s r + b_i), the exact integral of the
    SINR density with p0 = 0.
    """
    return float(1.0 - _tail(r_n, LinkParams(link.signal_rate, link.interferer_rates, 0.0)))


def sinr_cdf_quad(r: float, link: LinkParams, epsabs: float = 1e-8) -> float:
    """Cdf by adaptive quadrature of :func:`sinr_pdf`."""
    if r <= 0:
        return 0.0
    # split at the density's scale so quad sees the peak
    scale = 1.0 / max(link.signal_rate * link.noise_power, 1e-300)
    if link.interferer_rates:
        scale = min(scale, min(link.interferer_rates) / link.signal_rate)
    points = [p for p in (scale, 10 * scale) if 0 < p < r]
    val, _ = integrate.quad(lambda x: float(sinr_pdf(x, link)), 0.0, r, epsabs=epsabs, epsrel=1e-10,
                            limit=200, points=points or None)
    return min(max(val, 0.0), 1.0)


def outage_probability(p: float, u_min: float, link: LinkParams) -> float:
    """P[log(1 + SINR) < u_min] for serving power ``p`` already folded into ``link``.

    ``u_min`` is in nats per channel use (divide bits by log2(e) first).
    """
    if u_min <= 0:
        raise ValueError("u_min must be positive")
    if p <= 0:
        raise ValueError("power must be positive")
    if u_min > 700:  # rate threshold beyond float range
        return 1.0
    r_n = math.expm1(u_min)
    if link.noise_power == 0:
        return min(max(outage_interference_limited(r_n, link), 0.0), 1.0)
    return sinr_cdf_quad(r_n, link)


def user_outages(
    beta: np.ndarray,
    powers: PowerSet,
    u_min: float | np.ndarray,
    noise_power: float,
    serving: int = 0,
    interferer_powers: Sequence[float] | None = None,
) -> np.ndarray:
    """Outage matrix, shape (users, power levels), for a serving SBS.

    ``interferer_powers`` gives the fixed power of every SBS (the serving
    entry is ignored); omit it for a single-SBS cell.
    """
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    n = beta.shape[0]
    u = np.broadcast_to(np.asarray(u_min, dtype=float), (n,))
    tx = np.zeros(beta.shape[1]) if interferer_powers is None else np.array(interferer_powers, dtype=float)
    out = np.empty((n, len(powers)))
    for k, p in enumerate(powers):
        tx_k = tx.copy()
        tx_k[serving] = p
        for i in range(n):
            link = link_params(beta[i], tx_k, serving, noise_power)
            out[i, k] = outage_probability(p, u[i], link)
    return out
