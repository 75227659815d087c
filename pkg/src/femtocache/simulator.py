"""Two-phase caching and delivery loop, baseline comparisons and the
playback-deadline experiment.

Every replication draws its randomness up front (user count, link rates,
per-user request counts, per-slot reception and recovery uniforms), so
policies run on the same seed see the same world. Detection depends only
on request counts and is computed once per seed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bandit import ArmId, Policy, RegretLedger, decoupling_diagnostic, make_policy, utility
from .channel import LinkParams, sinr_cdf_closed, user_outages
from .config import ScenarioConfig, VideoExperimentConfig
from .placement import CacheState, EmptyAliveSet, PlacementProblem, fetch_delta, solve_knapsack
from .popularity import DetectorBank, update_alive
from .rateless import BroadcastSession, DeliveryPolicy, expected_utility

__all__ = [
    "Environment",
    "DetectionTrace",
    "RoundRecord",
    "Trace",
    "build_environment",
    "run_detection",
    "run_scenario",
    "run_baseline_suite",
    "run_video_experiment",
    "compute_metrics",
]

# stream ids for np.random.default_rng([seed, stream])
_USERS, _REQUESTS, _RECEPTION, _RECOVERY, _POLICY = range(5)


@dataclass
class Environment:
    """All exogenous randomness of one replication."""

    seed: int
    user_count: int
    beta: np.ndarray  # (users, SBSs)
    outages: np.ndarray  # (users, power levels)
    counts: np.ndarray  # (slots, files) aggregate requests
    asked: np.ndarray  # (slots + 1, files, users) cumulative requests per user
    reception_u: np.ndarray  # (slots, users)
    recovery_u: np.ndarray  # (slots, users)

    def requesters(self, f: int, start: int, end: int) -> np.ndarray:
        """Users with at least one request for file ``f`` in slots [start, end)."""
        return np.flatnonzero(self.asked[end, f] > self.asked[start, f])


def build_environment(cfg: ScenarioConfig, seed: int) -> Environment:
    files = cfg.file_specs()
    powers = cfg.power_set()
    max_D = max(DeliveryPolicy.for_file(f.Lprime, cfg.delivery.kappa).deadline_D for f in files)
    slots = cfg.horizon + max_D

    rng = np.random.default_rng([seed, _USERS])
    x = int(rng.poisson(cfg.geometry.build().mean_users))
    n_sbs = 1 + len(cfg.channel.interferer_powers)
    lo, hi = math.log(cfg.channel.beta_low), math.log(cfg.channel.beta_high)
    beta = np.exp(rng.uniform(lo, hi, size=(x, n_sbs)))
    tx = (0.0,) + tuple(cfg.channel.interferer_powers) if n_sbs > 1 else None
    outages = user_outages(beta, powers, cfg.channel.u_min, cfg.channel.noise_power, 0, tx)

    mu = np.array([[f.intensity_at(t) for f in files] for t in range(slots)])
    rng = np.random.default_rng([seed, _REQUESTS])
    per_user = rng.poisson(np.broadcast_to(mu[:, :, None], (slots, len(files), x)))
    asked = np.zeros((slots + 1, len(files), x), dtype=np.int32)
    np.cumsum(per_user, axis=0, out=asked[1:])
    counts = per_user.sum(axis=2)

    reception = np.random.default_rng([seed, _RECEPTION]).random((slots, x))
    recovery = np.random.default_rng([seed, _RECOVERY]).random((slots, x))
    return Environment(seed, x, beta, outages, counts, asked, reception, recovery)


@dataclass
class DetectionTrace:
    """Per-slot detector output over the horizon.

    ``alarms`` rows are ``(alarm_t, file_index, change_t, psi1)``; the
    statistic is NaN during initialisation.
    """

    counts: np.ndarray
    running_mean: np.ndarray
    stat: np.ndarray
    alarm: np.ndarray
    alarms: list[tuple[int, int, int, float]]
    init_T: int


def run_detection(cfg: ScenarioConfig, env: Environment) -> DetectionTrace:
    d = cfg.detector
    H = cfg.horizon
    n_files = len(cfg.files)
    bank = DetectorBank(n_files, d.h, d.C, d.window_max)
    rm = np.zeros((H, n_files))
    stat = np.full((H, n_files), np.nan)
    flag = np.zeros((H, n_files), dtype=bool)
    alarms = []
    for t in range(H):
        if t < d.init_T:
            bank.observe(env.counts[t])
        else:
            if not bank.armed:
                bank.arm()
            for a in bank.step(env.counts[t]):
                alarms.append((t, a.file_index, a.change_t, a.psi1))
                flag[t, a.file_index] = True
            stat[t] = bank.last_stat
        rm[t] = bank.running_mean
    return DetectionTrace(env.counts[:H].copy(), rm, stat, flag, alarms, d.init_T)


@dataclass(frozen=True)
class RoundRecord:
    theta: int
    start: int
    end: int  # exclusive
    file: str | None  # None for an idle slot with an empty cache
    power_index: int
    power: float
    requesters: int
    duration: int
    energy: float
    recovered: int
    reward: float
    expected_reward: float
    oracle_reward: float
    cumulative_regret: float
    cache: tuple[str, ...]
    alarms: tuple[str, ...]
    diagnostic_ok: bool


@dataclass(frozen=True)
class CacheRecord:
    theta: int  # 0 is the placement after initialisation
    slot: int
    contents: tuple[str, ...]
    value: float
    backhaul: float


@dataclass
class Trace:
    scenario_hash: str
    seed: int
    policy: str
    user_count: int
    init_T: int
    horizon: int
    labels: tuple[str, ...]
    powers: tuple[float, ...]
    rounds: list[RoundRecord]
    caches: list[CacheRecord]
    detection: DetectionTrace | None
    true_changes: list[tuple[str, int, float, float]]  # (file, slot, before, after), per-user intensities
    change_C: float
    warnings: list[str] = field(default_factory=list)


def _estimates(cfg: ScenarioConfig, rm: np.ndarray) -> np.ndarray:
    if cfg.alive.mode == "per_user":
        return rm / cfg.geometry.build().mean_users
    return rm


def _place(cfg, labels, sizes, est, cache: CacheState, theta: int, log: list[str], slot: int) -> CacheState:
    estimates = dict(zip(labels, (float(v) for v in est)))
    alive = update_alive(estimates, cfg.alive.alpha)
    try:
        sol = solve_knapsack(PlacementProblem.from_estimates(sizes, estimates, alive.members, cfg.cache.capacity))
    except EmptyAliveSet:
        msg = f"slot {slot}: no alive file, keeping the previous cache"
        log.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        return cache
    return CacheState(cache.capacity_C, frozenset(sol.selected), theta, sol.value)


def _true_changes(cfg: ScenarioConfig):
    out = []
    for f in cfg.file_specs():
        sched = f.popularity_schedule
        for (_, before), (t, after) in zip(sched, sched[1:]):
            if t < cfg.horizon:
                out.append((f.label, t, before, after))
    return sorted(out, key=lambda r: (r[1], r[0]))


def _run_policy(cfg: ScenarioConfig, env: Environment, det: DetectionTrace, policy: Policy, scenario_hash: str) -> Trace:
    files = cfg.file_specs()
    labels = tuple(f.label for f in files)
    index = {f: i for i, f in enumerate(labels)}
    sizes = {f.label: f.size_S for f in files}
    Lp = {f.label: f.Lprime for f in files}
    dpol = {f.label: DeliveryPolicy.for_file(f.Lprime, cfg.delivery.kappa, cfg.delivery.delta) for f in files}
    powers = cfg.power_set()
    H, T0 = cfg.horizon, cfg.detector.init_T
    prng = np.random.default_rng([env.seed, _POLICY])

    log: list[str] = []
    est = _estimates(cfg, det.running_mean)
    cache = _place(cfg, labels, sizes, est[T0 - 1], CacheState(cfg.cache.capacity), 0, log, T0 - 1)
    caches = [CacheRecord(0, T0 - 1, tuple(sorted(cache.contents)), cache.value, sum(sizes[f] for f in cache.contents))]
    ledger = RegretLedger()
    rounds: list[RoundRecord] = []

    t, theta = T0, 1
    prev = (0, T0)
    pending, since_update = False, 0
    while t < H:
        contents = tuple(sorted(cache.contents))
        if contents:
            policy.set_cache(contents)
            req = {f: env.requesters(index[f], *prev) for f in contents}
            exp_cache: dict[ArmId, float] = {}

            def expected(arm: ArmId) -> float:
                if arm not in exp_cache:
                    o = env.outages[req[arm.file], arm.power]
                    exp_cache[arm] = expected_utility(o, dpol[arm.file], Lp[arm.file], powers[arm.power])
                return exp_cache[arm]

            oracle_val = max(expected(a) for a in policy.live_arms())
            arm = policy.choose(theta, prng, expected)
            users = req[arm.file]
            session = BroadcastSession(env.outages[users, arm.power], dpol[arm.file], Lp[arm.file], powers[arm.power])
            s = t
            while not session.done:
                session.send(env.reception_u[s, users], env.recovery_u[s, users])
                s += 1
            out = session.outcome()
            reward = utility(out)
            policy.update(arm, reward)
            chosen = expected(arm)
            cum = ledger.record(theta, arm, reward, chosen, oracle_val)

            uncached = {f: float(est[t - 1, index[f]]) for f in labels if f not in cache.contents}
            diag = decoupling_diagnostic(cache.contents, uncached, Lp, powers.p_min, oracle_val)
            end = t + out.duration_T
            file_, k, n_req, energy, K = arm.file, arm.power, len(users), out.energy_E, out.recovered_K
        else:
            end = t + 1
            file_, k, n_req, energy, K, reward, chosen, oracle_val = None, -1, 0, 0.0, 0, 0.0, 0.0, 0.0
            cum = ledger.cumulative[-1] if ledger.cumulative else 0.0
            diag = None

        span_alarms = tuple(sorted({labels[f] for (a_t, f, _, _) in _alarms_in(det, t, min(end, H))}))
        rounds.append(RoundRecord(theta, t, end, file_, k, powers[k] if k >= 0 else 0.0, n_req, end - t, energy, K,
                                  reward, chosen, oracle_val, cum, contents, span_alarms,
                                  True if diag is None else diag.ok))
        pending = pending or bool(span_alarms)
        since_update += 1
        if pending and since_update >= cfg.cache.update_every:
            new = _place(cfg, labels, sizes, est[min(end, H) - 1], cache, theta, log, min(end, H) - 1)
            _, _, backhaul = fetch_delta(cache, new, sizes)
            if new is not cache:
                caches.append(CacheRecord(theta, min(end, H) - 1, tuple(sorted(new.contents)), new.value, backhaul))
            cache = new
            pending, since_update = False, 0
        prev = (t, min(end, H))
        t = end
        theta += 1

    return Trace(scenario_hash, env.seed, policy.kind, env.user_count, T0, H, labels, tuple(powers.levels), rounds,
                 caches, det, _true_changes(cfg), cfg.detector.C, log)


def _alarms_in(det: DetectionTrace, start: int, end: int):
    if start >= end:
        return []
    rows, cols = np.nonzero(det.alarm[start:end])
    return [(start + r, c, None, None) for r, c in zip(rows, cols)]


def _policy_for(cfg: ScenarioConfig, kind: str) -> Policy:
    b = cfg.bandit
    return make_policy(kind, len(cfg.powers), b.beta, b.zeta, b.epsilon, b.epsilon0)


def run_scenario(cfg: ScenarioConfig, seed: int | None = None, kind: str | None = None) -> Trace:
    """One replication of the caching and delivery protocol."""
    seed = cfg.seed_list[0] if seed is None else seed
    env = build_environment(cfg, seed)
    det = run_detection(cfg, env)
    return _run_policy(cfg, env, det, _policy_for(cfg, kind or cfg.policy), cfg.hash())


def run_baseline_suite(cfg: ScenarioConfig, kinds, seed: int | None = None) -> dict[str, Trace]:
    """One trace per policy kind on a shared world (common random numbers)."""
    seed = cfg.seed_list[0] if seed is None else seed
    env = build_environment(cfg, seed)
    det = run_detection(cfg, env)
    h = cfg.hash()
    return {k: _run_policy(cfg, env, det, _policy_for(cfg, k), h) for k in kinds}


def match_alarms(trace: Trace) -> tuple[list[dict], dict[str, int]]:
    """Pair true changes of size >= C with the first alarm of that file
    before its next change. Unpaired alarms count as false alarms."""
    det = trace.detection
    by_file: dict[str, list[int]] = {f: [] for f in trace.labels}
    for a_t, fi, _, _ in det.alarms:
        by_file[trace.labels[fi]].append(a_t)
    used: set[tuple[str, int]] = set()
    detections = []
    changes = [c for c in trace.true_changes if abs(c[3] - c[2]) >= trace.change_C]
    for f, slot, before, after in trace.true_changes:
        nxt = min([c[1] for c in trace.true_changes if c[0] == f and c[1] > slot], default=trace.horizon)
        if (f, slot, before, after) not in changes:
            continue
        hit = next((a for a in by_file[f] if slot <= a < nxt), None)
        if hit is not None:
            used.add((f, hit))
        detections.append(dict(file=f, change_t=slot, alarm_t=hit, delay=None if hit is None else hit - slot))
    false = {f: sum(1 for a in by_file[f] if (f, a) not in used) for f in trace.labels}
    return detections, false


def segments(trace: Trace) -> list[tuple[int, int]]:
    cuts = sorted({c[1] for c in trace.true_changes} | {trace.init_T, trace.horizon})
    return [(a, b) for a, b in zip(cuts, cuts[1:]) if a < b]


def compute_metrics(trace: Trace, tail_fraction: float = 0.2) -> dict:
    """Summary numbers, all recomputable from the raw trace."""
    played = [r for r in trace.rounds if r.file is not None]
    n = len(played)
    rewards = np.array([r.reward for r in played])
    avg = np.cumsum(rewards) / np.arange(1, n + 1) if n else np.zeros(0)
    tail = rewards[int(math.floor(n * (1 - tail_fraction))):] if n else rewards
    detections, false = (match_alarms(trace) if trace.detection is not None else ([], {}))
    delays = [d["delay"] for d in detections if d["delay"] is not None]
    freq = []
    for a, b in segments(trace):
        counts: dict[str, int] = {}
        for r in played:
            if a <= r.start < b:
                key = f"{r.file}@{r.power:g}"
                counts[key] = counts.get(key, 0) + 1
        freq.append(dict(start=a, end=b, counts=counts))
    return dict(
        rounds=n,
        idle_slots=sum(1 for r in trace.rounds if r.file is None),
        slots_consumed=trace.init_T + sum(r.duration for r in trace.rounds),
        total_energy=math.fsum(r.power * r.duration for r in played),
        total_recovered=int(sum(r.recovered for r in played)),
        average_utility=float(avg[-1]) if n else 0.0,
        tail_average_utility=float(tail.mean()) if tail.size else 0.0,
        cumulative_regret=played[-1].cumulative_regret if n else 0.0,
        average_utility_series=avg.tolist(),
        detections=detections,
        mean_detection_delay=float(np.mean(delays)) if delays else None,
        false_alarms=false,
        backhaul=math.fsum(c.backhaul for c in trace.caches),
        cache_updates=len(trace.caches) - 1,
        diagnostic_warnings=sum(1 for r in played if not r.diagnostic_ok),
        action_frequencies=freq,
    )


def modal_actions(trace: Trace) -> list[str | None]:
    """Most frequent (file, power) action per stationary segment."""
    out = []
    for seg in compute_metrics(trace)["action_frequencies"]:
        c = seg["counts"]
        out.append(max(sorted(c), key=c.get) if c else None)
    return out


def packet_success(sinr_db: float, u_min: float) -> float:
    """Per-packet success under Rayleigh fading with mean SINR ``sinr_db``."""
    link = LinkParams.build(signal_rate=10 ** (-sinr_db / 10), noise_power=1.0)
    return float(1.0 - sinr_cdf_closed(math.expm1(u_min), link))


def _segment_outage(success: float, cfg: VideoExperimentConfig, D: float, rng) -> float:
    # segment i (1-based) must collect L' packets by slot floor(i * D);
    # a late segment is dropped and the next one starts at once
    need = cfg.blocks + cfg.overhead
    runs, S = cfg.runs, cfg.segments
    seg = np.zeros(runs, dtype=int)
    got = np.zeros(runs, dtype=int)
    failed = np.zeros(runs, dtype=int)
    deadlines = np.floor(np.arange(1, S + 1) * D + 1e-9).astype(int)
    slot = 0
    while True:
        active = seg < S
        if not active.any():
            break
        slot += 1
        got += active & (rng.random(runs) < success)
        done = active & (got >= need)
        late = active & ~done & (slot >= deadlines[np.minimum(seg, S - 1)])
        failed += late
        seg += done | late
        got[done | late] = 0
    return float(failed.mean() / S)


def run_video_experiment(cfg: VideoExperimentConfig) -> list[dict]:
    """Segment outage frequency per (deadline multiplier, mean SINR)."""
    rows = []
    for i, D in enumerate(cfg.deadlines):
        for j, snr in enumerate(cfg.sinr_db):
            rng = np.random.default_rng([cfg.seed, i, j])
            s = packet_success(snr, cfg.u_min)
            if s >= 1.0:
                outage = 0.0
            else:
                outage = _segment_outage(s, cfg, D, rng)
            rows.append(dict(deadline=D, sinr_db=snr, packet_success=s, outage=outage))
    return rows
