"""Command-line front end: ``femtocache simulate | verify | video``.

Exit codes: 0 ok, 1 usage, 2 invalid configuration, 3 oracle failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bandit import POLICY_KINDS
from .config import ConfigError, ScenarioConfig, load_config
from .simulator import Trace, compute_metrics, run_baseline_suite, run_video_experiment
from .verify import COMPONENTS, run_component

log = logging.getLogger("femtocache")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_ORACLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- writers ---------------------------------------------------------------

def _write_series(path: Path, fmt: str, header: dict, columns: list[str], rows) -> Path:
    """CSV with a ``#`` provenance line, or JSON lines with a header object."""
    path = path.with_suffix("." + fmt)
    buf = io.StringIO(newline="")
    if fmt == "csv":
        buf.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    else:
        buf.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for r in rows:
            buf.write(json.dumps(dict(zip(columns, r))) + "\n")
    path.write_text(buf.getvalue())
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (tuple, list)):
        return " ".join(str(x) for x in v)
    if v is None:
        return ""
    return v


def write_trace(trace: Trace, out: Path, fmt: str) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    head = dict(scenario_hash=trace.scenario_hash, seed=trace.seed, policy=trace.policy)
    _write_series(out / "rounds", fmt, head,
                  ["round", "start", "end", "file", "power", "requesters", "duration", "energy", "recovered",
                   "reward", "expected_reward", "oracle_reward", "regret", "cache", "alarms", "diagnostic_ok"],
                  ((r.theta, r.start, r.end, r.file, r.power, r.requesters, r.duration, r.energy, r.recovered,
                    r.reward, r.expected_reward, r.oracle_reward, r.cumulative_regret, r.cache, r.alarms,
                    r.diagnostic_ok) for r in trace.rounds))
    _write_series(out / "caches", fmt, head, ["round", "slot", "contents", "total_value", "backhaul_bytes"],
                  ((c.theta, c.slot, c.contents, c.value, c.backhaul) for c in trace.caches))
    m = compute_metrics(trace)
    _write_series(out / "average_utility", fmt, head, ["round", "average_utility"],
                  enumerate(m["average_utility_series"], start=1))
    _write_series(out / "action_frequency", fmt, head, ["segment_start", "segment_end", "action", "count"],
                  ((s["start"], s["end"], a, n) for s in m["action_frequencies"] for a, n in sorted(s["counts"].items())))
    summary = {k: v for k, v in m.items() if k != "average_utility_series"}
    summary.update(head, user_count=trace.user_count, warnings=trace.warnings)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def write_detector(trace: Trace, out: Path, fmt: str) -> None:
    det = trace.detection
    head = dict(scenario_hash=trace.scenario_hash, seed=trace.seed)

    def rows():
        for t in range(det.counts.shape[0]):
            for f, label in enumerate(trace.labels):
                stat = det.stat[t, f]
                yield (t, label, int(det.counts[t, f]), float(det.running_mean[t, f]),
                       None if stat != stat else float(stat), bool(det.alarm[t, f]))

    _write_series(out / "detector", fmt, head, ["t", "file", "count", "running_mean", "glr_stat", "alarm"], rows())
    _write_series(out / "requests", fmt, head, ["t", *trace.labels],
                  ((t, *(int(c) for c in det.counts[t])) for t in range(det.counts.shape[0])))


def _simulate_seed(args):
    cfg, seed, kinds = args
    return seed, run_baseline_suite(cfg, kinds, seed)


def cmd_simulate(ns) -> int:
    cfg = _load(ns.config)
    if ns.replications is not None:
        if ns.replications < 1:
            raise UsageError("--replications must be >= 1")
        cfg = cfg.replace(replications=ns.replications)
    seeds = tuple(ns.seed) if ns.seed else cfg.seed_list
    if ns.replications is not None and ns.seed:
        seeds = seeds[: ns.replications]
    kinds = tuple(dict.fromkeys(ns.policy or [cfg.policy]))
    out = Path(ns.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out}: {exc}") from exc

    jobs = [(cfg, s, kinds) for s in seeds]
    if ns.jobs > 1:
        with ProcessPoolExecutor(ns.jobs) as pool:
            results = dict(pool.map(_simulate_seed, jobs))
    else:
        results = dict(map(_simulate_seed, jobs))

    index = {"scenario_hash": cfg.hash(), "config": cfg.to_dict(), "runs": []}
    for seed in sorted(results):
        suite = results[seed]
        seed_dir = out / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        write_detector(next(iter(suite.values())), seed_dir, ns.format)
        for kind, trace in suite.items():
            s = write_trace(trace, seed_dir / kind, ns.format)
            index["runs"].append({k: s[k] for k in ("seed", "policy", "rounds", "average_utility",
                                                    "tail_average_utility", "cumulative_regret", "total_energy",
                                                    "mean_detection_delay", "false_alarms", "backhaul")})
            log.info("seed %d %s: %d rounds, average utility %.4f", seed, kind, s["rounds"], s["average_utility"])
    (out / "summary.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(index['runs'])} run(s) to {out}")
    return EXIT_OK


def cmd_verify(ns) -> int:
    failed = 0
    for comp in ns.component or COMPONENTS:
        for check in run_component(comp, quick=ns.quick):
            print(f"[{comp}] {check.line()}")
            failed += not check.passed
    print("all oracle checks passed" if not failed else f"{failed} oracle check(s) failed")
    return EXIT_OK if not failed else EXIT_ORACLE


def cmd_video(ns) -> int:
    cfg = _load(ns.config)
    video = cfg.video
    if ns.seed:
        video = dataclasses.replace(video, seed=ns.seed[0])
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_video_experiment(video)
    head = dict(scenario_hash=cfg.hash(), seed=video.seed)
    path = _write_series(out / "video_outage", ns.format, head, ["deadline", "sinr_db", "packet_success", "outage"],
                         ((r["deadline"], r["sinr_db"], r["packet_success"], r["outage"]) for r in rows))
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def _load(path) -> ScenarioConfig:
    if path is None:
        raise UsageError("--config is required")
    return load_config(path)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="femtocache", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", required=True, help="scenario YAML file")
        sp.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    sim = sub.add_parser("simulate", help="run the caching and delivery scenario")
    common(sim)
    sim.add_argument("--replications", type=int)
    sim.add_argument("--policy", choices=POLICY_KINDS, action="append",
                     help="policy to run (repeatable; runs share the same randomness)")
    sim.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify", help="run the oracle checks")
    ver.add_argument("component", nargs="*", choices=COMPONENTS)
    ver.add_argument("--quick", action="store_true", help="smaller sample sizes")
    ver.set_defaults(func=cmd_verify)

    vid = sub.add_parser("video", help="playback-deadline outage curves")
    common(vid)
    vid.set_defaults(func=cmd_video)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return ns.func(ns)
    except UsageError as exc:
        print(f"femtocache: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"femtocache: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
