"""navsim command line: validate, run, compare, allocate.

Exit status: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .heuristics import FlowDemand, binding_link, sfg_allocate
from .policy import PRESETS, PolicyError, SearchSpaceTooLarge
from .scenario import ScenarioError, load_scenario, validate_scenario
from .topology import MBPS, Path as LinkPath, TopologyError

log = logging.getLogger("navsim")

HEADLINE = [("asb_mbps", "ASB (Mbps)"), ("aqs", "AQS"), ("ans", "ANS"), ("asd_s", "ASD (s)"), ("asl_s", "ASL (s)"),
            ("chr", "CHR"), ("etr", "ETR"), ("ptsr", "PTSR"), ("btl_bits", "BTL (bits)"), ("ncv_usd", "NCV ($)"),
            ("eec_joules", "EEC proxy (J)"), ("proxy_qoe", "proxy QoE")]


class UsageError(Exception):
    pass


def _seeds(text):
    if text is None:
        return None
    try:
        return [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seed expects integers, got {text!r}") from None


def _policy(name):
    if name is not None and name not in PRESETS:
        raise UsageError(f"unknown policy {name!r}; choose one of {', '.join(PRESETS)}")
    return name


def write_outputs(report, engine, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(report.to_json() + "\n")
    (out / "timings.json").write_text(json.dumps(engine.timings(), indent=2, sort_keys=True) + "\n")
    with open(out / "per_client.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["client_id", "asb_mbps", "aqs", "ans", "asd_s", "proxy_qoe"])
        for row in report.per_client:
            w.writerow([row["client_id"], f"{row['asb_mbps']:.6f}", row["aqs"], row["ans"], f"{row['asd_s']:.6f}",
                        f"{row['proxy_qoe']:.6f}"])
    with open(out / "per_slot.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "served", "held", "origin_bits"])
        for row in engine.acc.per_slot:
            w.writerow([row["slot"], row["served"], row["held"], int(row["origin_bits"])])


def _run_one(scenario_path: str, policy, seed, slots, out: str):
    from .engine import run_scenario
    scenario = load_scenario(scenario_path)
    report, engine = run_scenario(scenario, policy, seed, slots)
    write_outputs(report, engine, Path(out))
    return report.summary()


def print_table(summary: dict, stream=None) -> None:
    stream = stream or sys.stdout
    print(f"policy {summary['policy']}  seed {summary['seed']}  slots {summary['slots']}  "
          f"requests {summary['requests']}", file=stream)
    for key, label in HEADLINE:
        value = summary[key]
        print(f"  {label:<16} {value:.6g}" if isinstance(value, float) else f"  {label:<16} {value}", file=stream)


def cmd_validate(args) -> int:
    diags = validate_scenario(args.scenario)
    for d in diags:
        print(str(d), file=sys.stderr)
    if not diags:
        print(f"{args.scenario}: ok")
    return 0 if not diags else 1


def cmd_run(args) -> int:
    policy = _policy(args.policy)
    seeds = _seeds(args.seed)
    load_scenario(args.scenario)  # fail fast with every diagnostic
    out = Path(args.out)
    if not seeds or len(seeds) == 1:
        summary = _run_one(args.scenario, policy, seeds[0] if seeds else None, args.slots, str(out))
        print_table(summary)
        return 0
    jobs = max(1, args.jobs)
    dirs = [str(out / f"seed-{s}") for s in seeds]
    if jobs == 1:
        results = [_run_one(args.scenario, policy, s, args.slots, d) for s, d in zip(seeds, dirs)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_one, args.scenario, policy, s, args.slots, d) for s, d in zip(seeds, dirs)]
            results = [f.result() for f in futures]
    for summary in results:
        print_table(summary)
    return 0


def cmd_compare(args) -> int:
    from .instances import HEURISTICS, compare, load_instance
    names = [n for n in (args.heuristics or "gba,efg1").split(",") if n]
    for n in names:
        if n not in HEURISTICS:
            raise UsageError(f"unknown heuristic {n!r}; choose from {', '.join(HEURISTICS)}")
    try:
        rows = compare(load_instance(args.scenario), names, limit=args.limit)
    except SearchSpaceTooLarge as exc:
        print(f"error: {exc}. Use fewer requests or candidate nodes, or raise --limit.", file=sys.stderr)
        return 1
    print(f"{'method':<14} {'objective':>12} {'NOV':>8} {'ETV (ms)':>10} feasible")
    for r in rows:
        print(f"{r.name:<14} {r.objective:>12.6f} {r.nov:>8.3f} {1e3 * r.etv_s:>10.3f} {r.feasible}")
    return 0


def load_demands(path) -> tuple[dict[str, float], list[FlowDemand]]:
    raw = tomllib.loads(Path(path).read_text())
    caps = {str(l["id"]): float(l["mbps"]) * MBPS for l in raw.get("links", [])}
    flows = []
    for f in raw.get("flows", []):
        links = tuple(str(x) for x in f["links"])
        flows.append(FlowDemand(str(f["edge"]), str(f["server"]), float(f["mbps"]) * MBPS,
                                LinkPath(str(f["server"]), str(f["edge"]), links)))
    return caps, flows


def cmd_allocate(args) -> int:
    caps, flows = load_demands(args.demands)
    F, x = sfg_allocate(caps, flows)
    print(f"F = {F:.6f}")
    link = binding_link(caps, flows, F)
    if link is not None:
        print(f"binding link: {link}")
    if flows:
        print(f"{'edge':<10} {'server':<10} {'demand (Mbps)':>14} {'allocated (Mbps)':>17}")
    for f, a in zip(flows, x):
        print(f"{f.edge_id:<10} {f.server_id:<10} {f.demand / MBPS:>14.2f} {a / MBPS:>17.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="navsim", description="Slot-based edge/CDN/P2P video delivery simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario and every file it references")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="simulate a scenario and write summary.json, per_client.csv, per_slot.csv")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", help="seed, or comma-separated seeds written to per-seed subdirectories")
    r.add_argument("--policy", help=f"policy preset ({', '.join(PRESETS)})")
    r.add_argument("--slots", type=int, help="override the horizon in slots")
    r.add_argument("--out", default="navsim-out")
    r.add_argument("--jobs", type=int, default=1, help="parallel workers when several seeds are given")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="joint oracle versus heuristics on one decision snapshot")
    c.add_argument("--scenario", required=True, help="instance file")
    c.add_argument("--policy", dest="heuristics", help="comma-separated heuristics (gba, efg1, greedy-oracle)")
    c.add_argument("--limit", type=int, default=10 ** 6, help="largest joint search space to enumerate")
    c.set_defaults(func=cmd_compare)

    a = sub.add_parser("allocate", help="fair bandwidth shares for a demands file")
    a.add_argument("demands")
    a.set_defaults(func=cmd_allocate)
    return p


def main(argv=None) -> int:
    level = os.environ.get("NAVSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"navsim: error: {exc}", file=sys.stderr)
        return 2
    except ScenarioError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (PolicyError, TopologyError, ValueError, KeyError, OSError, RuntimeError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
