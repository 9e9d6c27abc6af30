"""Command-line entry point: run, gen, trace, bench and policy lint."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from typing import Optional

from .compaction import DEFAULT_INACTIVE_SECS, DEFAULT_LST_CAP, DEFAULT_WINDOW_T
from .events import EntityId, EventFormatError
from .forensics import DEFAULT_MAX_DEPTH, backward_trace, forward_trace
from .graph import UnknownEntity
from .ingest import (
    PropagatedParseError,
    SourceUnavailable,
    StreamSource,
    open_source,
    rate_curve,
    stream_stats,
    write_rate_csv,
)
from .judgment import AlertSink, SinkUnavailable
from .pipeline import DEFAULT_QUEUE_CAP, Engine, EngineConfig
from .policy import PolicyError, load_policy
from .scenarios import GroundTruthManifest, InvalidSpec, ScenarioName, ScenarioSpec, generate

log = logging.getLogger("streamprov")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_APT = 2


def _add_source(p: argparse.ArgumentParser, live: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--replay", metavar="FILE", help="replay a canonical JSON-lines corpus")
    if live:
        g.add_argument("--live", action="store_true", help="read canonical lines from standard input")
    p.add_argument("--rate", type=float, default=None, metavar="N", help="replay throttle in events/second")


def _add_engine(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", default="default", metavar="PATH", help="policy file ('default' for the shipped one)")
    p.add_argument("--lst-cap", type=int, default=DEFAULT_LST_CAP, metavar="N")
    p.add_argument("--window-t", type=int, default=DEFAULT_WINDOW_T, metavar="N")
    p.add_argument("--inactive-secs", type=float, default=DEFAULT_INACTIVE_SECS, metavar="N")
    p.add_argument("--no-compaction", action="store_true",
                   help="oracle mode: no skipping, pruning or offload")
    p.add_argument("--no-prune", action="store_true", help="disable exit-time pruning only")
    p.add_argument("--no-offload", action="store_true", help="disable inactive-file offload only")
    p.add_argument("--offload-path", metavar="PATH", help="offload store file (default: a temp file)")
    p.add_argument("--realert", action="store_true", help="re-raise alerts on every label change")
    p.add_argument("--full-trace", action="store_true", help="disable label-guided trace pruning")
    p.add_argument("--max-depth", type=int, default=DEFAULT_MAX_DEPTH, metavar="N")
    p.add_argument("--queue-cap", type=int, default=DEFAULT_QUEUE_CAP, metavar="N")
    p.add_argument("--seed", type=int, default=None, metavar="N", help="accepted for uniform invocation; runs are deterministic")


def _config(args, **extra) -> EngineConfig:
    oracle = args.no_compaction
    return EngineConfig(
        policy=args.policy,
        compaction=not oracle,
        pruning=not (oracle or args.no_prune),
        offload=not (oracle or args.no_offload),
        lst_cap=args.lst_cap,
        window_t=args.window_t,
        inactive_secs=args.inactive_secs,
        offload_path=args.offload_path,
        realert=args.realert,
        max_depth=args.max_depth,
        full_trace=args.full_trace,
        **extra,
    )


def _source(args) -> StreamSource:
    if getattr(args, "live", False):
        return StreamSource.live(sys.stdin)
    return StreamSource.replay(args.replay, args.rate)


def _run_stream(engine: Engine, args):
    stream = open_source(_source(args))
    stats = engine.run_threaded(stream, queue_cap=args.queue_cap)
    return stream, stats


def cmd_run(args) -> int:
    sink = AlertSink(args.alerts_out)
    engine = Engine(_config(args, chain_dir=args.chain_dir), sink=sink)
    try:
        _, stats = _run_stream(engine, args)
    finally:
        sink.close()
    if args.dump_graph:
        with open(args.dump_graph, "w", encoding="utf-8") as fh:
            json.dump(engine.store.to_json(), fh)
        if args.dump_dot:
            with open(args.dump_dot, "w", encoding="utf-8") as fh:
                fh.write(engine.store.to_dot())
    if args.stats_out:
        stats.write(args.stats_out)
    else:
        print(json.dumps(stats.to_dict(), sort_keys=True), file=sys.stderr)
    engine.close()
    return EXIT_APT if stats.apt_alerts else EXIT_OK


def cmd_gen(args) -> int:
    spec = ScenarioSpec(ScenarioName.parse(args.scenario), args.seed, args.events, args.attack_offset)
    m = generate(spec, args.out, args.manifest)
    log.info("wrote %d events (%d attack) to %s", m.event_count, m.attack_event_count, args.out)
    return EXIT_OK


def _entity(text: str, default_kind: str = "P") -> EntityId:
    if len(text) > 2 and text[1] == ":" and text[0] in "PFN":
        return EntityId.parse(text)
    return EntityId.parse(f"{default_kind}:{text}")


def cmd_trace(args) -> int:
    engine = Engine(_config(args, trace_apt=False))
    _run_stream(engine, args)
    at = args.at if args.at is not None else engine.last_ts
    if at is None:
        raise UnknownEntity("empty stream")
    origin = _entity(args.process)
    if args.forward:
        chain = forward_trace(origin, at, engine.store, args.max_depth, args.full_trace)
    else:
        chain = backward_trace(origin, at, engine.store, args.max_depth, args.full_trace)
    if args.out:
        chain.write(args.out)
    else:
        sys.stdout.write(chain.to_json() + "\n")
    log.info("%s chain: %d nodes, %d edges", chain.direction, len(chain.nodes), len(chain.edges))
    engine.close()
    return EXIT_OK


def cmd_bench(args) -> int:
    gen_eps = args.generation_eps
    if gen_eps is None and args.manifest:
        gen_eps = GroundTruthManifest.load(args.manifest).generation_profile.get("busy_rate")
    if gen_eps is None:
        gen_eps = 400.0
    engine = Engine(_config(args, profile=args.stage_timing))
    t0 = time.perf_counter()
    stream, stats = _run_stream(engine, args)
    wall = time.perf_counter() - t0
    ingest = stream_stats(stream)
    report = {
        "events": stats.events_total,
        "wall_seconds": wall,
        "consumption_eps": stats.events_total / wall if wall > 0 and stats.events_total else 0.0,
        "generation_eps": gen_eps,
        "ingest": ingest,
        "queue_capacity": args.queue_cap,
        "queue_high_water": stats.queue_high_water,
        "stage_seconds": engine.stage_seconds if args.stage_timing else None,
    }
    report["ratio"] = report["consumption_eps"] / gen_eps if gen_eps else float("inf")
    # an empty corpus passes trivially
    report["realtime"] = stats.events_total == 0 or report["ratio"] >= args.min_ratio
    if args.rate_csv:
        write_rate_csv(rate_curve(stream, "event"), args.rate_csv)
    print(json.dumps(report, indent=2, sort_keys=True))
    engine.close()
    return EXIT_OK if report["realtime"] else EXIT_ERROR


def cmd_policy_lint(args) -> int:
    policy = load_policy(args.policy)
    summary = {
        "init_rules": len(policy.init_rules),
        "transfer_rules": len(policy.transfer_rules),
        "derived_rules": len(policy.derived_rules),
        "phf": sorted(l.value for l in policy.phf_set),
        "judgment_rules": [r.alert_name for r in policy.judgment_rules],
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamprov", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="detect over a replayed or live stream")
    _add_source(p)
    _add_engine(p)
    p.add_argument("--alerts-out", default=None, metavar="PATH", help="alert JSON lines (default: stdout)")
    p.add_argument("--stats-out", metavar="PATH")
    p.add_argument("--dump-graph", metavar="PATH", help="write the resident graph as JSON")
    p.add_argument("--dump-dot", metavar="PATH", help="with --dump-graph, also write DOT")
    p.add_argument("--chain-dir", default="chains", metavar="DIR", help="where APT chain exports go")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen", help="generate a scenario corpus and manifest")
    p.add_argument("--scenario", required=True, help="L1 L2 L3 E1 E2 BENIGN CHURN")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--events", type=int, default=None)
    p.add_argument("--attack-offset", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("trace", help="backward/forward trace after replaying a corpus")
    _add_source(p, live=False)
    _add_engine(p)
    p.add_argument("--process", required=True, metavar="ID", help="entity id, e.g. 1234:1 or F:/tmp/x")
    p.add_argument("--at", type=int, default=None, metavar="TS", help="time bound (default: last event)")
    p.add_argument("--forward", action="store_true")
    p.add_argument("--out", metavar="chain.json|chain.dot")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("bench", help="measure consumption rate against a generation profile")
    _add_source(p, live=False)
    _add_engine(p)
    p.add_argument("--generation-eps", type=float, default=None)
    p.add_argument("--manifest", default=None, help="read the generation profile from a manifest")
    p.add_argument("--min-ratio", type=float, default=5.0)
    p.add_argument("--stage-timing", action="store_true")
    p.add_argument("--rate-csv", metavar="PATH", help="export the per-second generation curve")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("policy", help="policy utilities")
    psub = p.add_subparsers(dest="policy_command", required=True)
    lint = psub.add_parser("lint", help="validate a policy file")
    lint.add_argument("--policy", default="default")
    lint.add_argument("path", nargs="?", default=None)
    lint.set_defaults(func=lambda a: cmd_policy_lint(argparse.Namespace(policy=a.path or a.policy)))
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PropagatedParseError as exc:
        print(f"error: malformed input at line {exc.line}: {exc.cause}", file=sys.stderr)
    except PolicyError as exc:
        print(f"error: policy: {exc}", file=sys.stderr)
    except (SourceUnavailable, SinkUnavailable, InvalidSpec, UnknownEntity, EventFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
