"""Acceptance criteria, one test per criterion.

Corpora are generated at ``STREAMPROV_ACCEPT_EVENTS`` events each (default
200000; set 1000000 for the full-size run).  Every test prints one
``name: PASS/FAIL`` line through the ``criterion`` fixture.
"""

from __future__ import annotations

import dataclasses
import json
import os
import random
from types import SimpleNamespace

import pytest

from streamprov.cli import main
from streamprov.events import EntityId, EventType, parse_event, serialize_event
from streamprov.forensics import backward_trace, chain_union, forward_trace
from streamprov.pipeline import Engine, EngineConfig, alert_multiset
from streamprov.policy import load_policy
from streamprov.scenarios import ScenarioName, ScenarioSpec, generate_lines
from streamprov.compaction import Compactor
from streamprov.graph import VIRTUAL_ROOT

from streams import random_stream, reachable_backward, reachable_forward, skip_is_sound
from test_compaction import nine_event_stream

pytestmark = pytest.mark.acceptance

EVENTS = int(os.environ.get("STREAMPROV_ACCEPT_EVENTS", "200000"))
CHURN_EVENTS = int(os.environ.get("STREAMPROV_CHURN_EVENTS", "60000"))
SEED = 7
ATTACKS = ["L1", "L2", "L3", "E1", "E2"]
ALL = ATTACKS + ["BENIGN"]
LST_CASES = 100_000


def _run(events, config):
    engine = Engine(config)
    engine.run(events)
    return engine


@pytest.fixture(scope="session")
def corpora():
    out = {}
    for name in ALL:
        lines, manifest = generate_lines(ScenarioSpec(ScenarioName.parse(name), SEED, EVENTS))
        events = [parse_event(line, i) for i, line in enumerate(lines)]
        out[name] = SimpleNamespace(
            lines=lines,
            events=events,
            manifest=manifest,
            fast=_run(events, EngineConfig()),
            oracle=_run(events, EngineConfig.oracle()),
        )
    yield out
    for run in out.values():
        run.fast.close()
        run.oracle.close()


def _pairs(alerts):
    return {(a.alert_name, a.process.key) for a in alerts}


# --- 1 -------------------------------------------------------------------------------

def test_c1_compaction_equivalence(corpora, criterion):
    bad = [n for n in ALL if alert_multiset(corpora[n].fast.alerts) != alert_multiset(corpora[n].oracle.alerts)]
    sizes = ", ".join(f"{n}={len(corpora[n].fast.alerts)}" for n in ALL)
    assert criterion("C1 compaction equivalence", not bad, f"alerts per corpus: {sizes}; mismatched: {bad}")


# --- 2 -------------------------------------------------------------------------------

def test_c2_detection_completeness(corpora, criterion):
    problems = []
    for name in ATTACKS:
        run = corpora[name]
        m = run.manifest
        got = _pairs(run.fast.alerts) - set(m.permitted_benign_alerts)
        if got != set(m.expected_alerts):
            problems.append(f"{name}: missing {set(m.expected_alerts) - got}, extra {got - set(m.expected_alerts)}")
        apt = [a for a in run.fast.alerts if a.alert_name == "APT"]
        if len(apt) != 1 or apt[0].process.key != m.apt_process:
            problems.append(f"{name}: APT alerts {[a.process.key for a in apt]} != [{m.apt_process}]")
    assert criterion("C2 detection completeness", not problems, "; ".join(problems) or "exact (alert, process) match on 5 corpora")


# --- 3 -------------------------------------------------------------------------------

def test_c3_false_positive_bound(corpora, criterion):
    run = corpora["BENIGN"]
    apt = [a for a in run.fast.alerts if a.alert_name == "APT"]
    threat = [a for a in run.fast.alerts if a.alert_name != "APT"]
    permitted = set(run.manifest.permitted_benign_alerts)
    unexpected = _pairs(threat) - permitted
    ok = not apt and not unexpected
    assert criterion("C3 false-positive bound", ok,
                     f"APT={len(apt)}, permitted Threat alerts={len(threat)}, unexpected={sorted(unexpected)}")


# --- 4 -------------------------------------------------------------------------------

def test_c4_skip_ratio_bands(corpora, criterion):
    bands = {"L": (0.25, 0.45), "E": (0.12, 0.30)}
    ratios = {n: corpora[n].fast.stats().skip_ratio for n in ATTACKS}
    bad = [n for n, r in ratios.items() if not bands[n[0]][0] <= r <= bands[n[0]][1]]
    detail = ", ".join(f"{n}={r:.3f}" for n, r in ratios.items())
    assert criterion("C4 skip ratio bands", not bad, f"{detail} (L in [0.25,0.45], E in [0.12,0.30])")


# --- 5 -------------------------------------------------------------------------------

def test_c5_pruning_sanity(corpora, criterion):
    stats = {n: corpora[n].fast.stats() for n in ATTACKS}
    prune = {n: s.process_prune_ratio for n, s in stats.items()}
    bad = [n for n, r in prune.items() if not 0.02 <= r <= 0.12]
    l3, l2 = stats["L3"].file_offload_ratio, stats["L2"].file_offload_ratio
    ok = not bad and l3 > l2
    detail = ", ".join(f"{n}={r:.3f}" for n, r in prune.items())
    assert criterion("C5 pruning sanity", ok, f"prune ratios {detail}; offload L3={l3:.3f} > L2={l2:.3f}")


# --- 6 -------------------------------------------------------------------------------

def test_c6_bounded_memory(criterion):
    def peak(n, **cfg):
        lines, _ = generate_lines(ScenarioSpec(ScenarioName.BenignChurn, SEED, n))
        engine = Engine(EngineConfig(**cfg))
        engine.run(parse_event(line, i) for i, line in enumerate(lines))
        engine.close()
        return engine.peak_resident

    small, big = peak(CHURN_EVENTS), peak(10 * CHURN_EVENTS)
    small_np, big_np = peak(CHURN_EVENTS, pruning=False), peak(10 * CHURN_EVENTS, pruning=False)
    growth = big / small - 1
    growth_np = big_np / small_np - 1
    ok = growth < 0.10 and growth_np > 1.0
    assert criterion("C6 bounded memory", ok,
                     f"peak resident {small}->{big} (+{growth:.1%}); without pruning {small_np}->{big_np} (+{growth_np:.1%})")


# --- 7 -------------------------------------------------------------------------------

def test_c7_real_time(corpora, criterion, tmp_path, capsys):
    run = corpora["L1"]
    corpus = tmp_path / "l1.jsonl"
    corpus.write_text("\n".join(run.lines) + "\n")
    manifest = tmp_path / "l1.json"
    run.manifest.write(str(manifest))
    cap = 65536
    code = main(["bench", "--replay", str(corpus), "--manifest", str(manifest), "--queue-cap", str(cap)])
    report = json.loads(capsys.readouterr().out)
    busy = run.manifest.generation_profile["busy_rate"]
    ok = code == 0 and report["consumption_eps"] >= 5 * busy and report["queue_high_water"] < cap
    assert criterion("C7 real-time property", ok,
                     f"consumption {report['consumption_eps']:.0f} eps vs busy profile {busy:.0f} eps "
                     f"(ratio {report['ratio']:.1f}); queue high water {report['queue_high_water']} < {cap}")


# --- 8 -------------------------------------------------------------------------------

def test_c8a_lst_bounded_and_sound(criterion):
    failures = 0
    for case in range(LST_CASES):
        rng = random.Random(case)
        stream = random_stream(rng, rng.randint(1, 30))
        comp = Compactor(lst_cap=rng.randint(1, 8), window_T=rng.randint(1, 10))
        retained = []
        for e in stream:
            retained.append(comp.decide(e).retained)
            if comp.lst.size >= comp.lst.capacity_threshold:
                failures += 1
                break
        else:
            if not skip_is_sound(stream, retained):
                failures += 1
    assert criterion("C8a LST boundedness and skip soundness", failures == 0,
                     f"{LST_CASES} random streams, {failures} failures")


def test_c8b_fork_inheritance(criterion):
    policy = load_policy()
    init = [r for r in policy.init_rules if r.target_kind.name == "PROCESS"]
    forks = failures = 0
    for case in range(300):
        engine = Engine(EngineConfig.oracle(policy=policy))
        for e in random_stream(random.Random(case), 200):
            engine.process(e)
            if e.etype is not EventType.E2_Fork:
                continue
            forks += 1
            parent = engine.store.processes[e.subject]
            child = engine.store.processes[e.object]
            own = {r.label for r in init if r.matches(child.name)}
            expected = parent.status_labels | own
            if set(child.labels) != expected:
                failures += 1
    assert criterion("C8b fork status inheritance", failures == 0, f"{forks} forks checked, {failures} failures")


def test_c8c_label_monotonicity(criterion):
    failures = 0
    for case in range(200):
        engine = Engine(EngineConfig.oracle())
        before: dict = {}
        for e in random_stream(random.Random(10_000 + case), 200):
            engine.process(e)
            for ent in (e.subject, e.object):
                node = engine.store.processes.get(ent) or engine.store.files.get(ent)
                if node is None:
                    continue
                now = set(node.labels)
                if not before.get(ent, set()) <= now:
                    failures += 1
                before[ent] = now
    assert criterion("C8c label monotonicity", failures == 0, f"200 random streams, {failures} failures")


def test_c8d_rule_order_independence(corpora, criterion):
    policy = load_policy()
    flipped = dataclasses.replace(
        policy,
        transfer_rules=tuple(reversed(policy.transfer_rules)),
        derived_rules=tuple(reversed(policy.derived_rules)),
    )
    bad = []
    for name in ALL:
        engine = _run(corpora[name].events, EngineConfig(policy=flipped))
        if alert_multiset(engine.alerts) != alert_multiset(corpora[name].fast.alerts):
            bad.append(name)
        engine.close()
    assert criterion("C8d transfer-rule order independence", not bad, f"reversed rule order on 6 corpora; mismatched {bad}")


def test_c8e_temporal_soundness(criterion):
    failures = 0
    cases = 400
    for case in range(cases):
        rng = random.Random(20_000 + case)
        stream = random_stream(rng, rng.randint(1, 200))
        engine = Engine(EngineConfig.oracle())
        engine.run(stream)
        store = engine.store
        e = rng.choice(stream)
        back = backward_trace(e.target, e.ts, store, max_depth=10_000, full=True, stop_at_entries=False)
        fwd = forward_trace(e.source, e.ts, store, max_depth=10_000, full=True)
        ok = (
            {x.seq for x in back.edges} == reachable_backward(stream, e.target, e.ts)
            and {x.seq for x in fwd.edges} == reachable_forward(stream, e.source, e.ts)
            and all(x.ts < back.visit_bounds[x.target] for x in back.edges)
            and all(x.ts > fwd.visit_bounds[x.source] for x in fwd.edges)
        )
        guided = backward_trace(e.target, e.ts, store)
        ok = ok and all(x.ts < guided.visit_bounds[x.target] for x in guided.edges)
        failures += not ok
    assert criterion("C8e backward/forward temporal soundness", failures == 0, f"{cases} random graphs, {failures} failures")


def test_c8f_pruning_safety(corpora, criterion):
    problems = []
    for name in ALL:
        run = corpora[name]
        fast = run.fast.store
        pruned = {p for p in run.oracle.store.processes if p not in fast.processes and p != VIRTUAL_ROOT}
        chains = run.fast.chains
        for chain in chains:
            hit = chain.nodes & pruned
            if hit:
                problems.append(f"{name}: pruned {sorted(map(str, hit))[:3]} in chain")
        # the uncompacted chain must not depend on anything pruning removed
        for a in run.oracle.alerts:
            if a.alert_name != "APT":
                continue
            ref = backward_trace(a.process, a.trigger_ts, run.oracle.store)
            hit = ref.nodes & pruned
            if hit:
                problems.append(f"{name}: oracle chain entities pruned {sorted(map(str, hit))[:3]}")
        lost = [x for x in run.manifest.attack_entities if not fast.knows(EntityId.parse(x))]
        if lost:
            problems.append(f"{name}: manifest entities pruned {lost}")
    assert criterion("C8f pruning safety", not problems, "; ".join(problems) or "no pruned entity in any alert chain, 6 corpora")


def test_c8g_event_round_trip(corpora, criterion):
    total = bad = 0
    for name in ALL:
        run = corpora[name]
        for line, e in zip(run.lines, run.events):
            total += 1
            if serialize_event(e) != line or parse_event(serialize_event(e), e.seq) != e:
                bad += 1
    assert criterion("C8g event format round trip", bad == 0, f"{total} records, {bad} mismatches")


# --- 9 -------------------------------------------------------------------------------

def test_c9_nine_event_micro_oracle(criterion):
    comp = Compactor()
    kept = [f"t{e.ts}" for e in nine_event_stream() if comp.decide(e).retained]
    skipped = [f"t{e.ts}" for e in nine_event_stream() if f"t{e.ts}" not in kept]
    ok = kept == ["t1", "t3", "t4", "t5", "t6", "t8"] and skipped == ["t2", "t7", "t9"]
    assert criterion("C9 nine-event micro-oracle", ok, f"retained {kept}, skipped {skipped}")


# --- forensic contract checks ------------------------------------------------------------

def test_chain_sufficiency(corpora, criterion):
    problems = []
    for name in ATTACKS:
        run = corpora[name]
        chains = [c for c in run.fast.chains if c.origin.key == run.manifest.apt_process]
        nodes = set().union(*(c.nodes for c in chains)) if chains else set()
        missing = [x for x in run.manifest.attack_entities if EntityId.parse(x) not in nodes]
        if not chains or missing:
            problems.append(f"{name}: missing {missing}")
    assert criterion("APT backward chain covers manifest attack entities", not problems, "; ".join(problems) or "5 corpora")


def test_attack_edge_coverage(corpora, criterion):
    problems = []
    for name in ATTACKS:
        run = corpora[name]
        m = run.manifest
        entry = forward_trace(EntityId.parse(m.entry["entity"]), m.entry["ts"], run.fast.store)
        chains = [c for c in run.fast.chains if c.origin.key == m.apt_process] + [entry]
        # a skipped event is represented by the retained event with the same signature
        covered = {(e.etype, e.source, e.target) for c in chains for e in c.edges}
        missing = [i for i in m.attack_edges
                   if (run.events[i].etype, run.events[i].source, run.events[i].target) not in covered]
        if missing:
            problems.append(f"{name}: {len(missing)} of {len(m.attack_edges)} uncovered")
    assert criterion("backward(APT) + forward(entry) cover manifest attack edges", not problems,
                     "; ".join(problems) or "5 corpora")
