"""Detection pipeline: compaction, graph maintenance, labeling, judgment, forensics."""

from __future__ import annotations

import json
import os
import queue
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Union

from .compaction import (
    DEFAULT_INACTIVE_SECS,
    DEFAULT_LST_CAP,
    DEFAULT_WINDOW_T,
    NS,
    Compactor,
    offload_inactive_files,
    prune_on_exit,
)
from .events import EntityKind, EventRecord, EventType
from .forensics import DEFAULT_MAX_DEPTH, AttackChain, backward_trace
from .graph import GraphStore, OffloadStore
from .judgment import Alert, JudgmentEngine, NullSink
from .labels import LabelEngine
from .policy import Policy, Severity, load_policy

STATS_SCHEMA = 1
DEFAULT_QUEUE_CAP = 65536
DEFAULT_OFFLOAD_TICK_SECS = 10.0


@dataclass
class EngineConfig:
    policy: Union[Policy, str, None] = None
    compaction: bool = True
    pruning: bool = True
    offload: bool = True
    lst_cap: int = DEFAULT_LST_CAP
    window_t: int = DEFAULT_WINDOW_T
    inactive_secs: float = DEFAULT_INACTIVE_SECS
    offload_tick_secs: float = DEFAULT_OFFLOAD_TICK_SECS
    offload_path: Optional[str] = None
    realert: bool = False
    max_depth: int = DEFAULT_MAX_DEPTH
    full_trace: bool = False
    chain_dir: Optional[str] = None
    trace_apt: bool = True
    profile: bool = False

    @classmethod
    def oracle(cls, **kw) -> "EngineConfig":
        """Uncompacted reference configuration."""
        return cls(compaction=False, pruning=False, offload=False, **kw)


@dataclass
class RunStats:
    events_total: int = 0
    events_skipped: int = 0
    skip_ratio: float = 0.0
    processes_total: int = 0
    processes_pruned: int = 0
    process_prune_ratio: float = 0.0
    files_total: int = 0
    files_offloaded: int = 0
    file_offload_ratio: float = 0.0
    files_dropped: int = 0
    file_reloads: int = 0
    alerts_by_name: dict = field(default_factory=dict)
    apt_alerts: int = 0
    throughput_eps: float = 0.0
    peak_resident_entities: int = 0
    edges_retained: int = 0
    queue_high_water: int = 0
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = STATS_SCHEMA
        return d

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


class Engine:
    """Consumes ordered events and maintains all detection state.

    Everything here runs on a single thread; ``run_threaded`` adds the
    ingest producer in front of it.
    """

    def __init__(self, config: Optional[EngineConfig] = None, sink=None) -> None:
        self.config = cfg = config or EngineConfig()
        policy = cfg.policy if isinstance(cfg.policy, Policy) else load_policy(cfg.policy)
        self.policy = policy
        self.store = GraphStore(OffloadStore(cfg.offload_path))
        self.labels = LabelEngine(policy)
        self.judge = JudgmentEngine(policy.judgment_rules, realert=cfg.realert)
        self.compactor = Compactor(cfg.lst_cap, cfg.window_t) if cfg.compaction else None
        self.sink = sink if sink is not None else NullSink()
        self.phf = policy.phf_set
        self.chains: list[AttackChain] = []
        self.events_total = 0
        self.processes_pruned = 0
        self.files_dropped = 0
        self._offloaded_ever: set = set()
        self.peak_resident = 0
        self.queue_high_water = 0
        self._tick_ns = int(cfg.offload_tick_secs * NS)
        self._next_tick: Optional[int] = None
        self._wall = 0.0
        self.last_ts: Optional[int] = None
        self.stage_seconds = {"compaction": 0.0, "graph_labels": 0.0, "judgment": 0.0, "maintenance": 0.0}
        if cfg.profile:
            self.process = self._process_profiled  # type: ignore[method-assign]

    def _process_profiled(self, e: EventRecord) -> list[Alert]:
        # same steps as ``process`` with a clock around each stage
        clock = time.perf_counter
        st = self.stage_seconds
        self.events_total += 1
        self.last_ts = e.ts
        t0 = clock()
        comp = self.compactor
        if comp is not None and not comp.decide(e).retained:
            st["compaction"] += clock() - t0
            return []
        t1 = clock()
        changed = self._apply(e)
        t2 = clock()
        alerts = self._judge(e, changed)
        t3 = clock()
        self._maintain(e)
        t4 = clock()
        st["compaction"] += t1 - t0
        st["graph_labels"] += t2 - t1
        st["judgment"] += t3 - t2
        st["maintenance"] += t4 - t3
        return alerts

    def _apply(self, e: EventRecord) -> set:
        store = self.store
        labels = self.labels
        res = store.apply_event(e)
        changed = set()
        for ent in res.created:
            if ent.kind is not EntityKind.NETWORK and labels.apply_init_rules(store.get(ent), e):
                changed.add(ent)
        for ent in res.renamed:
            if labels.apply_init_rules(store.get(ent), e):
                changed.add(ent)
        if res.inherited:
            changed.add(e.object)
        for ent, _ in labels.propagate(e, store):
            changed.add(ent)
        return changed

    def _judge(self, e: EventRecord, changed: set) -> list[Alert]:
        if not changed:
            return []
        alerts: list[Alert] = []
        if self.compactor is not None:
            self.compactor.labels_changed(changed, e.source)
        for ent in changed:
            if ent.kind is EntityKind.PROCESS:
                node = self.store.processes.get(ent)
                if node is not None:
                    alerts.extend(self.judge.evaluate(node, e.ts))
        for a in alerts:
            if a.severity is Severity.APT and self.config.trace_apt:
                self._export_chain(a)
            self.sink.write(a)
        return alerts

    def _maintain(self, e: EventRecord) -> None:
        cfg = self.config
        store = self.store
        if e.etype is EventType.E9_Exit and cfg.pruning:
            r = prune_on_exit(e, store, self.phf)
            if r.pruned:
                self.processes_pruned += 1 + len(r.cascaded)
        if cfg.offload:
            if self._next_tick is None:
                self._next_tick = e.ts + self._tick_ns
            elif e.ts >= self._next_tick:
                self._next_tick = e.ts + self._tick_ns
                r = offload_inactive_files(store, e.ts, cfg.inactive_secs)
                self.files_dropped += r.dropped
                # files evicted for inactivity, whether spilled to disk or discarded as deleted
                self._offloaded_ever.update(r.offloaded_ids)
                self._offloaded_ever.update(r.dropped_ids)
        n = store.resident_count
        if n > self.peak_resident:
            self.peak_resident = n

    # --- per-event ------------------------------------------------------------

    def process(self, e: EventRecord) -> list[Alert]:
        """Handle one event; returns the alerts it raised."""
        self.events_total += 1
        self.last_ts = e.ts
        comp = self.compactor
        if comp is not None and not comp.decide(e).retained:
            return []
        alerts = self._judge(e, self._apply(e))
        self._maintain(e)
        return alerts

    def _export_chain(self, alert: Alert) -> None:
        cfg = self.config
        chain = backward_trace(alert.process, alert.trigger_ts, self.store,
                               max_depth=cfg.max_depth, full=cfg.full_trace)
        self.chains.append(chain)
        if cfg.chain_dir:
            os.makedirs(cfg.chain_dir, exist_ok=True)
            safe = alert.process.key.replace(":", "_").replace("/", "_")
            path = os.path.join(cfg.chain_dir, f"chain-{len(self.chains):03d}-{safe}.json")
            chain.write(path)
            alert.chain_ref = path
        else:
            alert.chain_ref = f"chain:{len(self.chains) - 1}"

    # --- drivers ----------------------------------------------------------------

    def run(self, events: Iterable[EventRecord]) -> RunStats:
        t0 = time.perf_counter()
        for e in events:
            self.process(e)
        self._wall += time.perf_counter() - t0
        return self.stats()

    def run_threaded(self, events: Iterable[EventRecord], queue_cap: int = DEFAULT_QUEUE_CAP,
                     batch: int = 256) -> RunStats:
        """Producer thread feeds a bounded queue; this thread consumes it.

        Records travel in small batches to keep queue overhead low; the
        capacity still bounds the number of queued records.
        """
        batch = max(1, min(batch, queue_cap))
        q: queue.Queue = queue.Queue(maxsize=max(1, queue_cap // batch))
        done = object()
        failure: list = []
        depth = [0]
        lock = threading.Lock()

        def enqueue(buf: list) -> None:
            q.put(buf)
            # counted once actually queued, so a blocked put never exceeds capacity
            with lock:
                depth[0] += len(buf)
                if depth[0] > self.queue_high_water:
                    self.queue_high_water = depth[0]

        def produce() -> None:
            buf = []
            try:
                for e in events:
                    buf.append(e)
                    if len(buf) >= batch:
                        enqueue(buf)
                        buf = []
                if buf:
                    enqueue(buf)
            except BaseException as exc:  # surfaced on the consumer side
                failure.append(exc)
            finally:
                q.put(done)

        t0 = time.perf_counter()
        producer = threading.Thread(target=produce, name="ingest", daemon=True)
        producer.start()
        while True:
            item = q.get()
            if item is done:
                break
            with lock:
                depth[0] -= len(item)
            for e in item:
                self.process(e)
        producer.join()
        self._wall += time.perf_counter() - t0
        if failure:
            raise failure[0]
        return self.stats()

    def stats(self) -> RunStats:
        store = self.store
        comp = self.compactor
        skipped = comp.events_skipped if comp is not None else 0
        by_name = self.judge.by_name()
        offloaded = len(self._offloaded_ever)
        return RunStats(
            events_total=self.events_total,
            events_skipped=skipped,
            skip_ratio=_ratio(skipped, self.events_total),
            processes_total=store.processes_seen,
            processes_pruned=self.processes_pruned,
            process_prune_ratio=_ratio(self.processes_pruned, store.processes_seen),
            files_total=store.files_seen,
            files_offloaded=offloaded,
            file_offload_ratio=_ratio(offloaded, store.files_seen),
            files_dropped=self.files_dropped,
            file_reloads=store.reloads,
            alerts_by_name=dict(sorted(by_name.items())),
            apt_alerts=sum(1 for a in self.judge.alerts if a.severity is Severity.APT),
            throughput_eps=_ratio(self.events_total, self._wall) if self._wall else 0.0,
            peak_resident_entities=self.peak_resident,
            edges_retained=store.edges.retained_total,
            queue_high_water=self.queue_high_water,
            wall_seconds=self._wall,
        )

    @property
    def alerts(self) -> list[Alert]:
        return self.judge.alerts

    def close(self) -> None:
        self.sink.close()
        self.store.close()


def alert_multiset(alerts: Iterable[Alert]) -> dict:
    counts: dict = {}
    for a in alerts:
        k = a.key()
        counts[k] = counts.get(k, 0) + 1
    return counts


def run_events(events: Iterable[EventRecord], config: Optional[EngineConfig] = None) -> Engine:
    engine = Engine(config)
    engine.run(events)
    return engine
