"""Backward and forward causality tracing over the retained edge log."""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .events import EntityId, EntityKind, EventRecord
from .graph import Direction, GraphStore, UnknownEntity
from .policy import Label

DEFAULT_MAX_DEPTH = 25

# file labels that only init rules assign; a file carrying one is an entry point
DEFAULT_ENTRY_LABELS = frozenset({Label.FU1, Label.FU3, Label.FH1, Label.FH2, Label.FH3, Label.FH4})


@dataclass
class AttackChain:
    origin: EntityId
    direction: str
    at: int
    entry_points: list = field(default_factory=list)
    nodes: set = field(default_factory=set)
    edges: list = field(default_factory=list)
    stage_annotations: dict = field(default_factory=dict)
    # time bound each node was expanded with (backward: edges < bound; forward: edges > bound)
    visit_bounds: dict = field(default_factory=dict)

    def entity_keys(self) -> set[str]:
        return {n.key for n in self.nodes}

    def to_dict(self) -> dict:
        return {
            "origin": str(self.origin),
            "direction": self.direction,
            "at": self.at,
            "entry_points": [str(e) for e in self.entry_points],
            "nodes": sorted(str(n) for n in self.nodes),
            "edges": [
                {"ts": e.ts, "etype": e.etype.value, "src": str(e.source), "dst": str(e.target), "seq": e.seq}
                for e in self.edges
            ],
            "stages": {str(k): sorted(l.value for l in v) for k, v in sorted(self.stage_annotations.items(), key=lambda kv: str(kv[0]))},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_dot(self) -> str:
        shapes = {EntityKind.PROCESS: "ellipse", EntityKind.FILE: "box", EntityKind.NETWORK: "diamond"}
        lines = [f'digraph "{self.direction}_{self.origin.key}" {{', "  rankdir=LR;"]
        for n in sorted(self.nodes, key=str):
            tags = ",".join(sorted(l.value for l in self.stage_annotations.get(n, ())))
            label = n.key + (f"\\n[{tags}]" if tags else "")
            style = ", style=bold" if n == self.origin else ""
            lines.append(f'  "{n}" [shape={shapes[n.kind]}, label="{label}"{style}];')
        for e in self.edges:
            lines.append(f'  "{e.source}" -> "{e.target}" [label="{e.etype.value}@{e.ts}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def write(self, path: str) -> None:
        text = self.to_dot() if path.endswith(".dot") else self.to_json()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _labeled(store: GraphStore, entity: EntityId) -> bool:
    if entity.kind is EntityKind.NETWORK:
        return False
    try:
        return bool(store.labels_of(entity))
    except UnknownEntity:
        return False


def _is_entry(store: GraphStore, entity: EntityId, entry_labels: frozenset) -> bool:
    if entity.kind is EntityKind.NETWORK:
        return True
    if entity.kind is EntityKind.FILE:
        labels = store.labels_of(entity)
        return any(l in labels for l in entry_labels)
    return False


def _trace(
    origin: EntityId,
    at: int,
    store: GraphStore,
    backward: bool,
    max_depth: int,
    full: bool,
    stop_at_entries: bool,
    entry_labels: frozenset,
) -> AttackChain:
    origin = store.resolve(origin)
    if not store.knows(origin):
        raise UnknownEntity(origin)
    chain = AttackChain(origin, "backward" if backward else "forward", at)
    chain.nodes.add(origin)
    counter = itertools.count()
    # backward: an entity may use in-edges strictly before its bound, so the
    # origin's bound is at + 1 and the largest bound is expanded first.
    # forward: out-edges strictly after the bound; smallest first.
    start = at + 1 if backward else at - 1
    best = {origin: start}
    heap = [((-start if backward else start), 0, next(counter), origin)]
    visited: set = set()
    edges: list = []
    direction = Direction.IN if backward else Direction.OUT

    while heap:
        _, depth, _, ent = heapq.heappop(heap)
        if ent in visited:
            continue
        visited.add(ent)
        bound = best[ent]
        chain.visit_bounds[ent] = bound
        if ent != origin and backward and _is_entry(store, ent, entry_labels):
            chain.entry_points.append(ent)
            if stop_at_entries:
                continue
        if depth >= max_depth:
            continue
        if backward:
            hits = store.neighbors(ent, direction, before=bound)
        else:
            hits = store.neighbors(ent, direction, after=bound)
        ent_labeled = full or _labeled(store, ent)
        for e, peer in hits:
            if peer == ent:
                continue
            # a peer pruned while this file sat offloaded leaves a dangling edge
            if not store.knows(peer):
                continue
            if not ent_labeled and not _labeled(store, peer):
                continue
            edges.append(e)
            chain.nodes.add(peer)
            if peer in visited:
                continue
            prev = best.get(peer)
            if prev is None or (e.ts > prev if backward else e.ts < prev):
                best[peer] = e.ts
                heapq.heappush(heap, ((-e.ts if backward else e.ts), depth + 1, next(counter), peer))

    edges.sort(key=lambda e: (e.ts, e.seq))
    chain.edges = edges
    if not backward:
        chain.entry_points = [origin]
    for n in chain.nodes:
        try:
            labels = store.labels_of(n)
        except UnknownEntity:
            continue
        if labels:
            chain.stage_annotations[n] = set(labels)
    return chain


def backward_trace(
    origin: EntityId,
    at: int,
    store: GraphStore,
    max_depth: int = DEFAULT_MAX_DEPTH,
    full: bool = False,
    stop_at_entries: bool = True,
    entry_labels: frozenset = DEFAULT_ENTRY_LABELS,
) -> AttackChain:
    """Entities and events that could have influenced ``origin`` by time ``at``.

    Each entity is expanded once, with the latest time bound any path gives it.
    Unless ``full`` is set, an edge is followed only when one endpoint is labeled.
    """
    return _trace(origin, at, store, True, max_depth, full, stop_at_entries, entry_labels)


def forward_trace(
    origin: EntityId,
    start: int,
    store: GraphStore,
    max_depth: int = DEFAULT_MAX_DEPTH,
    full: bool = False,
    entry_labels: frozenset = DEFAULT_ENTRY_LABELS,
) -> AttackChain:
    """Entities and events ``origin`` could have influenced from time ``start`` on."""
    return _trace(origin, start, store, False, max_depth, full, False, entry_labels)


def chain_union(chains: Iterable[AttackChain]) -> tuple[set, set]:
    """Union of node sets and edge seqs across chains."""
    nodes: set = set()
    seqs: set = set()
    for c in chains:
        nodes |= c.nodes
        seqs |= {e.seq for e in c.edges}
    return nodes, seqs
