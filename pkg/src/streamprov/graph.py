"""Live dependency graph: process tree, file/network tables, labels and edges."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, NamedTuple, Optional, Union

from .events import (
    FORK_TYPES,
    EntityId,
    EntityKind,
    EventRecord,
    EventType,
    parse_event,
    serialize_event,
)
from .policy import STATUS_LABELS, Label


class UnknownEntity(KeyError):
    pass


class OffloadStoreFull(RuntimeError):
    pass


VIRTUAL_ROOT = EntityId.process("virtual-root")


class LabelMark(NamedTuple):
    """When a label was first set and the event that caused it."""

    first_set_ts: int
    cause: Optional[EventRecord]


@dataclass(slots=True, eq=False)
class ProcessNode:
    id: EntityId
    name: str
    parent: Optional[EntityId] = None
    children: set = field(default_factory=set)
    labels: dict = field(default_factory=dict)
    exited: bool = False
    created_ts: int = 0
    last_active_ts: int = 0

    @property
    def status_labels(self) -> set[Label]:
        return {l for l in self.labels if l.is_status}

    @property
    def behavior_labels(self) -> set[Label]:
        return {l for l in self.labels if l.is_behavior}


@dataclass(slots=True, eq=False)
class FileNode:
    id: EntityId
    path: str
    labels: dict = field(default_factory=dict)
    last_active_ts: int = 0
    offloaded: bool = False
    deleted: bool = False

    @property
    def untrusted_labels(self) -> set[Label]:
        return {l for l in self.labels if l.is_untrusted}

    @property
    def high_value_labels(self) -> set[Label]:
        return {l for l in self.labels if l.is_high_value}


@dataclass(slots=True, eq=False)
class NetworkNode:
    id: EntityId
    endpoint: str
    refresh_counter: int = 0
    last_active_ts: int = 0


Node = Union[ProcessNode, FileNode, NetworkNode]


class Direction(Enum):
    IN = "in"
    OUT = "out"


class EdgeLog:
    """Retained events indexed by flow source (out) and flow target (in).

    Each entity's adjacency is an insertion-ordered dict ``edge_id -> event``;
    the stream is time ordered so iteration order is ts order.
    """

    def __init__(self) -> None:
        self.out_edges: dict[EntityId, dict[int, EventRecord]] = {}
        self.in_edges: dict[EntityId, dict[int, EventRecord]] = {}
        self.retained_total = 0
        self._next_id = 0

    def append(self, e: EventRecord, target: Optional[EntityId] = None) -> int:
        eid = self._next_id
        self._next_id += 1
        self.retained_total += 1
        self.out_edges.setdefault(e.source, {})[eid] = e
        self.in_edges.setdefault(target if target is not None else e.target, {})[eid] = e
        return eid

    def __len__(self) -> int:
        return sum(len(v) for v in self.out_edges.values())

    def edges(self, entity: EntityId, direction: Direction) -> dict[int, EventRecord]:
        table = self.in_edges if direction is Direction.IN else self.out_edges
        return table.get(entity, {})

    def drop_entity(self, entity: EntityId, resolve=None) -> None:
        """Forget every edge incident to ``entity`` on both endpoints.

        ``resolve`` maps a recorded endpoint to its current id (file renames).
        """
        for eid, e in self.out_edges.pop(entity, {}).items():
            dst = e.target if resolve is None else resolve(e.target)
            other = self.in_edges.get(dst)
            if other is not None:
                other.pop(eid, None)
        for eid, e in self.in_edges.pop(entity, {}).items():
            src = e.source if resolve is None else resolve(e.source)
            other = self.out_edges.get(src)
            if other is not None:
                other.pop(eid, None)

    def detach(self, entity: EntityId) -> tuple[dict, dict]:
        """Remove ``entity``'s own adjacency (for offload); peers keep theirs."""
        return self.in_edges.pop(entity, {}), self.out_edges.pop(entity, {})

    def attach(self, entity: EntityId, in_edges: dict, out_edges: dict) -> None:
        if in_edges:
            self.in_edges[entity] = in_edges
        if out_edges:
            self.out_edges[entity] = out_edges

    def rekey(self, old: EntityId, new: EntityId) -> None:
        for table in (self.in_edges, self.out_edges):
            moved = table.pop(old, None)
            if moved:
                table.setdefault(new, {}).update(moved)


class OffloadStore:
    """Append-only on-disk file table keyed by file id, with an in-memory index."""

    def __init__(self, path: Optional[str] = None, max_bytes: Optional[int] = None) -> None:
        self._owned = path is None
        if path is None:
            fd, path = tempfile.mkstemp(prefix="streamprov-offload-", suffix=".jsonl")
            os.close(fd)
        self.path = path
        self.max_bytes = max_bytes
        self._fh = open(path, "w+b")
        self._index: dict[EntityId, tuple[int, int]] = {}
        self.bytes_written = 0

    def __contains__(self, entity: EntityId) -> bool:
        return entity in self._index

    def __len__(self) -> int:
        return len(self._index)

    def put(self, entity: EntityId, record: dict) -> None:
        blob = (json.dumps(record, separators=(",", ":")) + "\n").encode()
        if self.max_bytes is not None and self.bytes_written + len(blob) > self.max_bytes:
            raise OffloadStoreFull(f"offload store would exceed {self.max_bytes} bytes")
        self._fh.seek(0, os.SEEK_END)
        offset = self._fh.tell()
        self._fh.write(blob)
        self.bytes_written += len(blob)
        self._index[entity] = (offset, len(blob))

    def take(self, entity: EntityId) -> dict:
        offset, length = self._index.pop(entity)
        self._fh.flush()
        self._fh.seek(offset)
        return json.loads(self._fh.read(length))

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()
        if self._owned and os.path.exists(self.path):
            os.unlink(self.path)


def _dump_marks(labels: dict) -> list:
    return [
        [label.value, mark.first_set_ts, None if mark.cause is None else [serialize_event(mark.cause), mark.cause.seq]]
        for label, mark in labels.items()
    ]


def _load_marks(raw: list) -> dict:
    out = {}
    for code, ts, cause in raw:
        event = None if cause is None else parse_event(cause[0], cause[1])
        out[Label(code)] = LabelMark(ts, event)
    return out


def _dump_edges(edges: dict) -> list:
    return [[eid, serialize_event(e), e.seq] for eid, e in edges.items()]


def _load_edges(raw: list) -> dict:
    return {eid: parse_event(line, seq) for eid, line, seq in raw}


class ApplyResult(NamedTuple):
    created: list
    # entities whose name/path changed and need init rules re-applied
    renamed: list
    # labels the forked child inherited: list of Label
    inherited: list


def fork_inherit(parent: ProcessNode, child: ProcessNode, cause: Optional[EventRecord] = None) -> list[Label]:
    """Copy the parent's status labels onto the child; behavior labels stay put."""
    added = []
    ts = cause.ts if cause is not None else child.created_ts
    for label in parent.labels:
        if label in STATUS_LABELS and label not in child.labels:
            child.labels[label] = LabelMark(ts, cause)
            added.append(label)
    return added


class GraphStore:
    """Single-writer store for the provenance graph."""

    def __init__(self, offload: Optional[OffloadStore] = None) -> None:
        self.processes: dict[EntityId, ProcessNode] = {}
        self.files: dict[EntityId, FileNode] = {}
        self.networks: dict[EntityId, NetworkNode] = {}
        self.edges = EdgeLog()
        self.offload = offload if offload is not None else OffloadStore()
        self.aliases: dict[EntityId, EntityId] = {}
        self.root = ProcessNode(VIRTUAL_ROOT, "<virtual-root>")
        self.processes[VIRTUAL_ROOT] = self.root
        self.processes_seen = 0
        self.files_seen = 0
        self.reloads = 0

    # --- lookup -------------------------------------------------------------

    @property
    def resident_count(self) -> int:
        return len(self.processes) - 1 + len(self.files) + len(self.networks)

    def resolve(self, entity: EntityId) -> EntityId:
        seen = 0
        while entity in self.aliases and seen < 64:
            entity = self.aliases[entity]
            seen += 1
        return entity

    def knows(self, entity: EntityId) -> bool:
        entity = self.resolve(entity)
        return (
            entity in self.processes
            or entity in self.files
            or entity in self.networks
            or entity in self.offload
        )

    def get(self, entity: EntityId) -> Node:
        """Resident node for ``entity``, reloading an offloaded file if needed."""
        entity = self.resolve(entity)
        kind = entity.kind
        if kind is EntityKind.PROCESS:
            node = self.processes.get(entity)
        elif kind is EntityKind.FILE:
            node = self.files.get(entity)
            if node is None and entity in self.offload:
                node = self.reload_file(entity)
        else:
            node = self.networks.get(entity)
        if node is None:
            raise UnknownEntity(entity)
        return node

    def labels_of(self, entity: EntityId) -> dict:
        node = self.get(entity)
        return getattr(node, "labels", {})

    def neighbors(
        self,
        entity: EntityId,
        direction: Direction,
        before: Optional[int] = None,
        after: Optional[int] = None,
    ) -> list[tuple[EventRecord, EntityId]]:
        """Edges incident to ``entity`` in ts order, with the peer entity.

        ``before``/``after`` are strict time bounds.
        """
        entity = self.resolve(entity)
        if not self.knows(entity):
            raise UnknownEntity(entity)
        if entity.kind is EntityKind.FILE:
            self.get(entity)  # reload if offloaded
        out = []
        for e in self.edges.edges(entity, direction).values():
            if before is not None and e.ts >= before:
                continue
            if after is not None and e.ts <= after:
                continue
            peer = e.source if direction is Direction.IN else e.target
            out.append((e, self.resolve(peer)))
        return out

    def iter_nodes(self) -> Iterator[Node]:
        yield from (p for k, p in self.processes.items() if k != VIRTUAL_ROOT)
        yield from self.files.values()
        yield from self.networks.values()

    # --- mutation -------------------------------------------------------------

    def _ensure_process(self, pid: EntityId, name: str, ts: int, created: list) -> ProcessNode:
        node = self.processes.get(pid)
        if node is None:
            node = ProcessNode(pid, name, parent=VIRTUAL_ROOT, created_ts=ts, last_active_ts=ts)
            self.processes[pid] = node
            self.root.children.add(pid)
            self.processes_seen += 1
            created.append(pid)
        return node

    def _ensure_file(self, fid: EntityId, path: str, ts: int, created: list) -> FileNode:
        node = self.files.get(fid)
        if node is None:
            if fid in self.offload:
                return self.reload_file(fid)
            # a path reused after a rename is a new file, not the renamed one
            self.aliases.pop(fid, None)
            node = FileNode(fid, path or fid.key, last_active_ts=ts)
            self.files[fid] = node
            self.files_seen += 1
            created.append(fid)
        return node

    def _ensure_network(self, nid: EntityId, ts: int, created: list) -> NetworkNode:
        node = self.networks.get(nid)
        if node is None:
            node = NetworkNode(nid, nid.key, last_active_ts=ts)
            self.networks[nid] = node
            created.append(nid)
        return node

    def _link(self, parent: ProcessNode, child: ProcessNode) -> None:
        if child.parent is not None and child.parent in self.processes:
            self.processes[child.parent].children.discard(child.id)
        child.parent = parent.id
        parent.children.add(child.id)

    def apply_event(self, e: EventRecord) -> ApplyResult:
        """Materialize a retained event into the graph."""
        created: list = []
        renamed: list = []
        inherited: list = []
        edge_target = None
        ts = e.ts
        etype = e.etype
        subj = self._ensure_process(e.subject, e.subject_name, ts, created)
        subj.last_active_ts = ts
        if subj.name != e.subject_name and e.subject_name and e.subject not in created:
            subj.name = e.subject_name
            renamed.append(e.subject)

        obj_kind = e.object.kind
        if etype in FORK_TYPES:
            child = self._ensure_process(e.object, e.object_name, ts, created)
            child.last_active_ts = ts
            if child.parent != subj.id:
                self._link(subj, child)
            inherited = fork_inherit(subj, child, e)
        elif obj_kind is EntityKind.FILE:
            fnode = self._ensure_file(e.object, e.object_name, ts, created)
            fnode.last_active_ts = ts
            if etype is EventType.E5_Delete:
                fnode.deleted = True
            elif etype is EventType.E6_Rename and e.args:
                new_id = EntityId.file(e.args)
                if new_id != fnode.id:
                    self._rename_file(fnode, new_id)
                    renamed.append(new_id)
                    edge_target = new_id
            elif etype is EventType.E3_Execute:
                if subj.name != fnode.path:
                    subj.name = fnode.path
                    if e.subject not in renamed:
                        renamed.append(e.subject)
            elif etype is EventType.E7_Create:
                fnode.deleted = False
        elif obj_kind is EntityKind.NETWORK:
            self._ensure_network(e.object, ts, created).last_active_ts = ts
        elif e.object != e.subject:
            self._ensure_process(e.object, e.object_name, ts, created).last_active_ts = ts

        if etype is EventType.E9_Exit:
            subj.exited = True
        self.edges.append(e, edge_target)
        return ApplyResult(created, renamed, inherited)

    def _rename_file(self, node: FileNode, new_id: EntityId) -> None:
        old = node.id
        del self.files[old]
        existing = self.files.pop(new_id, None)
        if existing is None and new_id in self.offload:
            existing = self.reload_file(new_id)
            self.files.pop(new_id, None)
        if existing is not None:
            # rename over an existing path: the old target's labels are kept
            for label, mark in existing.labels.items():
                node.labels.setdefault(label, mark)
        node.id = new_id
        node.path = new_id.key
        self.files[new_id] = node
        self.aliases[old] = new_id
        self.aliases.pop(new_id, None)
        self.edges.rekey(old, new_id)

    # --- removal ----------------------------------------------------------------

    def remove_process(self, pid: EntityId) -> None:
        node = self.processes.pop(pid)
        if node.parent is not None and node.parent in self.processes:
            self.processes[node.parent].children.discard(pid)
        for child in node.children:
            cnode = self.processes.get(child)
            if cnode is not None:
                cnode.parent = VIRTUAL_ROOT
                self.root.children.add(child)
        self.edges.drop_entity(pid, self.resolve)

    def drop_file(self, fid: EntityId) -> None:
        self.files.pop(fid)
        self.edges.drop_entity(fid, self.resolve)

    def offload_file(self, fid: EntityId) -> None:
        node = self.files[fid]
        in_edges, out_edges = self.edges.detach(fid)
        record = {
            "path": node.path,
            "labels": _dump_marks(node.labels),
            "last_active_ts": node.last_active_ts,
            "deleted": node.deleted,
            "in": _dump_edges(in_edges),
            "out": _dump_edges(out_edges),
        }
        self.offload.put(fid, record)
        del self.files[fid]

    def reload_file(self, fid: EntityId) -> FileNode:
        record = self.offload.take(fid)
        node = FileNode(
            fid,
            record["path"],
            labels=_load_marks(record["labels"]),
            last_active_ts=record["last_active_ts"],
            deleted=record["deleted"],
        )
        self.files[fid] = node
        self.edges.attach(fid, _load_edges(record["in"]), _load_edges(record["out"]))
        self.reloads += 1
        return node

    # --- checks -------------------------------------------------------------------

    def check_tree(self) -> list[str]:
        """Return a list of tree-integrity violations (empty when consistent)."""
        problems = []
        for pid, node in self.processes.items():
            if pid == VIRTUAL_ROOT:
                continue
            if node.parent is None or node.parent not in self.processes:
                problems.append(f"{pid}: dangling parent {node.parent}")
            elif pid not in self.processes[node.parent].children:
                problems.append(f"{pid}: missing from parent's children")
            for c in node.children:
                if c not in self.processes:
                    problems.append(f"{pid}: dangling child {c}")
                elif self.processes[c].parent != pid:
                    problems.append(f"{pid}: child {c} points elsewhere")
        reach = set()
        stack = [VIRTUAL_ROOT]
        while stack:
            pid = stack.pop()
            if pid in reach:
                continue
            reach.add(pid)
            stack.extend(self.processes[pid].children)
        for pid in self.processes:
            if pid not in reach:
                problems.append(f"{pid}: unreachable from virtual root")
        return problems

    def close(self) -> None:
        self.offload.close()

    # --- export ---------------------------------------------------------------------

    def to_json(self) -> dict:
        def labels(node) -> list:
            return sorted(l.value for l in getattr(node, "labels", {}))

        nodes = []
        for node in self.iter_nodes():
            item = {"id": str(node.id), "kind": node.id.kind.name.lower(), "labels": labels(node)}
            if isinstance(node, ProcessNode):
                item.update(name=node.name, parent=str(node.parent), exited=node.exited)
            elif isinstance(node, FileNode):
                item.update(path=node.path, deleted=node.deleted)
            nodes.append(item)
        edges = []
        for table in self.edges.out_edges.values():
            for e in table.values():
                edges.append({"ts": e.ts, "etype": e.etype.value, "src": str(e.source), "dst": str(e.target)})
        edges.sort(key=lambda x: x["ts"])
        return {"nodes": nodes, "edges": edges, "offloaded": len(self.offload)}

    def to_dot(self) -> str:
        lines = ["digraph provenance {"]
        shapes = {EntityKind.PROCESS: "ellipse", EntityKind.FILE: "box", EntityKind.NETWORK: "diamond"}
        for node in self.iter_nodes():
            tag = ",".join(sorted(l.value for l in getattr(node, "labels", {})))
            text = node.id.key + (f"\\n[{tag}]" if tag else "")
            lines.append(f'  "{node.id}" [shape={shapes[node.id.kind]}, label="{_dot_escape(text)}"];')
        for table in self.edges.out_edges.values():
            for e in table.values():
                lines.append(f'  "{e.source}" -> "{e.target}" [label="{e.etype.value}@{e.ts}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _dot_escape(text: str) -> str:
    return text.replace('"', '\\"')
