"""Online log compaction.

Redundant-semantics skipping works on the information-flow orientation of
each event: the table is keyed by the entity the information flows *out of*
and remembers the (event type, flow target) of its latest retained event.
A repeat of that signature carries no new semantics and is skipped until
something changes the semantics of either endpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Optional

from .events import EntityId, EntityKind, EventRecord, EventType
from .graph import VIRTUAL_ROOT, GraphStore, ProcessNode, UnknownEntity
from .policy import DEFAULT_PHF, Label

DEFAULT_LST_CAP = 5
DEFAULT_WINDOW_T = 50
DEFAULT_INACTIVE_SECS = 300
NS = 1_000_000_000

_INVALIDATING = frozenset({EventType.E1_Write, EventType.N2_Recv})


class Action(Enum):
    RETAIN = "Retain"
    SKIP = "Skip"


class Reason(Enum):
    NEW_SUBJECT = "NewSubject"
    SEMANTICS_CHANGED = "SemanticsChanged"
    REDUNDANT_SEMANTICS = "RedundantSemantics"
    WINDOW_REFRESH = "WindowRefresh"
    TABLE_FLUSHED = "TableFlushed"
    WRITE_INVALIDATION = "WriteInvalidation"


class CompactionDecision(NamedTuple):
    action: Action
    reason: Reason

    @property
    def retained(self) -> bool:
        return self.action is Action.RETAIN


SKIP = CompactionDecision(Action.SKIP, Reason.REDUNDANT_SEMANTICS)

Signature = tuple  # (EventType, EntityId)


@dataclass
class LatestSemanticTable:
    capacity_threshold: int = DEFAULT_LST_CAP
    entries: dict = field(default_factory=dict)
    flushes: int = 0
    # keys removed by invalidation since the last flush (diagnostics only)
    _invalidated: set = field(default_factory=set, repr=False)

    def __post_init__(self) -> None:
        if self.capacity_threshold < 1:
            raise ValueError("capacity_threshold must be >= 1")

    @property
    def size(self) -> int:
        return len(self.entries)

    def flush(self) -> None:
        self.entries.clear()
        self._invalidated.clear()
        self.flushes += 1

    def drop_references(self, target: EntityId, keep: Optional[EntityId] = None) -> None:
        """Delete entries whose stored signature points at ``target``."""
        stale = [k for k, sig in self.entries.items() if sig[1] == target and k != keep]
        for k in stale:
            del self.entries[k]
            self._note_invalidated(k)

    def invalidate(self, entity: EntityId, keep: Optional[EntityId] = None) -> None:
        """``entity``'s semantics changed: forget it as a key and as a target."""
        if entity != keep and self.entries.pop(entity, None) is not None:
            self._note_invalidated(entity)
        self.drop_references(entity, keep)

    def _note_invalidated(self, key: EntityId) -> None:
        if len(self._invalidated) > 8 * self.capacity_threshold:
            self._invalidated.clear()
        self._invalidated.add(key)


@dataclass
class NetworkRefreshWindow:
    window_T: int = DEFAULT_WINDOW_T
    counters: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.window_T < 1:
            raise ValueError("window_T must be >= 1")

    def tick(self, network: EntityId) -> bool:
        """Count one receive interval; True when the window forces retention."""
        c = self.counters.get(network, 0) + 1
        if c >= self.window_T:
            self.counters[network] = 0
            return True
        self.counters[network] = c
        return False

    def reset(self, network: EntityId) -> None:
        self.counters[network] = 0


def skip_or_retain(e: EventRecord, lst: LatestSemanticTable, win: NetworkRefreshWindow) -> CompactionDecision:
    src = e.source
    dst = e.target
    etype = e.etype
    sig = (etype, dst)
    entries = lst.entries

    refresh = False
    if etype is EventType.N2_Recv:
        refresh = win.tick(src)

    stored = entries.get(src)
    if stored is None:
        if src in lst._invalidated:
            lst._invalidated.discard(src)
            reason = Reason.WRITE_INVALIDATION
        else:
            reason = Reason.NEW_SUBJECT
        entries[src] = sig
    elif stored == sig and not refresh:
        return SKIP
    else:
        reason = Reason.WINDOW_REFRESH if stored == sig else Reason.SEMANTICS_CHANGED
        entries[src] = sig
    if refresh:
        reason = Reason.WINDOW_REFRESH
    elif etype is EventType.N2_Recv:
        win.reset(src)

    # the flow target's own semantics just changed
    if dst != src and dst in entries:
        del entries[dst]

    if len(entries) >= lst.capacity_threshold:
        lst.flush()
        return CompactionDecision(Action.RETAIN, Reason.TABLE_FLUSHED)

    if etype in _INVALIDATING:
        lst.drop_references(dst, keep=src)
    return CompactionDecision(Action.RETAIN, reason)


class Compactor:
    """Stateful wrapper used by the pipeline."""

    def __init__(self, lst_cap: int = DEFAULT_LST_CAP, window_T: int = DEFAULT_WINDOW_T) -> None:
        self.lst = LatestSemanticTable(lst_cap)
        self.window = NetworkRefreshWindow(window_T)
        self.events_total = 0
        self.events_skipped = 0

    def decide(self, e: EventRecord) -> CompactionDecision:
        self.events_total += 1
        d = skip_or_retain(e, self.lst, self.window)
        if d.action is Action.SKIP:
            self.events_skipped += 1
        return d

    def labels_changed(self, entities: Iterable[EntityId], current_source: EntityId) -> None:
        for ent in entities:
            self.lst.invalidate(ent, keep=current_source)


# --- non-viable entity pruning ------------------------------------------------

def is_prunable(node: ProcessNode, phf: frozenset) -> bool:
    return node.exited and not node.children and not any(l in phf for l in node.labels)


@dataclass
class PruneResult:
    pruned: bool
    cascaded: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.pruned


def prune_on_exit(e: EventRecord, store: GraphStore, phf: frozenset = DEFAULT_PHF) -> PruneResult:
    """Prune the exiting process if it is a leaf without PHF labels.

    Exited ancestors that become prunable leaves are swept upward as well.
    """
    if e.etype is not EventType.E9_Exit:
        raise ValueError("prune_on_exit expects an exit event")
    node = store.processes.get(e.subject)
    if node is None:
        raise UnknownEntity(e.subject)
    node.exited = True
    if not is_prunable(node, phf):
        return PruneResult(False)
    result = PruneResult(True)
    parent_id = node.parent
    store.remove_process(node.id)
    while parent_id is not None and parent_id != VIRTUAL_ROOT:
        parent = store.processes.get(parent_id)
        if parent is None or not is_prunable(parent, phf):
            break
        parent_id = parent.parent
        store.remove_process(parent.id)
        result.cascaded.append(parent.id)
    return result


# --- inactive file offload ------------------------------------------------------

@dataclass
class OffloadResult:
    offloaded: int = 0
    dropped: int = 0
    offloaded_ids: list = field(default_factory=list)
    dropped_ids: list = field(default_factory=list)


def offload_inactive_files(
    store: GraphStore,
    now: int,
    inactive_secs: float = DEFAULT_INACTIVE_SECS,
) -> OffloadResult:
    """Move files idle for longer than ``inactive_secs`` (event time) to disk.

    Deleted files without labels are dropped outright instead.
    """
    cutoff = now - int(inactive_secs * NS)
    result = OffloadResult()
    stale = [f for f in store.files.values() if f.last_active_ts < cutoff]
    for node in stale:
        if node.deleted and not node.labels:
            store.drop_file(node.id)
            result.dropped += 1
            result.dropped_ids.append(node.id)
        else:
            store.offload_file(node.id)
            result.offloaded += 1
            result.offloaded_ids.append(node.id)
    return result
