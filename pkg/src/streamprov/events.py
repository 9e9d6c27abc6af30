"""Canonical event and entity vocabulary plus the JSON-lines wire format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional


class EventFormatError(ValueError):
    """Base class for canonical-format decoding errors."""


class MalformedRecord(EventFormatError):
    pass


class UnknownEventType(EventFormatError):
    pass


class KindMismatch(EventFormatError):
    pass


class EntityKind(Enum):
    PROCESS = "P"
    FILE = "F"
    NETWORK = "N"


class EntityId(NamedTuple):
    kind: EntityKind
    key: str

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.key}"

    @classmethod
    def process(cls, key: str) -> "EntityId":
        return cls(EntityKind.PROCESS, key)

    @classmethod
    def file(cls, key: str) -> "EntityId":
        return cls(EntityKind.FILE, key)

    @classmethod
    def network(cls, key: str) -> "EntityId":
        return cls(EntityKind.NETWORK, key)

    @classmethod
    def parse(cls, text: str) -> "EntityId":
        """Inverse of ``str()``: ``"P:101:1"`` -> process ``101:1``."""
        kind, sep, key = text.partition(":")
        if not sep or not key:
            raise ValueError(f"bad entity id {text!r}")
        return cls(EntityKind(kind), key)


class EventType(Enum):
    E0_Read = "E0"
    E1_Write = "E1"
    E2_Fork = "E2"
    E3_Execute = "E3"
    E4_LoadLibrary = "E4"
    E5_Delete = "E5"
    E6_Rename = "E6"
    E7_Create = "E7"
    E8_FileProperty = "E8"
    E9_Exit = "E9"
    E10_LoadElf = "E10"
    E11_Open = "E11"
    E12_Close = "E12"
    E13_ForkSharedFd = "E13"
    E14_OpenCloexec = "E14"
    E15_Mmap = "E15"
    N0_Connect = "N0"
    N1_Send = "N1"
    N2_Recv = "N2"

    @property
    def code(self) -> str:
        return self.value


FORK_TYPES = frozenset({EventType.E2_Fork, EventType.E13_ForkSharedFd})
NETWORK_TYPES = frozenset({EventType.N0_Connect, EventType.N1_Send, EventType.N2_Recv})

# Event types whose information flows from the object into the subject process.
# Everything else flows subject -> object.
INFLOW_TYPES = frozenset({
    EventType.E0_Read,
    EventType.E3_Execute,
    EventType.E4_LoadLibrary,
    EventType.E10_LoadElf,
    EventType.E11_Open,
    EventType.E14_OpenCloexec,
    EventType.E15_Mmap,
    EventType.N2_Recv,
})


@dataclass(frozen=True, slots=True)
class EventRecord:
    """One timestamped system event; an edge of the dependency graph."""

    ts: int
    etype: EventType
    subject: EntityId
    object: EntityId
    subject_name: str
    object_name: str
    args: Optional[str] = None
    seq: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        check_kinds(self.etype, self.subject, self.object)

    @property
    def source(self) -> EntityId:
        """Entity the information flows out of."""
        return self.object if self.etype in INFLOW_TYPES else self.subject

    @property
    def target(self) -> EntityId:
        """Entity the information flows into."""
        return self.subject if self.etype in INFLOW_TYPES else self.object

    def sort_key(self) -> tuple[int, int]:
        return (self.ts, self.seq)


def check_kinds(etype: EventType, subject: EntityId, obj: EntityId) -> None:
    if subject.kind is not EntityKind.PROCESS:
        raise KindMismatch(f"subject of {etype.code} must be a process, got {subject}")
    if etype in FORK_TYPES and obj.kind is not EntityKind.PROCESS:
        raise KindMismatch(f"{etype.code} requires a process object, got {obj}")
    if etype in NETWORK_TYPES:
        if obj.kind is not EntityKind.NETWORK:
            raise KindMismatch(f"{etype.code} requires a network object, got {obj}")
    elif obj.kind is EntityKind.NETWORK:
        raise KindMismatch(f"only N0-N2 may target a network entity, got {etype.code}")


def depends_on(first: EventRecord, second: EventRecord) -> bool:
    """True iff ``second`` causally depends on ``first`` (flow endpoint chaining)."""
    return first.target == second.source and first.ts < second.ts


_KINDS = {k.value: k for k in EntityKind}
_ETYPES = {t.value: t for t in EventType}
_TOP_REQUIRED = {"ts", "etype", "subj", "obj", "obj_name"}
_TOP_ALLOWED = _TOP_REQUIRED | {"args"}
_SUBJ_FIELDS = {"k", "id", "name"}
_OBJ_FIELDS = {"k", "id"}


def _entity(raw, allowed: set[str], where: str) -> EntityId:
    if not isinstance(raw, dict):
        raise MalformedRecord(f"{where} must be an object")
    if set(raw) != allowed:
        raise MalformedRecord(f"{where} fields must be exactly {sorted(allowed)}, got {sorted(raw)}")
    kind = _KINDS.get(raw["k"])
    if kind is None:
        raise MalformedRecord(f"{where}.k must be one of P/F/N, got {raw['k']!r}")
    key = raw["id"]
    if not isinstance(key, str) or not key:
        raise MalformedRecord(f"{where}.id must be a non-empty string")
    return EntityId(kind, key)


def parse_event(line: str, seq: int = 0) -> EventRecord:
    """Decode one canonical JSON line. ``seq`` comes from the caller's counter."""
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise MalformedRecord("record must be a JSON object")
    keys = raw.keys()
    missing = _TOP_REQUIRED - keys
    if missing:
        raise MalformedRecord(f"missing fields: {sorted(missing)}")
    extra = keys - _TOP_ALLOWED
    if extra:
        raise MalformedRecord(f"unknown fields: {sorted(extra)}")

    etype = _ETYPES.get(raw["etype"])
    if etype is None:
        raise UnknownEventType(f"unknown etype {raw['etype']!r}")
    ts = raw["ts"]
    if not isinstance(ts, int) or isinstance(ts, bool) or ts < 0:
        raise MalformedRecord("ts must be a non-negative integer (ns)")

    subj_raw = raw["subj"]
    subject = _entity(subj_raw, _SUBJ_FIELDS, "subj")
    subject_name = subj_raw["name"]
    obj = _entity(raw["obj"], _OBJ_FIELDS, "obj")
    obj_name = raw["obj_name"]
    args = raw.get("args")
    if not isinstance(subject_name, str) or not isinstance(obj_name, str):
        raise MalformedRecord("names must be strings")
    if args is not None and not isinstance(args, str):
        raise MalformedRecord("args must be a string")
    return EventRecord(ts, etype, subject, obj, subject_name, obj_name, args, seq)


def event_to_dict(e: EventRecord) -> dict:
    out = {
        "ts": e.ts,
        "etype": e.etype.value,
        "subj": {"k": e.subject.kind.value, "id": e.subject.key, "name": e.subject_name},
        "obj": {"k": e.object.kind.value, "id": e.object.key},
        "obj_name": e.object_name,
    }
    if e.args is not None:
        out["args"] = e.args
    return out


def serialize_event(e: EventRecord) -> str:
    """Encode as one canonical line (no trailing newline)."""
    return json.dumps(event_to_dict(e), separators=(",", ":"), ensure_ascii=False)


class ProcessKeyAllocator:
    """Maps raw pids to ``pid:generation`` keys, bumping the generation on reuse.

    Reuse is detected when a fork produces a pid that has been seen before.
    """

    def __init__(self) -> None:
        self._generation: dict[int, int] = {}

    def current(self, pid: int) -> str:
        gen = self._generation.setdefault(pid, 1)
        return f"{pid}:{gen}"

    def fork(self, pid: int) -> str:
        if pid in self._generation:
            self._generation[pid] += 1
        else:
            self._generation[pid] = 1
        return f"{pid}:{self._generation[pid]}"
