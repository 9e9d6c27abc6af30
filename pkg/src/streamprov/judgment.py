"""Staged alerting over process label sets."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from typing import IO, Optional

from .events import EntityId
from .graph import ProcessNode
from .policy import JudgmentRule, Label, Severity


class SinkUnavailable(OSError):
    pass


@dataclass(eq=False)
class Alert:
    alert_name: str
    severity: Severity
    process: EntityId
    process_name: str
    trigger_ts: int
    matched_labels: frozenset
    labels: frozenset = frozenset()
    chain_ref: Optional[str] = None

    @property
    def dedup_key(self) -> tuple[str, EntityId]:
        return (self.alert_name, self.process)

    def key(self) -> tuple[str, str, int]:
        """Identity used when comparing alert multisets across runs."""
        return (self.alert_name, self.process.key, self.trigger_ts)

    def to_dict(self) -> dict:
        return {
            "ts": self.trigger_ts,
            "alert": self.alert_name,
            "severity": self.severity.value,
            "process": {"id": self.process.key, "name": self.process_name},
            "labels": sorted(l.value for l in self.labels),
            "chain_ref": self.chain_ref,
        }


def evaluate(
    process: ProcessNode,
    rules,
    fired: Optional[set] = None,
    ts: Optional[int] = None,
) -> list[Alert]:
    """Alerts for every rule newly satisfied by the process's labels.

    ``fired`` holds the dedup keys already reported and is updated in place;
    pass ``None`` to disable deduplication.
    """
    labels = process.labels
    out = []
    for rule in rules:
        key = (rule.alert_name, process.id)
        if fired is not None and key in fired:
            continue
        if not rule.condition(labels):
            continue
        if fired is not None:
            fired.add(key)
        current = frozenset(labels)
        out.append(Alert(
            alert_name=rule.alert_name,
            severity=rule.severity,
            process=process.id,
            process_name=process.name,
            trigger_ts=process.last_active_ts if ts is None else ts,
            matched_labels=current & rule.condition.labels,
            labels=current,
        ))
    return out


class AlertSink:
    """JSON-lines alert writer; ``None`` path means standard output."""

    def __init__(self, path: Optional[str] = None, stream: Optional[IO[str]] = None) -> None:
        self._owned = False
        if stream is not None:
            self._fh = stream
        elif path is None or path == "-":
            self._fh = sys.stdout
        else:
            try:
                self._fh = open(path, "w", encoding="utf-8")
            except OSError as exc:
                raise SinkUnavailable(f"cannot open alert sink {path}: {exc}") from exc
            self._owned = True
        self.count = 0

    def write(self, alert: Alert) -> None:
        self._fh.write(json.dumps(alert.to_dict(), separators=(",", ":")) + "\n")
        self.count += 1

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.flush()
        if self._owned:
            self._fh.close()


class NullSink:
    count = 0

    def write(self, alert: Alert) -> None:
        self.count += 1

    def close(self) -> None:
        pass


@dataclass
class JudgmentEngine:
    rules: tuple
    realert: bool = False
    fired: set = field(default_factory=set)
    alerts: list = field(default_factory=list)

    def evaluate(self, process: ProcessNode, ts: Optional[int] = None) -> list[Alert]:
        new = evaluate(process, self.rules, None if self.realert else self.fired, ts)
        self.alerts.extend(new)
        return new

    def by_name(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for a in self.alerts:
            counts[a.alert_name] = counts.get(a.alert_name, 0) + 1
        return counts
