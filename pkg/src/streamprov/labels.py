"""Label assignment and propagation over retained events."""

from __future__ import annotations

from collections import defaultdict
from typing import Optional

from .events import EntityKind, EventRecord, EventType
from .graph import FileNode, GraphStore, LabelMark, ProcessNode
from .policy import Direction, Label, Policy, load_policy


class LabelEngine:
    def __init__(self, policy: Optional[Policy] = None) -> None:
        self.policy = policy if policy is not None else load_policy()
        self._init = {
            EntityKind.PROCESS: [r for r in self.policy.init_rules if r.target_kind is EntityKind.PROCESS],
            EntityKind.FILE: [r for r in self.policy.init_rules if r.target_kind is EntityKind.FILE],
        }
        self._transfer: dict[EventType, list] = defaultdict(list)
        for rule in self.policy.transfer_rules:
            for et in rule.events:
                self._transfer[et].append(rule)
        self._derived: dict[EventType, list] = defaultdict(list)
        for rule in self.policy.derived_rules:
            for et in rule.events:
                self._derived[et].append(rule)
        self._active = frozenset(self._transfer) | frozenset(self._derived)

    def apply_init_rules(self, node, cause: Optional[EventRecord] = None) -> list[Label]:
        """Set every init-rule label whose pattern matches the node's name or path."""
        if isinstance(node, ProcessNode):
            rules, name = self._init[EntityKind.PROCESS], node.name
        elif isinstance(node, FileNode):
            rules, name = self._init[EntityKind.FILE], node.path
        else:
            return []
        ts = cause.ts if cause is not None else node.last_active_ts
        added = []
        for rule in rules:
            if rule.label not in node.labels and rule.matches(name):
                node.labels[rule.label] = LabelMark(ts, cause)
                added.append(rule.label)
        return added

    def propagate(self, e: EventRecord, store: GraphStore) -> list[tuple]:
        """Apply transfer and derived rules for ``e`` until nothing changes.

        Returns the ``(entity, label)`` pairs added.
        """
        etype = e.etype
        if etype not in self._active:
            return []
        subj = store.get(e.subject)
        obj = store.get(e.object) if e.object.kind is EntityKind.FILE else None
        transfer = self._transfer.get(etype, ()) if obj is not None else ()
        derived = self._derived.get(etype, ())
        slabels = subj.labels
        added = []

        changed = True
        while changed:
            changed = False
            for rule in transfer:
                olabels = obj.labels
                if rule.direction is Direction.D:
                    co = rule.co_label
                    if co not in olabels and any(l in slabels for l in rule.source_labels):
                        olabels[co] = LabelMark(e.ts, e)
                        added.append((obj.id, co))
                        changed = True
                else:
                    src = rule.source_label
                    if src not in slabels and rule.co_label in olabels:
                        slabels[src] = LabelMark(e.ts, e)
                        added.append((subj.id, src))
                        changed = True
            for rule in derived:
                label = rule.label
                if label in slabels or not self._derived_holds(rule, e, slabels, obj):
                    continue
                slabels[label] = LabelMark(e.ts, e)
                added.append((subj.id, label))
                changed = True
        return added

    @staticmethod
    def _derived_holds(rule, e: EventRecord, slabels: dict, obj) -> bool:
        if rule.subject_any:
            return any(l in slabels for l in rule.subject_any)
        if rule.object_any:
            return obj is not None and any(l in obj.labels for l in rule.object_any)
        if rule.object_pattern is not None:
            return rule.object_pattern.fullmatch(e.object_name or e.object.key) is not None
        if rule.args_pattern is not None:
            return e.args is not None and rule.args_pattern.search(e.args) is not None
        return True
