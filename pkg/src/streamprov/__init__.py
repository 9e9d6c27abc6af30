"""Streaming provenance-graph intrusion detection with online log compaction."""

from .compaction import (
    CompactionDecision,
    Compactor,
    LatestSemanticTable,
    NetworkRefreshWindow,
    offload_inactive_files,
    prune_on_exit,
    skip_or_retain,
)
from .events import EntityId, EntityKind, EventRecord, EventType, depends_on, parse_event, serialize_event
from .forensics import AttackChain, backward_trace, forward_trace
from .graph import GraphStore, UnknownEntity
from .ingest import StreamSource, open_source, rate_curve, read_events, stream_stats
from .judgment import Alert, JudgmentEngine
from .labels import LabelEngine
from .pipeline import Engine, EngineConfig, RunStats
from .policy import Label, Policy, Severity, load_policy, parse_policy
from .scenarios import GroundTruthManifest, ScenarioName, ScenarioSpec, generate, generate_lines

__version__ = "0.1.0"

__all__ = [
    "Alert", "AttackChain", "CompactionDecision", "Compactor", "Engine", "EngineConfig",
    "EntityId", "EntityKind", "EventRecord", "EventType", "GraphStore", "JudgmentEngine",
    "Label", "LabelEngine", "LatestSemanticTable", "NetworkRefreshWindow", "Policy",
    "RunStats", "Severity", "UnknownEntity", "backward_trace", "depends_on", "forward_trace",
    "load_policy", "offload_inactive_files", "parse_event", "parse_policy", "prune_on_exit",
    "serialize_event", "skip_or_retain", "StreamSource", "open_source", "rate_curve", "read_events",
    "stream_stats", "GroundTruthManifest", "ScenarioName", "ScenarioSpec", "generate", "generate_lines",
]
