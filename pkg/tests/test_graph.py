from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamprov.events import EntityKind
from streamprov.events import EventType as T
from streamprov.graph import (
    VIRTUAL_ROOT,
    Direction,
    GraphStore,
    LabelMark,
    OffloadStore,
    OffloadStoreFull,
    UnknownEntity,
    fork_inherit,
)
from streamprov.policy import Label

from streams import F, N, P, ev, random_stream


def test_first_event_creates_entities_under_root():
    store = GraphStore()
    r = store.apply_event(ev(1, T.N0_Connect, P("1:1"), N("10.0.0.1:80")))
    assert r.created == [P("1:1"), N("10.0.0.1:80")]
    assert store.processes[P("1:1")].parent == VIRTUAL_ROOT
    assert store.resident_count == 2
    assert store.check_tree() == []


def test_fork_links_child_and_names_it():
    store = GraphStore()
    store.apply_event(ev(1, T.E0_Read, P("1:1"), F("/a"), name="/usr/sbin/apache2"))
    store.apply_event(ev(2, T.E2_Fork, P("1:1"), P("2:1"), name="/usr/sbin/apache2",
                         obj_name="/usr/sbin/apache2"))
    child = store.processes[P("2:1")]
    assert child.parent == P("1:1") and child.name == "/usr/sbin/apache2"
    assert P("2:1") in store.processes[P("1:1")].children
    assert store.check_tree() == []


def test_execute_renames_subject():
    store = GraphStore()
    store.apply_event(ev(1, T.E3_Execute, P("1:1"), F("/tmp/payload")))
    r = store.apply_event(ev(2, T.E0_Read, P("1:1"), F("/etc/hosts"), name="/tmp/payload"))
    assert store.processes[P("1:1")].name == "/tmp/payload"
    assert r.renamed == []  # already renamed by the execute


def test_file_rename_aliases_and_moves_edges():
    store = GraphStore()
    store.apply_event(ev(1, T.E1_Write, P("1:1"), F("/tmp/a")))
    store.files[F("/tmp/a")].labels[Label.FU2] = LabelMark(1, None)
    r = store.apply_event(ev(2, T.E6_Rename, P("1:1"), F("/tmp/a"), args="/var/www/uploads/a.php"))
    new = F("/var/www/uploads/a.php")
    assert r.renamed == [new]
    assert store.resolve(F("/tmp/a")) == new
    assert Label.FU2 in store.labels_of(F("/tmp/a"))
    hits = store.neighbors(new, Direction.IN)
    assert [e.ts for e, _ in hits] == [1, 2]
    # a fresh file at the old path is a new entity
    store.apply_event(ev(3, T.E7_Create, P("1:1"), F("/tmp/a")))
    assert store.resolve(F("/tmp/a")) == F("/tmp/a")
    assert not store.labels_of(F("/tmp/a"))


def test_neighbors_time_bounds_are_strict():
    store = GraphStore()
    for t in (1, 2, 3):
        store.apply_event(ev(t, T.E1_Write, P("1:1"), F("/x"), t))
    assert [e.ts for e, _ in store.neighbors(F("/x"), Direction.IN, before=3)] == [1, 2]
    assert [e.ts for e, _ in store.neighbors(F("/x"), Direction.IN, after=1)] == [2, 3]
    assert all(peer == P("1:1") for _, peer in store.neighbors(F("/x"), Direction.IN))


def test_unknown_entity():
    store = GraphStore()
    with pytest.raises(UnknownEntity):
        store.get(P("nope"))
    with pytest.raises(UnknownEntity):
        store.neighbors(F("/none"), Direction.IN)
    assert isinstance(UnknownEntity("x"), KeyError)


def test_fork_inherit_only_status_labels():
    store = GraphStore()
    store.apply_event(ev(1, T.E0_Read, P("1:1"), F("/a")))
    parent = store.processes[P("1:1")]
    for label in (Label.PS1, Label.PS4, Label.PB1, Label.PB5):
        parent.labels[label] = LabelMark(1, None)
    r = store.apply_event(ev(2, T.E2_Fork, P("1:1"), P("2:1")))
    child = store.processes[P("2:1")]
    assert set(r.inherited) == {Label.PS1, Label.PS4}
    assert set(child.labels) == {Label.PS1, Label.PS4}
    assert fork_inherit(parent, child) == []


def test_offload_store_capacity(tmp_path):
    store = OffloadStore(str(tmp_path / "o.jsonl"), max_bytes=64)
    store.put(F("/a"), {"k": 1})
    with pytest.raises(OffloadStoreFull):
        store.put(F("/b"), {"k": "x" * 100})
    assert F("/a") in store and len(store) == 1
    assert store.take(F("/a")) == {"k": 1}
    store.close()


def test_temp_offload_store_is_removed():
    store = OffloadStore()
    path = store.path
    store.put(F("/a"), {})
    store.close()
    import os
    assert not os.path.exists(path)


def test_exports():
    store = GraphStore()
    store.apply_event(ev(1, T.E1_Write, P("1:1"), F('/tmp/"q"')))
    data = store.to_json()
    json.dumps(data)
    kinds = {n["kind"] for n in data["nodes"]}
    assert kinds == {"process", "file"}
    assert data["edges"][0]["etype"] == "E1"
    dot = store.to_dot()
    assert dot.startswith("digraph") and '\\"q\\"' in dot


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 400))
def test_tree_integrity_and_edge_index(seed, n):
    store = GraphStore()
    stream = random_stream(random.Random(seed), n)
    for e in stream:
        store.apply_event(e)
    assert store.check_tree() == []
    assert len(store.edges) == n
    for ent, table in store.edges.in_edges.items():
        for e in table.values():
            assert e.target == ent
    for node in store.iter_nodes():
        assert node.id.kind in (EntityKind.PROCESS, EntityKind.FILE, EntityKind.NETWORK)


def test_pruned_writer_leaves_no_edges_on_renamed_file():
    store = GraphStore()
    store.apply_event(ev(1, T.E1_Write, P("1:1"), F("/tmp/a")))
    store.apply_event(ev(2, T.E6_Rename, P("1:1"), F("/tmp/a"), args="/tmp/b"))
    store.remove_process(P("1:1"))
    assert store.neighbors(F("/tmp/b"), Direction.IN) == []
