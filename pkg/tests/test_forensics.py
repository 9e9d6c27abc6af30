from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamprov.events import EventType as T
from streamprov.forensics import AttackChain, backward_trace, chain_union, forward_trace
from streamprov.graph import GraphStore, UnknownEntity
from streamprov.events import EntityKind
from streamprov.policy import Label
from streamprov.pipeline import Engine, EngineConfig

from streams import F, N, P, ev, numbered, random_stream, reachable_backward, reachable_forward

BIG = 10_000


def _store(stream, labels=True):
    if labels:
        engine = Engine(EngineConfig.oracle())
        engine.run(stream)
        return engine.store
    store = GraphStore()
    for e in stream:
        store.apply_event(e)
    return store


def test_isolated_origin():
    store = _store([ev(5, T.E9_Exit, P("1:1"), P("1:1"))])
    for chain in (backward_trace(P("1:1"), 5, store), forward_trace(P("1:1"), 0, store)):
        assert chain.nodes == {P("1:1")} and chain.edges == []


def test_unknown_origin():
    with pytest.raises(UnknownEntity):
        backward_trace(P("nobody"), 1, GraphStore())
    with pytest.raises(UnknownEntity):
        forward_trace(F("/nowhere"), 1, GraphStore())


def test_backward_stops_at_entry_points():
    web, sh = P("1:1"), P("2:1")
    stream = numbered([
        ev(1, T.N2_Recv, web, N("6.6.6.6:80"), name="/usr/sbin/apache2"),
        ev(2, T.E1_Write, web, F("/var/www/uploads/s.php"), name="/usr/sbin/apache2"),
        ev(3, T.E0_Read, web, F("/var/www/uploads/s.php"), name="/usr/sbin/apache2"),
        ev(4, T.E2_Fork, web, sh, name="/usr/sbin/apache2", obj_name="/usr/sbin/apache2"),
    ])
    store = _store(stream)
    chain = backward_trace(sh, 4, store)
    assert F("/var/www/uploads/s.php") in chain.entry_points
    assert N("6.6.6.6:80") in chain.entry_points
    assert 1 not in {e.seq for e in chain.edges}  # behind the upload entry point
    deep = backward_trace(sh, 4, store, stop_at_entries=False)
    assert {e.seq for e in deep.edges} == {0, 1, 2, 3}
    assert chain.stage_annotations[web] >= {Label.PS4}


def test_time_bound_excludes_later_edges():
    a, b = P("1:1"), P("2:1")
    stream = numbered([
        ev(1, T.E1_Write, a, F("/x"), name="/usr/bin/scp"),
        ev(2, T.E0_Read, b, F("/x")),
        ev(3, T.E1_Write, a, F("/x"), name="/usr/bin/scp"),
    ])
    store = _store(stream)
    chain = backward_trace(b, 2, store)
    assert [e.seq for e in chain.edges] == [0, 1]
    assert 2 not in {e.seq for e in chain.edges}


def test_chain_exports(tmp_path):
    a = P("1:1")
    store = _store(numbered([ev(1, T.E1_Write, a, F("/tmp/x"), name="/usr/bin/wget")]))
    chain = forward_trace(a, 0, store)
    d = json.loads(chain.to_json())
    assert d["direction"] == "forward" and d["edges"][0]["etype"] == "E1"
    assert d["stages"]["F:/tmp/x"] == ["FU2"]
    chain.write(str(tmp_path / "c.dot"))
    assert (tmp_path / "c.dot").read_text().startswith('digraph "forward_1:1"')
    nodes, seqs = chain_union([chain, AttackChain(a, "backward", 1, nodes={a})])
    assert nodes == {a, F("/tmp/x")} and seqs == {0}


def _labeled(store, ent):
    return ent.kind is not EntityKind.NETWORK and bool(store.labels_of(ent))


def _endpoints(chain, store):
    out = {chain.origin}
    for e in chain.edges:
        out.add(store.resolve(e.source))
        out.add(store.resolve(e.target))
    return out


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 300), pick=st.integers(0, 10**6))
def test_full_traces_match_brute_force(seed, n, pick):
    stream = random_stream(random.Random(seed), n)
    store = _store(stream, labels=False)
    e = stream[pick % len(stream)]
    for origin in {e.source, e.target}:
        back = backward_trace(origin, e.ts, store, max_depth=BIG, full=True, stop_at_entries=False)
        assert {x.seq for x in back.edges} == reachable_backward(stream, origin, e.ts)
        fwd = forward_trace(origin, e.ts, store, max_depth=BIG, full=True)
        assert {x.seq for x in fwd.edges} == reachable_forward(stream, origin, e.ts)
        assert back.nodes == _endpoints(back, store)
        assert fwd.nodes == _endpoints(fwd, store)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 300), pick=st.integers(0, 10**6))
def test_temporal_soundness_and_label_guidance(seed, n, pick):
    stream = random_stream(random.Random(seed), n)
    store = _store(stream)
    e = stream[pick % len(stream)]
    back = backward_trace(e.subject, e.ts, store)
    for x in back.edges:
        # every edge is strictly earlier than the bound its flow target was expanded with
        assert x.ts < back.visit_bounds[store.resolve(x.target)]
        assert _labeled(store, x.source) or _labeled(store, x.target)
    assert back.visit_bounds[e.subject] == e.ts + 1
    for node, bound in back.visit_bounds.items():
        if node != e.subject:
            assert bound <= e.ts
    fwd = forward_trace(e.subject, e.ts, store)
    for x in fwd.edges:
        assert x.ts > fwd.visit_bounds[store.resolve(x.source)]
    assert back.nodes == _endpoints(back, store) and fwd.nodes == _endpoints(fwd, store)


def test_depth_limit():
    procs = [P(f"{i}:1") for i in range(6)]
    stream = numbered([ev(i + 1, T.E2_Fork, procs[i], procs[i + 1]) for i in range(5)])
    store = _store(stream, labels=False)
    chain = backward_trace(procs[5], 10, store, max_depth=2, full=True)
    assert chain.nodes == {procs[5], procs[4], procs[3]}
