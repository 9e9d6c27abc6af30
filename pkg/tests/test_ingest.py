from __future__ import annotations

import io
import logging
import time

import numpy as np
import pytest

from streamprov.events import EventType, serialize_event
from streamprov.ingest import (
    PropagatedParseError,
    SourceMode,
    SourceUnavailable,
    StreamSource,
    open_source,
    rate_curve,
    stream_stats,
    write_rate_csv,
)

from streams import NS, F, P, ev


def lines(*ts):
    return [serialize_event(ev(t, EventType.E0_Read, P("1:1"), F("/x"))) for t in ts]


def write(tmp_path, rows, name="c.jsonl"):
    path = tmp_path / name
    path.write_text("\n".join(rows) + "\n")
    return str(path)


def test_replay_assigns_sequence(tmp_path):
    stream = open_source(StreamSource.replay(write(tmp_path, lines(1, 2, 3))))
    assert [e.seq for e in stream] == [0, 1, 2]
    stats = stream_stats(stream)
    assert stats["events_emitted"] == 3 and stats["bytes_read"] > 0


def test_initial_stats_are_zero(tmp_path):
    stream = open_source(StreamSource.replay(write(tmp_path, lines(1))))
    assert stream_stats(stream) == {"events_emitted": 0, "events_per_second": 0.0, "bytes_read": 0}


def test_bad_line_reports_line_number(tmp_path):
    rows = lines(1, 2)
    rows.insert(1, '{"ts": 1, "etype": "E0"')
    stream = open_source(StreamSource.replay(write(tmp_path, rows)))
    with pytest.raises(PropagatedParseError) as info:
        list(stream)
    assert info.value.line == 2


def test_blank_lines_are_skipped_but_counted(tmp_path):
    rows = lines(1)
    rows.insert(0, "")
    stream = open_source(StreamSource.replay(write(tmp_path, rows)))
    out = list(stream)
    assert len(out) == 1
    with pytest.raises(PropagatedParseError) as info:
        list(open_source(StreamSource.replay(write(tmp_path, ["", "x"], "bad.jsonl"))))
    assert info.value.line == 2


def test_missing_file():
    with pytest.raises(SourceUnavailable):
        open_source(StreamSource.replay("/nonexistent/corpus.jsonl"))
    with pytest.raises(SourceUnavailable):
        open_source(StreamSource(SourceMode.LIVE_PIPE, "not-a-handle"))


def test_replay_rejects_out_of_order(tmp_path):
    with pytest.raises(PropagatedParseError) as info:
        list(open_source(StreamSource.replay(write(tmp_path, lines(5, 3)))))
    assert info.value.line == 2


def test_live_drops_out_of_order(caplog):
    handle = io.StringIO("\n".join(lines(5, 3, 7)) + "\n")
    stream = open_source(StreamSource.live(handle))
    with caplog.at_level(logging.WARNING):
        got = [e.ts for e in stream]
    assert got == [5, 7]
    assert stream.counters.out_of_order == 1
    assert "out-of-order" in caplog.text


def test_rate_limit_throttles(tmp_path):
    path = write(tmp_path, lines(*range(1, 11)))
    t0 = time.perf_counter()
    list(open_source(StreamSource.replay(path, rate_limit=100.0)))
    assert time.perf_counter() - t0 >= 0.08


def test_rate_curve_and_csv(tmp_path):
    ts = [10 * NS, 10 * NS + 1, 12 * NS]
    stream = open_source(StreamSource.replay(write(tmp_path, lines(*ts))))
    list(stream)
    curve = rate_curve(stream, "event")
    assert curve.tolist() == [[0, 2], [1, 0], [2, 1]]
    assert rate_curve(stream, "wall")[:, 1].sum() == 3
    out = tmp_path / "rate.csv"
    write_rate_csv(curve, str(out))
    text = out.read_text().splitlines()
    assert text[0] == "second,events" and text[1] == "0,2"
    empty = open_source(StreamSource.replay(write(tmp_path, [""], "e.jsonl")))
    list(empty)
    assert rate_curve(empty).shape == (0, 2)
    assert isinstance(curve, np.ndarray)
