"""Ordered event sources: replay files and live line streams."""

from __future__ import annotations

import logging
import sys
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterator, Optional, Union

import numpy as np

from .events import EventFormatError, EventRecord, parse_event

log = logging.getLogger(__name__)


class SourceUnavailable(OSError):
    pass


class PropagatedParseError(ValueError):
    """A malformed record; ``line`` is 1-based."""

    def __init__(self, line: int, cause: Exception) -> None:
        super().__init__(f"line {line}: {cause}")
        self.line = line
        self.cause = cause


class SourceMode(Enum):
    REPLAY_FILE = "ReplayFile"
    LIVE_PIPE = "LivePipe"


@dataclass
class StreamSource:
    mode: SourceMode
    path_or_handle: Union[str, IO[str], None] = None
    rate_limit: Optional[float] = None

    @classmethod
    def replay(cls, path: str, rate_limit: Optional[float] = None) -> "StreamSource":
        return cls(SourceMode.REPLAY_FILE, path, rate_limit)

    @classmethod
    def live(cls, handle: Optional[IO[str]] = None) -> "StreamSource":
        return cls(SourceMode.LIVE_PIPE, handle if handle is not None else sys.stdin)


@dataclass
class StreamCounters:
    """Monotone counters; written by the producer, readable from any thread."""

    events_emitted: int = 0
    bytes_read: int = 0
    out_of_order: int = 0
    started: Optional[float] = None
    finished: Optional[float] = None
    # wall-clock second -> events emitted in that second, and the event-time analogue
    wall_hist: dict = field(default_factory=dict)
    event_hist: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def snapshot(self) -> dict:
        with self._lock:
            n, b = self.events_emitted, self.bytes_read
            start, end = self.started, self.finished
        if start is None or n == 0:
            rate = 0.0
        else:
            elapsed = (end if end is not None else time.perf_counter()) - start
            rate = n / elapsed if elapsed > 0 else 0.0
        return {"events_emitted": n, "events_per_second": rate, "bytes_read": b}


class EventStream:
    """Iterator over validated, ordered records with seq assigned."""

    def __init__(self, source: StreamSource) -> None:
        self.source = source
        self.counters = StreamCounters()
        self._fh, self._owned = self._open(source)
        self._iter = self._generate()

    @staticmethod
    def _open(source: StreamSource):
        if source.mode is SourceMode.LIVE_PIPE:
            handle = source.path_or_handle
            if handle is None or isinstance(handle, str):
                raise SourceUnavailable("live mode needs an open text handle")
            return handle, False
        path = source.path_or_handle
        if not isinstance(path, str):
            return path, False
        try:
            fh = open(path, "r", encoding="utf-8")
        except OSError as exc:
            raise SourceUnavailable(f"cannot open {path}: {exc}") from exc
        return fh, True

    def __iter__(self) -> Iterator[EventRecord]:
        return self

    def __next__(self) -> EventRecord:
        return next(self._iter)

    def close(self) -> None:
        if self._owned and not self._fh.closed:
            self._fh.close()

    def _generate(self) -> Iterator[EventRecord]:
        c = self.counters
        live = self.source.mode is SourceMode.LIVE_PIPE
        rate = self.source.rate_limit
        seq = 0
        last_ts = None
        c.started = time.perf_counter()
        wall0 = c.started
        try:
            for lineno, line in enumerate(self._fh, start=1):
                nbytes = len(line.encode("utf-8")) if not line.isascii() else len(line)
                if not line.strip():
                    with c._lock:
                        c.bytes_read += nbytes
                    continue
                try:
                    rec = parse_event(line, seq)
                except EventFormatError as exc:
                    raise PropagatedParseError(lineno, exc) from exc
                if last_ts is not None and rec.ts < last_ts:
                    if not live:
                        raise PropagatedParseError(lineno, EventFormatError(
                            f"timestamp {rec.ts} earlier than previous {last_ts}"))
                    c.out_of_order += 1
                    log.warning("dropping out-of-order record at line %d (ts %d < %d)", lineno, rec.ts, last_ts)
                    with c._lock:
                        c.bytes_read += nbytes
                    continue
                if rate:
                    due = wall0 + seq / rate
                    delay = due - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                last_ts = rec.ts
                seq += 1
                sec = int(time.perf_counter() - wall0)
                with c._lock:
                    c.events_emitted = seq
                    c.bytes_read += nbytes
                    c.wall_hist[sec] = c.wall_hist.get(sec, 0) + 1
                    esec = rec.ts // 1_000_000_000
                    c.event_hist[esec] = c.event_hist.get(esec, 0) + 1
                yield rec
        finally:
            c.finished = time.perf_counter()
            self.close()


def open_source(config: StreamSource) -> EventStream:
    return EventStream(config)


def stream_stats(source: EventStream) -> dict:
    return source.counters.snapshot()


def rate_curve(source: EventStream, clock: str = "event") -> np.ndarray:
    """Per-second event counts as an ``(n, 2)`` array of (second, count).

    ``clock="event"`` bins by record timestamps (the generation profile);
    ``clock="wall"`` bins by when the records were emitted.
    """
    hist = source.counters.event_hist if clock == "event" else source.counters.wall_hist
    if not hist:
        return np.zeros((0, 2), dtype=np.int64)
    lo, hi = min(hist), max(hist)
    secs = np.arange(lo, hi + 1, dtype=np.int64)
    counts = np.array([hist.get(int(s), 0) for s in secs], dtype=np.int64)
    return np.column_stack([secs - lo, counts])


def write_rate_csv(curve: np.ndarray, path: str) -> None:
    np.savetxt(path, curve, fmt="%d", delimiter=",", header="second,events", comments="")


def read_events(path: str) -> list[EventRecord]:
    """Convenience: the whole replay file as a list."""
    return list(open_source(StreamSource.replay(path)))
