"""Per-project append-only event journal with replay + live subscriptions.

Events are JSON lines on disk and a complete in-memory list; sequences are
gapless and strictly increasing per journal. Subscribers pull at their own
pace from the retained list, so fan-out never blocks a writer.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .fsutil import utcnow_iso


class EventKind(Enum):
    STATUS = "Status"
    BUILD_LOG = "BuildLog"
    RUN_LOG = "RunLog"
    RESULTS_CHANGED = "ResultsChanged"
    ERROR = "Error"
    SHARE = "Share"
    UPLOAD = "Upload"
    ARCHIVE = "Archive"


@dataclass(frozen=True)
class LogEvent:
    sequence: int
    timestamp: str
    kind: EventKind
    payload: str

    def to_dict(self) -> dict:
        return {
            "sequence": self.sequence,
            "timestamp": self.timestamp,
            "kind": self.kind.value,
            "payload": self.payload,
        }


class Journal:
    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Condition()
        self._events: list[LogEvent] = []
        self._closed = False
        self.first_sequence = 1
        if self.path.is_file():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                doc = json.loads(line)
                self._events.append(
                    LogEvent(doc["sequence"], doc["timestamp"], EventKind(doc["kind"]), doc["payload"])
                )
            if self._events:
                self.first_sequence = self._events[0].sequence
        self._fh = open(self.path, "a", encoding="utf-8")

    @property
    def head_sequence(self) -> int:
        with self._lock:
            return self._events[-1].sequence if self._events else self.first_sequence - 1

    def append(self, kind: EventKind, payload: str) -> LogEvent:
        with self._lock:
            seq = (self._events[-1].sequence + 1) if self._events else self.first_sequence
            event = LogEvent(sequence=seq, timestamp=utcnow_iso(), kind=kind, payload=payload)
            if self._closed:
                # shutdown race: a late writer loses the event rather than
                # crashing its thread
                return event
            self._events.append(event)
            self._fh.write(json.dumps(event.to_dict()) + "\n")
            self._fh.flush()
            self._lock.notify_all()
            return event

    def events(self, from_sequence: int = 0) -> list[LogEvent]:
        """Snapshot of retained events with sequence > from_sequence."""
        with self._lock:
            return [e for e in self._events if e.sequence > from_sequence]

    def subscribe(self, from_sequence: int = 0) -> "JournalSubscription":
        return JournalSubscription(self, from_sequence)

    def close(self) -> None:
        with self._lock:
            self._closed = True
            self._fh.close()
            self._lock.notify_all()


class JournalSubscription:
    """Replays from `from_sequence` (exclusive) then follows live events."""

    def __init__(self, journal: Journal, from_sequence: int):
        self._journal = journal
        # Beyond-head subscriptions replay nothing and go live-only.
        self._after = min(from_sequence, journal.head_sequence)
        # Retention starts at first_sequence; anything older is a gap
        # (only possible when a journal file was externally truncated).
        self.missing_from: int | None = None
        if from_sequence + 1 < journal.first_sequence:
            self.missing_from = from_sequence + 1
            self._after = journal.first_sequence - 1

    def next(self, timeout: float | None = None) -> LogEvent | None:
        """Next event in sequence order, or None on timeout."""
        lock = self._journal._lock
        with lock:
            if not self._pending():
                lock.wait(timeout)
            events = self._journal._events
            if not events:
                return None
            # sequences are gapless, so the next event sits at a fixed index
            index = self._after - events[0].sequence + 1
            if 0 <= index < len(events):
                event = events[index]
                self._after = event.sequence
                return event
            return None

    def _pending(self) -> bool:
        events = self._journal._events
        return bool(events) and events[-1].sequence > self._after

    def __iter__(self):
        while True:
            event = self.next(timeout=None)
            if event is not None:
                yield event
