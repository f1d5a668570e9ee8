"""Append-only per-node log of received data messages.

On disk each node gets ``<imei>.jsonl``; every line is
``{"received_at": <epoch s>, "message": <wire object>}``.  A bounded
in-memory history backs the snapshots handed to policies.
"""

from __future__ import annotations

import json
import logging
import threading
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from music.protocol import DataMessage, Message, from_wire, to_wire

log = logging.getLogger(__name__)

QUARANTINE_FILE = "quarantine.jsonl"


@dataclass(frozen=True)
class StoredEntry:
    received_at: float
    message: DataMessage


class WindowView(Sequence):
    """Immutable view of a slice of an append-only list.

    The store only ever appends to the underlying list or swaps in a new
    list, so a view taken under the lock stays consistent without copying.
    """

    __slots__ = ("_items", "_start", "_stop")

    def __init__(self, items: list, start: int = 0, stop: int | None = None):
        self._items = items
        self._start = start
        self._stop = len(items) if stop is None else stop

    def __len__(self):
        return self._stop - self._start

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        n = len(self)
        if i < 0:
            i += n
        if not 0 <= i < n:
            raise IndexError(i)
        return self._items[self._start + i]

    def __iter__(self):
        for i in range(self._start, self._stop):
            yield self._items[i]


class _History:
    __slots__ = ("items", "start")

    def __init__(self):
        self.items: list[StoredEntry] = []
        self.start = 0


class DataStore:
    def __init__(self, directory: str | Path | None = None, history_s: float = 3600.0):
        self.directory = Path(directory) if directory is not None else None
        self.history_s = history_s
        self._lock = threading.Lock()
        self._history: dict[str, _History] = {}
        self._files: dict[str, object] = {}
        self._counts: dict[str, int] = {}
        self.quarantined: list[tuple[float, object]] = []
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def _file(self, name: str):
        fh = self._files.get(name)
        if fh is None:
            # line buffered: every record reaches the OS as a whole line
            fh = open(self.directory / name, "a", encoding="utf-8", buffering=1)
            self._files[name] = fh
        return fh

    def append(self, imei: str, msg: DataMessage, received_at: float) -> StoredEntry:
        entry = StoredEntry(received_at, msg)
        line = json.dumps({"received_at": received_at, "message": to_wire(msg)}, separators=(",", ":"))
        with self._lock:
            hist = self._history.setdefault(imei, _History())
            if hist.items and received_at < hist.items[-1].received_at:
                raise ValueError(f"{imei}: out-of-order append at {received_at}")
            hist.items.append(entry)
            self._counts[imei] = self._counts.get(imei, 0) + 1
            self._trim(hist, received_at)
            if self.directory is not None:
                self._file(f"{imei}.jsonl").write(line + "\n")
        return entry

    def _trim(self, hist: _History, now: float) -> None:
        cutoff = now - self.history_s
        while hist.start < len(hist.items) and hist.items[hist.start].received_at < cutoff:
            hist.start += 1
        if hist.start > 1024 and hist.start * 2 > len(hist.items):
            hist.items = hist.items[hist.start:]
            hist.start = 0

    def quarantine(self, msg: Message | bytes, received_at: float) -> None:
        with self._lock:
            self.quarantined.append((received_at, msg))
            if self.directory is not None:
                body = to_wire(msg) if not isinstance(msg, (bytes, str)) else (
                    msg.decode("utf-8", "replace") if isinstance(msg, bytes) else msg)
                rec = {"received_at": received_at, "message": body}
                self._file(QUARANTINE_FILE).write(json.dumps(rec, separators=(",", ":")) + "\n")

    def window(self, imei: str) -> WindowView:
        with self._lock:
            hist = self._history.get(imei)
            if hist is None:
                return WindowView([])
            return WindowView(hist.items, hist.start, len(hist.items))

    def windows(self) -> dict[str, WindowView]:
        with self._lock:
            return {
                imei: WindowView(h.items, h.start, len(h.items)) for imei, h in self._history.items()
            }

    def count(self, imei: str) -> int:
        return self._counts.get(imei, 0)

    def flush(self) -> None:
        with self._lock:
            for fh in self._files.values():
                fh.flush()

    def close(self) -> None:
        with self._lock:
            for fh in self._files.values():
                fh.close()
            self._files.clear()


def read_log(path: str | Path) -> Iterator[StoredEntry]:
    """Replay a node log written by :class:`DataStore`."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            yield StoredEntry(float(rec["received_at"]), from_wire(rec["message"]))


def read_logs(directory: str | Path) -> dict[str, list[StoredEntry]]:
    out = {}
    for path in sorted(Path(directory).glob("*.jsonl")):
        if path.name == QUARANTINE_FILE:
            continue
        out[path.stem] = list(read_log(path))
    return out
