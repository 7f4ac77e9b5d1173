"""Fault Log - bounded ring buffer of injected fault events"""

from __future__ import annotations

import csv
from collections import Counter, deque
from collections.abc import Iterable
from typing import NamedTuple, TextIO

import config

ADD_ONE = -1
OUTPUT_REGION = -1

CSV_COLUMNS = ("logical_time", "region", "element", "bit", "detected")


class FaultEvent(NamedTuple):
    region_id: int
    element_index: int
    bit_index: int
    logical_time: float
    detected: bool


class FaultCounters(NamedTuple):
    injected: int = 0
    detected: int = 0
    overflow: int = 0

    def since(self, start: "FaultCounters") -> "FaultCounters":
        return FaultCounters(
            self.injected - start.injected,
            self.detected - start.detected,
            self.overflow - start.overflow,
        )


class FaultLog:
    """Non-blocking event log: when full, the oldest event is dropped and counted."""

    def __init__(self, capacity: int = config.DEFAULT_LOG_CAPACITY) -> None:
        if capacity < 1:
            raise ValueError("fault log capacity must be positive")
        self.capacity = capacity
        self.events: deque[FaultEvent] = deque(maxlen=capacity)
        self.total_injected = 0
        self.total_detected = 0
        self.overflow = 0
        self._pending_detected: Counter[int] = Counter()

    def record(self, events: Iterable[FaultEvent]) -> None:
        for event in events:
            if len(self.events) == self.capacity:
                self.overflow += 1
            self.events.append(event)
            self.total_injected += 1
            if event.detected:
                self.total_detected += 1
                self._pending_detected[event.region_id] += 1

    def detected_in(self, region_id: int) -> int:
        """Detected faults in a region since its last acknowledgement (restore)."""
        return self._pending_detected[region_id]

    def acknowledge(self, region_id: int) -> None:
        self._pending_detected.pop(region_id, None)

    def counters(self) -> FaultCounters:
        return FaultCounters(self.total_injected, self.total_detected, self.overflow)

    def dump_csv(self, sink: TextIO) -> None:
        """Write the retained events as CSV (oldest first)."""
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for event in self.events:
            bit = "add_one" if event.bit_index == ADD_ONE else event.bit_index
            writer.writerow(
                (repr(event.logical_time), event.region_id, event.element_index, bit, int(event.detected))
            )
