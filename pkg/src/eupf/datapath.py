"""
Simulated UPF datapath.

Parses TEIDs out of GTP-U headers, pairs request/response packets per TEID to
produce a passive round-trip proxy, and forwards uplink packets on whichever
N6 interface the agent last wrote into the action map.
"""

from __future__ import annotations

import csv
import enum
import io
import struct
import threading
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from eupf.env import INTERFACES, Interface

GTPU_HEADER = struct.Struct(">BBHI")  # flags, message type, length, TEID
GTPU_VERSION = 1
GTPU_T_PDU = 0xFF
TEID_MAX = 0xFFFFFFFF

DEFAULT_INTERFACE = Interface.N6A


class MalformedPacketError(ValueError):
    pass


class UnsupportedVersionError(ValueError):
    pass


class ClockSkewError(ValueError):
    """A timestamp went backwards for a TEID with a request in flight."""


class Direction(enum.Enum):
    REQUEST = "request"
    RESPONSE = "response"


def parse_teid(raw_header: bytes) -> int:
    if len(raw_header) < GTPU_HEADER.size:
        raise MalformedPacketError(
            f"GTP-U header needs {GTPU_HEADER.size} bytes, got {len(raw_header)}"
        )
    flags, _msg_type, _length, teid = GTPU_HEADER.unpack_from(raw_header)
    version = flags >> 5
    if version != GTPU_VERSION:
        raise UnsupportedVersionError(f"GTP version {version} not supported")
    return teid


def build_gtpu_header(teid: int, payload_length: int = 0, msg_type: int = GTPU_T_PDU) -> bytes:
    """Minimal 8-byte GTP-U header (version 1, PT 1, no optional fields)."""
    if not 0 <= teid <= TEID_MAX:
        raise ValueError(f"TEID must fit in 32 bits, got {teid}")
    return GTPU_HEADER.pack(0x30, msg_type, payload_length, teid)


@dataclass
class RoundTripEntry:
    ts_request: int = 0  # ns, 0 = not armed
    last_rtt: int = 0  # ns
    count: int = 0


@dataclass(frozen=True)
class PacketEvent:
    raw_header: bytes
    timestamp_ns: int
    direction: Direction

    def __post_init__(self):
        if len(self.raw_header) < GTPU_HEADER.size:
            raise MalformedPacketError(
                f"GTP-U header needs {GTPU_HEADER.size} bytes, got {len(self.raw_header)}"
            )


class SharedMaps:
    """The observation map, the action map and packet-out counters.

    Exactly two parties touch these: the datapath writes ``rtt_map`` and the
    counters and reads ``action_map``; the agent does the reverse. Every
    access goes through one lock, so readers always see a committed value.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.rtt_map: Dict[int, RoundTripEntry] = {}
        self.action_map: Dict[int, Interface] = {}
        # per interface: timestamps (ns) of forwarded packets, ascending
        self.packet_out: Dict[Interface, List[int]] = {i: [] for i in INTERFACES}

    # -- datapath side -------------------------------------------------

    def measure_rtt(self, teid: int, now_ns: int) -> Optional[int]:
        """Alternate-packet pairing per TEID; returns the round trip in ns when a pair closes."""
        if now_ns <= 0:
            raise ValueError(f"timestamps must be positive, got {now_ns}")
        with self._lock:
            entry = self.rtt_map.get(teid)
            if entry is None:
                self.rtt_map[teid] = RoundTripEntry(ts_request=now_ns)
                return None
            if entry.ts_request == 0:
                entry.ts_request = now_ns
                return None
            if now_ns < entry.ts_request:
                stale = entry.ts_request
                entry.ts_request = now_ns
                raise ClockSkewError(
                    f"TEID {teid}: timestamp {now_ns} precedes pending request {stale}; re-armed"
                )
            entry.last_rtt = now_ns - entry.ts_request
            entry.ts_request = 0
            entry.count += 1
            return entry.last_rtt

    def forward(self, teid: int, now_ns: int) -> Interface:
        with self._lock:
            iface = self.action_map.get(teid, DEFAULT_INTERFACE)
            self.packet_out[iface].append(now_ns)
        return iface

    # -- agent side ----------------------------------------------------

    def read_observation(self, teid: int) -> Optional[Tuple[int, int]]:
        """(last_rtt_ns, count) for ``teid``, or None before its first completed pairing."""
        with self._lock:
            entry = self.rtt_map.get(teid)
            if entry is None or entry.count == 0:
                return None
            return entry.last_rtt, entry.count

    def write_action(self, teid: int, action) -> Interface:
        try:
            iface = Interface(action)
        except ValueError:
            raise ValueError(f"invalid interface {action!r}; expected one of n6a, n6b") from None
        with self._lock:
            self.action_map[teid] = iface
        return iface

    # -- reporting -----------------------------------------------------

    def packet_out_counts(self) -> Dict[Interface, int]:
        with self._lock:
            return {i: len(ts) for i, ts in self.packet_out.items()}

    def dump_rtt_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["teid", "last_rtt_ns", "count"])
        with self._lock:
            for teid in sorted(self.rtt_map):
                e = self.rtt_map[teid]
                w.writerow([teid, e.last_rtt, e.count])
        return buf.getvalue()


def packet_out_histogram(
    packet_out: Dict[Interface, List[int]],
    interval_s: float = 10.0,
    start_ns: Optional[int] = None,
    end_ns: Optional[int] = None,
) -> dict:
    """Mean packets per fixed-width interval for each interface.

    Windows start at ``start_ns`` (default: the earliest packet) and cover up
    to the latest packet in range, or up to ``end_ns`` when given. Returns an
    empty dict when no packets fall in range.
    """
    if not interval_s > 0:
        raise ValueError(f"interval_s must be > 0, got {interval_s}")
    width = int(round(interval_s * 1e9))
    selected = {}
    for iface in INTERFACES:
        ts = packet_out.get(iface, [])
        selected[iface] = [
            t for t in ts
            if (start_ns is None or t >= start_ns) and (end_ns is None or t < end_ns)
        ]
    everything = [t for ts in selected.values() for t in ts]
    if not everything:
        return {}
    origin = start_ns if start_ns is not None else min(everything)
    last = end_ns - 1 if end_ns is not None else max(everything)
    n_intervals = (last - origin) // width + 1
    counts = {i.value: [0] * n_intervals for i in INTERFACES}
    for iface, ts in selected.items():
        row = counts[iface.value]
        for t in ts:
            row[(t - origin) // width] += 1
    return {
        "interval_s": interval_s,
        "intervals": n_intervals,
        "mean": {k: sum(v) / n_intervals for k, v in counts.items()},
        "counts": counts,
    }


class Datapath:
    """GTP-U packet handler on top of :class:`SharedMaps`.

    Requests are measured and forwarded; responses are only measured.
    """

    def __init__(self, maps: Optional[SharedMaps] = None):
        self.maps = maps if maps is not None else SharedMaps()

    def handle(self, event: PacketEvent) -> Tuple[Optional[Interface], Optional[int]]:
        teid = parse_teid(event.raw_header)
        rtt = self.maps.measure_rtt(teid, event.timestamp_ns)
        iface = None
        if event.direction is Direction.REQUEST:
            iface = self.maps.forward(teid, event.timestamp_ns)
        return iface, rtt
