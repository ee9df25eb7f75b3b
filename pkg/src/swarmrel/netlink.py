"""Simulated lossy broadcast channel between estimator instances.

Every registered node's packets are fanned out to all other nodes; each copy
is dropped or delayed independently. Per-sender order is preserved at every
receiver (a delayed packet holds back later ones from the same sender), so
frame assembly never sees time travel from a single source. Clocks are
assumed perfectly synchronized; stamps are sender-side sample times.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from swarmrel.geometry import Pose4
from swarmrel.simworld import DetectionMeas


@dataclass(eq=False)
class VioPose:
    pose: Pose4


@dataclass(eq=False)
class DistanceSet:
    distances: dict  # (i, j) unordered pair -> meters, pairs involving the sender


@dataclass(eq=False)
class DetectionSet:
    detections: list  # DetectionMeas by the sender


@dataclass(eq=False)
class Packet:
    sender: int
    stamp: float
    payload: Any  # VioPose | DistanceSet | DetectionSet

    def to_record(self) -> dict:
        if isinstance(self.payload, VioPose):
            body = {"kind": "vio", "pose": [*map(float, self.payload.pose.t),
                                            float(self.payload.pose.yaw)]}
        elif isinstance(self.payload, DistanceSet):
            body = {"kind": "dist",
                    "distances": [[int(i), int(j), float(d)]
                                  for (i, j), d in sorted(self.payload.distances.items())]}
        elif isinstance(self.payload, DetectionSet):
            body = {"kind": "det",
                    "detections": [d.to_record() for d in self.payload.detections]}
        else:
            raise TypeError(f"unknown payload {type(self.payload)}")
        return {"sender": int(self.sender), "stamp": float(self.stamp), **body}

    @staticmethod
    def from_record(rec: dict) -> "Packet":
        kind = rec["kind"]
        if kind == "vio":
            v = rec["pose"]
            payload = VioPose(Pose4(np.asarray(v[:3]), v[3]))
        elif kind == "dist":
            payload = DistanceSet({(i, j): d for i, j, d in rec["distances"]})
        elif kind == "det":
            payload = DetectionSet([DetectionMeas.from_record(r) for r in rec["detections"]])
        else:
            raise ValueError(f"unknown packet kind {kind!r}")
        return Packet(rec["sender"], rec["stamp"], payload)


@dataclass
class LinkModel:
    """Loss and latency of the broadcast medium."""

    loss_prob: float = 0.0
    latency: float = 0.0          # fixed delivery delay, seconds
    jitter: float = 0.0           # extra uniform [0, jitter) delay
    period: float = 0.01          # broadcast period, seconds

    def validate(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")
        if self.latency < 0 or self.jitter < 0 or self.period <= 0:
            raise ValueError("latency/jitter must be >= 0 and period > 0")


@dataclass
class LinkStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0


class BroadcastChannel:
    """Single logical event queue advanced by its owner via step()."""

    def __init__(self, link: LinkModel, rng: np.random.Generator | None = None,
                 trace_path=None):
        link.validate()
        self.link = link
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.clock = 0.0
        self._nodes: list[int] = []
        self._queues: dict[tuple[int, int], deque] = {}  # (sender, receiver) -> FIFO
        self.stats: dict[tuple[int, int], LinkStats] = {}
        self._last_stamp: dict[int, float] = {}
        self._muted: set[int] = set()
        self._trace = open(trace_path, "w") if trace_path else None

    def close(self):
        if self._trace:
            self._trace.close()
            self._trace = None

    def register(self, node_id: int) -> int:
        if node_id in self._nodes:
            raise ValueError(f"node {node_id} already registered")
        for other in self._nodes:
            self._queues[(node_id, other)] = deque()
            self._queues[(other, node_id)] = deque()
            self.stats[(node_id, other)] = LinkStats()
            self.stats[(other, node_id)] = LinkStats()
        self._nodes.append(node_id)
        return node_id

    def mute(self, node_id: int):
        """Silence a sender (its subsequent broadcasts are dropped at source)."""
        self._muted.add(node_id)

    def broadcast(self, packet: Packet):
        if packet.sender not in self._nodes:
            raise ValueError(f"sender {packet.sender} is not registered")
        last = self._last_stamp.get(packet.sender)
        if last is not None and packet.stamp < last:
            raise ValueError("packet stamps must be non-decreasing per sender")
        self._last_stamp[packet.sender] = packet.stamp
        receivers = [n for n in self._nodes if n != packet.sender]
        if not receivers:
            return
        muted = packet.sender in self._muted
        losses = self.rng.random(len(receivers)) if self.link.loss_prob > 0 else None
        jitters = (self.rng.random(len(receivers)) * self.link.jitter
                   if self.link.jitter > 0 else None)
        for k, node in enumerate(receivers):
            st = self.stats[(packet.sender, node)]
            st.sent += 1
            if muted or (losses is not None and losses[k] < self.link.loss_prob):
                st.dropped += 1
                continue
            due = self.clock + self.link.latency + (jitters[k] if jitters is not None else 0.0)
            self._queues[(packet.sender, node)].append((due, packet))
        if self._trace:
            self._trace.write(json.dumps(packet.to_record()) + "\n")

    def step(self, dt: float) -> dict[int, list[Packet]]:
        """Advance the clock and release everything due, per-sender FIFO."""
        if dt <= 0:
            raise ValueError("dt must be > 0")
        self.clock += dt
        out: dict[int, list[Packet]] = {n: [] for n in self._nodes}
        for (sender, node), q in self._queues.items():
            while q and q[0][0] <= self.clock + 1e-12:
                _, pkt = q.popleft()
                out[node].append(pkt)
                self.stats[(sender, node)].delivered += 1
        return out

    @property
    def nodes(self) -> list[int]:
        return list(self._nodes)


def write_packet_trace(path, packets):
    with open(path, "w") as fh:
        for p in packets:
            fh.write(json.dumps(p.to_record()) + "\n")


def read_packet_trace(path) -> list[Packet]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Packet.from_record(json.loads(line)))
    return out
