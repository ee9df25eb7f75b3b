"""Frame assembly, keyframe selection, sliding window, and hover pruning.

A frame is the merged content of all packets that share one stamp. Frames
are promoted to keyframes when they add information (new drones, enough
observer motion, or motion plus a detection); keyframes form the bounded
window the estimator optimizes over. Hover annotation finds stretches where
a drone did not move and plans the corresponding residual/variable pruning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from swarmrel.geometry import Pose4, relative, wrap_angle
from swarmrel.netlink import DetectionSet, DistanceSet, Packet, VioPose
from swarmrel.simworld import DetectionMeas


@dataclass(eq=False)
class Frame:
    """Synchronized measurement bundle at one stamp.

    Partial frames are legal: drones whose packets were lost are simply
    absent from `vio`, and distances survive only if some endpoint reported
    them.
    """

    t: float
    vio: dict = field(default_factory=dict)         # drone id -> Pose4 (own odometry frame)
    distances: dict = field(default_factory=dict)   # (i, j), i < j -> meters
    detections: list = field(default_factory=list)  # DetectionMeas

    def drone_ids(self) -> set:
        ids = set(self.vio)
        for i, j in self.distances:
            ids.add(i)
            ids.add(j)
        for d in self.detections:
            ids.add(d.observer)
        return ids

    def to_record(self) -> dict:
        return {
            "t": float(self.t),
            "vio": {str(i): [*map(float, p.t), float(p.yaw)]
                    for i, p in sorted(self.vio.items())},
            "distances": [[int(i), int(j), float(d)]
                          for (i, j), d in sorted(self.distances.items())],
            "detections": [d.to_record() for d in self.detections],
        }

    @staticmethod
    def from_record(rec: dict) -> "Frame":
        return Frame(
            t=rec["t"],
            vio={int(i): Pose4(np.asarray(v[:3]), v[3]) for i, v in rec["vio"].items()},
            distances={(i, j): d for i, j, d in rec["distances"]},
            detections=[DetectionMeas.from_record(r) for r in rec["detections"]],
        )


def _norm_pair(i, j):
    return (i, j) if i < j else (j, i)


def assemble(packets, t: float | None = None, period: float = 0.01) -> Frame:
    """Merge packets sharing one stamp into a Frame.

    Later arrivals win on conflicts (per distance pair, per detection
    observer). Raises if the packets straddle more than half a period.
    """
    if t is None:
        if not packets:
            raise ValueError("cannot infer the frame time from zero packets")
        t = packets[0].stamp
    frame = Frame(t=float(t))
    dets_by_observer: dict[int, list] = {}
    for pkt in packets:
        if abs(pkt.stamp - t) > period / 2 + 1e-12:
            raise ValueError(f"packet stamp {pkt.stamp} too far from frame time {t}")
        payload = pkt.payload
        if isinstance(payload, VioPose):
            frame.vio[pkt.sender] = payload.pose
        elif isinstance(payload, DistanceSet):
            for pair, d in payload.distances.items():
                frame.distances[_norm_pair(*pair)] = d
        elif isinstance(payload, DetectionSet):
            dets_by_observer[pkt.sender] = list(payload.detections)
        else:
            raise TypeError(f"unknown payload {type(payload)}")
    for obs in sorted(dets_by_observer):
        frame.detections.extend(dets_by_observer[obs])
    return frame


class FrameAssembler:
    """Buckets incoming packets by stamp and releases frames once settled.

    `delay` is how long after its stamp a frame is considered complete;
    with a lossless zero-latency link it can be zero.
    """

    def __init__(self, period: float = 0.01, delay: float = 0.0):
        self.period = period
        self.delay = delay
        self._buckets: dict[int, list] = {}

    def add(self, packet: Packet):
        key = int(round(packet.stamp / self.period))
        self._buckets.setdefault(key, []).append(packet)

    def due_frames(self, now: float) -> list[Frame]:
        due_keys = sorted(k for k in self._buckets
                          if k * self.period <= now - self.delay + 1e-9)
        frames = []
        for k in due_keys:
            packets = self._buckets.pop(k)
            frames.append(assemble(packets, t=k * self.period, period=self.period))
        return frames


@dataclass
class KeyframeParams:
    td0: float = 0.5   # displacement that always makes a keyframe, meters
    td1: float = 0.1   # displacement that suffices when a detection is involved

    def validate(self):
        if not 0.0 < self.td1 < self.td0:
            raise ValueError("need 0 < td1 < td0")


class SlidingWindow:
    """Bounded chronological keyframe sequence for one observer."""

    def __init__(self, observer: int, max_size: int = 50):
        if max_size < 1:
            raise ValueError("window needs room for at least one keyframe")
        self.observer = observer
        self.max_size = max_size
        self.keyframes: list[Frame] = []

    def __len__(self):
        return len(self.keyframes)

    @property
    def last(self) -> Frame | None:
        return self.keyframes[-1] if self.keyframes else None

    def drone_ids(self) -> set:
        ids = set()
        for kf in self.keyframes:
            ids |= kf.drone_ids()
        return ids

    def push(self, frame: Frame) -> Frame | None:
        """Append a keyframe, evicting the oldest when full."""
        if self.keyframes and frame.t <= self.keyframes[-1].t:
            raise ValueError(
                f"keyframe time {frame.t} not after last {self.keyframes[-1].t}")
        self.keyframes.append(frame)
        if len(self.keyframes) > self.max_size:
            return self.keyframes.pop(0)
        return None

    def present_indices(self, drone: int) -> list[int]:
        """Keyframe indices where the drone's own odometry made it through."""
        return [k for k, kf in enumerate(self.keyframes) if drone in kf.vio]

    def vio_delta(self, drone: int, idx_a: int, idx_b: int) -> Pose4:
        """Odometry delta between two keyframes, from the stored poses.

        Stored poses keep the chain contiguous across evictions by
        construction: the delta between surviving keyframes never references
        an evicted one.
        """
        return relative(self.keyframes[idx_a].vio[drone], self.keyframes[idx_b].vio[drone])

    def path_length(self, drone: int) -> float:
        """Straight-line distance summed over consecutive present keyframes."""
        idx = self.present_indices(drone)
        total = 0.0
        for a, b in zip(idx, idx[1:]):
            pa = self.keyframes[a].vio[drone]
            pb = self.keyframes[b].vio[drone]
            total += float(np.linalg.norm(pb.t - pa.t))
        return total

    def observer_displacement(self, frame: Frame) -> float | None:
        """Observer motion between the last keyframe and this frame."""
        if not self.keyframes:
            return None
        if self.observer not in frame.vio or self.observer not in self.keyframes[-1].vio:
            return None
        return float(np.linalg.norm(
            frame.vio[self.observer].t - self.keyframes[-1].vio[self.observer].t))

    def to_records(self) -> list[dict]:
        return [kf.to_record() for kf in self.keyframes]


def is_keyframe(frame: Frame, window: SlidingWindow, params: KeyframeParams,
                observer_is_detected: bool = False):
    """Keyframe test: (selected, reason).

    Selected when the frame brings a drone the window has never seen, when
    the observer moved more than td0, or when it moved more than td1 and a
    detection involves it (it detects, or `observer_is_detected` says some
    matched detection points at it).
    """
    params.validate()
    if not window.keyframes:
        return True, "first"
    known = window.drone_ids()
    if frame.drone_ids() - known:
        return True, "new-drone"
    disp = window.observer_displacement(frame)
    if disp is None:
        return False, "no-own-odometry"
    if disp > params.td0:
        return True, "displacement"
    detection_involved = observer_is_detected or any(
        d.observer == window.observer for d in frame.detections)
    if disp > params.td1 and detection_involved:
        return True, "detection"
    return False, "below-threshold"


@dataclass
class PruningPlan:
    """Hover annotations plus the residuals/variables they remove.

    hover_spans maps a drone to runs of keyframe indices (each a tuple,
    length >= 2) whose poses collapse into one shared variable. The dropped
    sets enumerate distance residuals (i, j, kf index) between two hovering
    drones and odometry residuals (drone, kf a, kf b) interior to a span.
    """

    hover_spans: dict = field(default_factory=dict)
    shared_rep: dict = field(default_factory=dict)      # (drone, kf) -> representative kf
    dropped_distances: set = field(default_factory=set)
    dropped_vio: set = field(default_factory=set)
    variables_before: int = 0
    variables_after: int = 0
    distance_rows_before: int = 0
    vio_rows_before: int = 0

    @property
    def variables_removed(self) -> int:
        return self.variables_before - self.variables_after

    def representative(self, drone: int, kf_idx: int) -> int:
        return self.shared_rep.get((drone, kf_idx), kf_idx)

    def is_hovering(self, drone: int, kf_idx: int) -> bool:
        return (drone, kf_idx) in self.shared_rep

    def summary(self) -> dict:
        return {
            "variables_before": self.variables_before,
            "variables_after": self.variables_after,
            "distance_residuals_dropped": len(self.dropped_distances),
            "vio_residuals_dropped": len(self.dropped_vio),
            "distance_residuals_before": self.distance_rows_before,
            "vio_residuals_before": self.vio_rows_before,
        }


def empty_plan(window: SlidingWindow) -> PruningPlan:
    """No-op plan with the same bookkeeping counts as the annotated one."""
    return annotate_hover_and_prune(window, hover_thresh_t=-1.0, hover_thresh_yaw=-1.0)


def annotate_hover_and_prune(window: SlidingWindow,
                             hover_thresh_t: float = 0.05,
                             hover_thresh_yaw: float = math.radians(2.0)) -> PruningPlan:
    """Find hover spans and plan the residual/variable reductions.

    A drone hovers across a run of keyframes while its odometry stays within
    hover_thresh_t / hover_thresh_yaw of the run's first keyframe. Negative
    thresholds therefore disable hover detection entirely.
    """
    if not window.keyframes:
        raise ValueError("window is empty")
    plan = PruningPlan()
    drones = sorted(window.drone_ids())

    hovering_at: dict[int, set] = {}
    for drone in drones:
        idx = window.present_indices(drone)
        plan.variables_before += 4 * len(idx)
        spans = []
        k = 0
        while k < len(idx):
            anchor = window.keyframes[idx[k]].vio[drone]
            end = k
            while end + 1 < len(idx):
                nxt = window.keyframes[idx[end + 1]].vio[drone]
                if (np.linalg.norm(nxt.t - anchor.t) < hover_thresh_t
                        and abs(wrap_angle(nxt.yaw - anchor.yaw)) < hover_thresh_yaw):
                    end += 1
                else:
                    break
            if end > k:
                spans.append(tuple(idx[k:end + 1]))
            k = end + 1
        if spans:
            plan.hover_spans[drone] = spans
        removed = 0
        hover_set = set()
        for span in spans:
            rep = span[0]
            for kf in span:
                plan.shared_rep[(drone, kf)] = rep
                hover_set.add(kf)
            removed += len(span) - 1
            for a, b in zip(span, span[1:]):
                plan.dropped_vio.add((drone, a, b))
        hovering_at[drone] = hover_set
        plan.variables_after += 4 * (len(idx) - removed)
        plan.vio_rows_before += max(len(idx) - 1, 0)

    for kf_idx, kf in enumerate(window.keyframes):
        for (i, j) in kf.distances:
            if i not in kf.vio or j not in kf.vio:
                continue
            plan.distance_rows_before += 1
            if kf_idx in hovering_at.get(i, ()) and kf_idx in hovering_at.get(j, ()):
                plan.dropped_distances.add((i, j, kf_idx))
    return plan
