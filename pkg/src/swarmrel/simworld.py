"""Synthetic swarm world: ground-truth trajectories and sensor streams.

Generates everything the estimators consume: per-drone odometry deltas with
random-walk drift, pairwise ranges with Gaussian noise and dropout, and
anonymous field-of-view-gated detections. All streams are deterministic
functions of (config, seed); the same seed reproduces them bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from swarmrel.geometry import Pose4, relative, wrap_angle

# substream tags so each sensor family owns an independent generator
_STREAM_VIO = 1
_STREAM_DIST = 2
_STREAM_DET = 3
STREAM_CHANNEL = 4
STREAM_INIT = 5


def stream_rng(seed: int, tag: int, *extra: int) -> np.random.Generator:
    """Independent generator for one (seed, substream) pair."""
    return np.random.default_rng([int(seed), int(tag), *map(int, extra)])


@dataclass
class TrajectorySpec:
    """One drone's scripted flight path plus yaw profile.

    kind selects the parameter set that applies:
      hover:            position
      circle:           center, radius, rate, phase
      lissajous:        center, amplitude, freq, phase3
      waypoint-linear:  waypoints, speed (path is held at the last waypoint)
    Yaw is yaw_initial + yaw_rate * t, wrapped.
    """

    kind: str = "hover"
    position: tuple = (0.0, 0.0, 1.0)
    center: tuple = (0.0, 0.0, 1.0)
    radius: float = 1.0
    rate: float = 0.5
    phase: float = 0.0
    amplitude: tuple = (1.0, 1.0, 0.2)
    freq: tuple = (0.4, 0.3, 0.5)
    phase3: tuple = (0.0, 1.57, 0.0)
    waypoints: tuple = ((0.0, 0.0, 1.0), (1.0, 0.0, 1.0))
    speed: float = 0.5
    yaw_initial: float = 0.0
    yaw_rate: float = 0.0

    KINDS = ("hover", "circle", "lissajous", "waypoint-linear")

    def validate(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.kind == "circle" and self.radius < 0:
            raise ValueError("circle radius must be >= 0")
        if self.kind == "waypoint-linear":
            if len(self.waypoints) < 1:
                raise ValueError("waypoint-linear needs at least one waypoint")
            if self.speed <= 0:
                raise ValueError("waypoint speed must be > 0")

    def sample(self, times: np.ndarray):
        """Positions (T, 3) and yaws (T,) on the given time grid."""
        self.validate()
        times = np.asarray(times, dtype=float)
        T = times.shape[0]
        if self.kind == "hover":
            pos = np.tile(np.asarray(self.position, dtype=float), (T, 1))
        elif self.kind == "circle":
            ang = self.rate * times + self.phase
            pos = np.asarray(self.center, dtype=float) + self.radius * np.stack(
                [np.cos(ang), np.sin(ang), np.zeros(T)], axis=1)
        elif self.kind == "lissajous":
            amp = np.asarray(self.amplitude, dtype=float)
            frq = np.asarray(self.freq, dtype=float)
            ph = np.asarray(self.phase3, dtype=float)
            pos = np.asarray(self.center, dtype=float) + amp * np.sin(
                frq * times[:, None] + ph)
        elif self.kind == "waypoint-linear":
            pos = self._sample_waypoints(times)
        yaw = wrap_angle(self.yaw_initial + self.yaw_rate * times)
        return pos, np.atleast_1d(yaw)

    def _sample_waypoints(self, times):
        wps = np.asarray(self.waypoints, dtype=float).reshape(-1, 3)
        if len(wps) == 1:
            return np.tile(wps[0], (len(times), 1))
        seg = np.diff(wps, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        s = np.minimum(self.speed * times, cum[-1])
        k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
        frac = np.where(seg_len[k] > 0, (s - cum[k]) / np.where(seg_len[k] > 0, seg_len[k], 1.0), 0.0)
        return wps[k] + frac[:, None] * seg[k]

    def max_speed(self) -> float:
        if self.kind == "hover":
            v = 0.0
        elif self.kind == "circle":
            v = abs(self.radius * self.rate)
        elif self.kind == "lissajous":
            v = float(np.linalg.norm(np.asarray(self.amplitude) * np.asarray(self.freq)))
        else:
            v = self.speed
        return v


@dataclass
class NoiseConfig:
    """Sensor noise magnitudes plus detection geometry and the stream seed."""

    sigma_d: float = 0.1           # range noise, meters
    sigma_det: float = 0.05        # detection position noise, meters
    sigma_vio_t: float = 0.005     # odometry translation noise per step, meters
    sigma_vio_yaw: float = 0.001   # odometry yaw noise per step, radians
    range_dropout_prob: float = 0.0
    fov_half_angle: float = math.pi / 4.0
    det_max_range: float = 10.0
    det_miss_prob: float = 0.0
    det_size_const: float = 0.3    # apparent_size = det_size_const / range
    rng_seed: int = 0

    def validate(self):
        for name in ("sigma_d", "sigma_det", "sigma_vio_t", "sigma_vio_yaw"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("range_dropout_prob", "det_miss_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.det_max_range <= 0 or self.det_size_const <= 0:
            raise ValueError("det_max_range and det_size_const must be > 0")


@dataclass
class GroundTruth:
    """World-frame poses for every drone on a uniform shared time grid."""

    times: np.ndarray  # (T,)
    pos: np.ndarray    # (N, T, 3)
    yaw: np.ndarray    # (N, T)
    dt: float

    @property
    def n_drones(self) -> int:
        return self.pos.shape[0]

    @property
    def n_samples(self) -> int:
        return self.pos.shape[1]

    def pose(self, drone: int, idx: int) -> Pose4:
        return Pose4(self.pos[drone, idx].copy(), float(self.yaw[drone, idx]))

    def body_relative(self, observer: int, target: int, idx: int) -> Pose4:
        """True pose of `target` in `observer`'s body frame at sample `idx`."""
        return relative(self.pose(observer, idx), self.pose(target, idx))

    def path_length(self, drone: int) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.pos[drone], axis=0), axis=1)))


@dataclass(eq=False)
class DetectionMeas:
    """Anonymous sighting: observer id, body-frame position, apparent size.

    Deliberately carries no target identity; labeling is the matcher's job.
    """

    observer: int
    rel_t: np.ndarray
    apparent_size: float

    def __post_init__(self):
        self.rel_t = np.asarray(self.rel_t, dtype=float).reshape(3)
        self.apparent_size = float(self.apparent_size)

    def to_record(self) -> dict:
        return {
            "observer": int(self.observer),
            "rel_t": [float(v) for v in self.rel_t],
            "apparent_size": self.apparent_size,
        }

    @staticmethod
    def from_record(rec: dict) -> "DetectionMeas":
        return DetectionMeas(rec["observer"], np.asarray(rec["rel_t"]), rec["apparent_size"])


def sample_truth(specs, dt: float, duration: float) -> GroundTruth:
    """Sample every trajectory on the shared grid t = 0, dt, ..., <= duration."""
    if not specs:
        raise ValueError("need at least one trajectory spec")
    if dt <= 0 or duration < dt:
        raise ValueError("need dt > 0 and duration >= dt")
    n_steps = int(round(duration / dt))
    times = np.arange(n_steps + 1) * dt
    pos = np.zeros((len(specs), len(times), 3))
    yaw = np.zeros((len(specs), len(times)))
    for i, spec in enumerate(specs):
        pos[i], yaw[i] = spec.sample(times)
    return GroundTruth(times=times, pos=pos, yaw=yaw, dt=float(dt))


@dataclass
class VioStream:
    """Measured odometry of one drone: per-step deltas and integrated poses.

    delta[t] is the measured motion from sample t-1 to t in the body frame at
    t-1 (row 0 is zero); pose[t] integrates the deltas from the identity, so
    the odometry frame is anchored at the drone's start pose.
    """

    delta: np.ndarray  # (T, 4)
    pose: np.ndarray   # (T, 4)

    def pose_at(self, idx: int) -> Pose4:
        return Pose4.from_vec(self.pose[idx])

    def delta_at(self, idx: int) -> Pose4:
        return Pose4.from_vec(self.delta[idx])


def gen_vio(truth: GroundTruth, drone: int, noise: NoiseConfig) -> VioStream:
    """Noisy odometry for one drone, seeded per (seed, drone)."""
    noise.validate()
    if truth.n_samples < 2:
        raise ValueError("need at least 2 truth samples")
    pos = truth.pos[drone]
    yaw = truth.yaw[drone]
    T = truth.n_samples

    # true per-step deltas in the previous body frame
    dp = pos[1:] - pos[:-1]
    c, s = np.cos(yaw[:-1]), np.sin(yaw[:-1])
    dx = c * dp[:, 0] + s * dp[:, 1]
    dy = -s * dp[:, 0] + c * dp[:, 1]
    dyaw = wrap_angle(yaw[1:] - yaw[:-1])

    rng = stream_rng(noise.rng_seed, _STREAM_VIO, drone)
    noise_t = rng.normal(scale=noise.sigma_vio_t, size=(T - 1, 3)) if noise.sigma_vio_t > 0 \
        else np.zeros((T - 1, 3))
    noise_y = rng.normal(scale=noise.sigma_vio_yaw, size=T - 1) if noise.sigma_vio_yaw > 0 \
        else np.zeros(T - 1)

    delta = np.zeros((T, 4))
    delta[1:, 0] = dx + noise_t[:, 0]
    delta[1:, 1] = dy + noise_t[:, 1]
    delta[1:, 2] = dp[:, 2] + noise_t[:, 2]
    delta[1:, 3] = wrap_angle(dyaw + noise_y)

    # integrate: yaw accumulates, translations rotate by the prefix yaw
    pose = np.zeros((T, 4))
    yaw_acc = np.cumsum(delta[:, 3])
    pose[:, 3] = wrap_angle(yaw_acc)
    prefix = np.concatenate([[0.0], yaw_acc[:-1]])  # yaw before applying step t
    cp, sp = np.cos(prefix), np.sin(prefix)
    step_world = np.empty((T, 3))
    step_world[:, 0] = cp * delta[:, 0] - sp * delta[:, 1]
    step_world[:, 1] = sp * delta[:, 0] + cp * delta[:, 1]
    step_world[:, 2] = delta[:, 2]
    pose[:, :3] = np.cumsum(step_world, axis=0)
    return VioStream(delta=delta, pose=pose)


def _pair_list(n: int):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def gen_distances(truth: GroundTruth, noise: NoiseConfig, t_idx: int | None = None):
    """Noisy symmetric ranges per unordered pair; dropped pairs are absent.

    Returns the dict for one sample when t_idx is given, else the full list.
    Negative noisy ranges are clamped to zero.
    """
    noise.validate()
    n, T = truth.n_drones, truth.n_samples
    pairs = _pair_list(n)
    rng = stream_rng(noise.rng_seed, _STREAM_DIST)
    jitter = rng.normal(scale=noise.sigma_d, size=(T, len(pairs))) if noise.sigma_d > 0 \
        else np.zeros((T, len(pairs)))
    drop = rng.random(size=(T, len(pairs))) < noise.range_dropout_prob

    dist = np.zeros((T, len(pairs)))
    for p, (i, j) in enumerate(pairs):
        dist[:, p] = np.linalg.norm(truth.pos[i] - truth.pos[j], axis=1)
    meas = np.maximum(dist + jitter, 0.0)

    def at(t):
        return {pairs[p]: float(meas[t, p]) for p in range(len(pairs)) if not drop[t, p]}

    if t_idx is not None:
        return at(int(t_idx))
    return [at(t) for t in range(T)]


def gen_detections(truth: GroundTruth, noise: NoiseConfig, t_idx: int | None = None):
    """FoV-gated anonymous detections for every ordered observer/target pair.

    A target is visible when it sits inside the observer's body +x cone of
    half-angle fov_half_angle and within det_max_range; visible targets are
    then dropped independently with det_miss_prob. The reported position is
    the true body-frame offset plus Gaussian noise; apparent_size is the
    noise-free det_size_const / range. Detections are shuffled per frame so
    list order carries no identity either.
    """
    noise.validate()
    n, T = truth.n_drones, truth.n_samples
    rng = stream_rng(noise.rng_seed, _STREAM_DET)
    cos_fov = math.cos(noise.fov_half_angle)

    per_frame: list[list[DetectionMeas]] = [[] for _ in range(T)]
    for i in range(n):
        ci, si = np.cos(truth.yaw[i]), np.sin(truth.yaw[i])
        for j in range(n):
            if j == i:
                continue
            rel = truth.pos[j] - truth.pos[i]
            bx = ci * rel[:, 0] + si * rel[:, 1]
            by = -si * rel[:, 0] + ci * rel[:, 1]
            bz = rel[:, 2]
            rng_noise = rng.normal(scale=noise.sigma_det, size=(T, 3)) if noise.sigma_det > 0 \
                else np.zeros((T, 3))
            miss = rng.random(size=T) < noise.det_miss_prob
            r = np.sqrt(bx * bx + by * by + bz * bz)
            visible = (r > 1e-9) & (r <= noise.det_max_range) & (bx >= r * cos_fov) & ~miss
            for t in np.flatnonzero(visible):
                body = np.array([bx[t], by[t], bz[t]]) + rng_noise[t]
                per_frame[t].append(
                    DetectionMeas(i, body, noise.det_size_const / r[t]))
    for t in range(T):
        if len(per_frame[t]) > 1:
            order = rng.permutation(len(per_frame[t]))
            per_frame[t] = [per_frame[t][k] for k in order]

    if t_idx is not None:
        return per_frame[int(t_idx)]
    return per_frame


@dataclass
class MeasurementStreams:
    """All sensor streams of one scenario, generated once up front."""

    truth: GroundTruth
    vio: list[VioStream]
    distances: list[dict]
    detections: list[list[DetectionMeas]]

    @staticmethod
    def generate(truth: GroundTruth, noise: NoiseConfig) -> "MeasurementStreams":
        vio = [gen_vio(truth, i, noise) for i in range(truth.n_drones)]
        return MeasurementStreams(
            truth=truth,
            vio=vio,
            distances=gen_distances(truth, noise),
            detections=gen_detections(truth, noise),
        )
