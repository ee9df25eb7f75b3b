import math

import numpy as np
import pytest

from swarmrel import geometry as geo
from swarmrel.residuals import DETECTION, DISTANCE, VIO
from swarmrel.simworld import (
    DetectionMeas,
    GroundTruth,
    MeasurementStreams,
    NoiseConfig,
    TrajectorySpec,
    gen_detections,
    gen_distances,
    gen_vio,
    sample_truth,
)

ZERO_NOISE = NoiseConfig(sigma_d=0.0, sigma_det=0.0, sigma_vio_t=0.0, sigma_vio_yaw=0.0)


def hover(p, yaw=0.0):
    return TrajectorySpec(kind="hover", position=tuple(p), yaw_initial=yaw)


def test_hover_truth_is_constant():
    truth = sample_truth([hover((1.0, 2.0, 3.0), yaw=0.4)], dt=0.1, duration=2.0)
    assert truth.n_samples == 21
    assert np.all(truth.pos[0] == [1.0, 2.0, 3.0])
    assert np.all(truth.yaw[0] == pytest.approx(0.4))


def test_circle_periodicity():
    rate = 0.5
    spec = TrajectorySpec(kind="circle", center=(1.0, -1.0, 2.0), radius=1.0, rate=rate)
    period = 2 * math.pi / rate
    truth = sample_truth([spec], dt=period / 1000, duration=period)
    assert np.allclose(truth.pos[0, 0], truth.pos[0, -1], atol=1e-9)
    assert np.allclose(truth.pos[0, 0], [2.0, -1.0, 2.0], atol=1e-12)


def test_waypoint_linear_midpoint():
    spec = TrajectorySpec(kind="waypoint-linear",
                          waypoints=((0.0, 0.0, 0.0), (2.0, 0.0, 0.0)), speed=1.0)
    truth = sample_truth([spec], dt=0.5, duration=2.0)
    mid = truth.pos[0, 2]  # t = 1.0
    assert np.allclose(mid, [1.0, 0.0, 0.0], atol=1e-12)
    # holds position after the last waypoint
    truth = sample_truth([spec], dt=0.5, duration=4.0)
    assert np.allclose(truth.pos[0, -1], [2.0, 0.0, 0.0], atol=1e-12)


@pytest.mark.parametrize("spec", [
    hover((0, 0, 1)),
    TrajectorySpec(kind="circle", radius=1.5, rate=0.8),
    TrajectorySpec(kind="lissajous", amplitude=(1.0, 0.8, 0.3), freq=(0.5, 0.4, 0.7)),
    TrajectorySpec(kind="waypoint-linear",
                   waypoints=((0, 0, 1), (2, 0, 1), (2, 2, 1.5)), speed=0.9),
])
def test_path_continuity(spec):
    dt = 0.02
    truth = sample_truth([spec], dt=dt, duration=10.0)
    step = np.linalg.norm(np.diff(truth.pos[0], axis=0), axis=1)
    assert np.all(step <= spec.max_speed() * dt + 1e-9)


def test_empty_spec_list_rejected():
    with pytest.raises(ValueError):
        sample_truth([], dt=0.1, duration=1.0)
    with pytest.raises(ValueError):
        sample_truth([hover((0, 0, 0))], dt=0.0, duration=1.0)
    with pytest.raises(ValueError):
        TrajectorySpec(kind="spiral").sample(np.arange(3.0))


# --- odometry ---------------------------------------------------------------


def moving_truth(n_samples=200, dt=0.05):
    spec = TrajectorySpec(kind="lissajous", center=(0, 0, 1.0),
                          amplitude=(1.0, 0.7, 0.3), freq=(0.6, 0.5, 0.8),
                          yaw_initial=0.3, yaw_rate=0.1)
    return sample_truth([spec], dt=dt, duration=(n_samples - 1) * dt)


def test_vio_zero_noise_matches_truth_in_start_frame():
    truth = moving_truth()
    stream = gen_vio(truth, 0, ZERO_NOISE)
    start = truth.pose(0, 0)
    for idx in (0, 1, 57, truth.n_samples - 1):
        expected = geo.relative(start, truth.pose(0, idx))
        got = stream.pose_at(idx)
        assert np.allclose(got.t, expected.t, atol=1e-9)
        assert abs(geo.wrap_angle(got.yaw - expected.yaw)) < 1e-9
    # measured deltas equal true deltas exactly
    for idx in (1, 100):
        expected = geo.relative(truth.pose(0, idx - 1), truth.pose(0, idx))
        got = stream.delta_at(idx)
        assert np.allclose(got.t, expected.t, atol=1e-12)


def test_vio_hover_zero_noise_is_identity_deltas():
    truth = sample_truth([hover((1, 1, 1), yaw=0.5)], dt=0.1, duration=5.0)
    stream = gen_vio(truth, 0, ZERO_NOISE)
    assert np.all(stream.delta == 0.0)
    assert np.all(stream.pose == 0.0)


def test_vio_random_walk_statistics():
    # 1000 hover steps with 0.01 m/step noise: the final position of each run
    # is a 3D random walk; per-axis std should approach 0.01 * sqrt(1000)
    noise_scale = 0.01
    steps = 1000
    truth = sample_truth([hover((0, 0, 1))], dt=0.01, duration=steps * 0.01)
    finals = np.empty((500, 3))
    for run in range(500):
        cfg = NoiseConfig(sigma_vio_t=noise_scale, sigma_vio_yaw=0.0, rng_seed=run)
        finals[run] = gen_vio(truth, 0, cfg).pose[-1, :3]
    expected = noise_scale * math.sqrt(steps)
    std = finals.std(axis=0)
    assert np.all(np.abs(std - expected) < 0.15 * expected)


def test_vio_requires_two_samples():
    truth = GroundTruth(times=np.zeros(1), pos=np.zeros((1, 1, 3)),
                        yaw=np.zeros((1, 1)), dt=0.1)
    with pytest.raises(ValueError):
        gen_vio(truth, 0, ZERO_NOISE)


# --- ranging ----------------------------------------------------------------


def two_drone_truth(d2=(3.0, 4.0, 0.0), n=3):
    return sample_truth([hover((0, 0, 0)), hover(d2)], dt=0.1, duration=(n - 1) * 0.1)


def test_distance_3_4_5():
    truth = two_drone_truth()
    dists = gen_distances(truth, ZERO_NOISE, t_idx=0)
    assert dists == {(0, 1): pytest.approx(5.0)}


def test_distance_full_dropout():
    truth = two_drone_truth()
    cfg = NoiseConfig(range_dropout_prob=1.0)
    assert gen_distances(truth, cfg, t_idx=1) == {}


def test_distance_moment_check():
    # 10^4 seeded draws of one fixed pair: mean within 0.005, std within 10%
    truth = sample_truth([hover((0, 0, 0)), hover((3, 4, 0))], dt=0.01, duration=99.99)
    cfg = NoiseConfig(sigma_d=0.1, rng_seed=7)
    frames = gen_distances(truth, cfg)
    draws = np.array([f[(0, 1)] for f in frames])
    assert len(draws) >= 10_000
    assert abs(draws.mean() - 5.0) < 0.005
    assert abs(draws.std() - 0.1) < 0.01


def test_distance_negative_clamped():
    truth = sample_truth([hover((0, 0, 0)), hover((1e-4, 0, 0))], dt=0.1, duration=10.0)
    cfg = NoiseConfig(sigma_d=0.5, rng_seed=3)
    frames = gen_distances(truth, cfg)
    vals = np.array([f[(0, 1)] for f in frames if (0, 1) in f])
    assert np.all(vals >= 0.0)


# --- detections ---------------------------------------------------------------


def test_detection_behind_observer_not_seen():
    # drone 1 sits at body-frame x < 0 for drone 0; drone 1 itself faces +y
    truth = sample_truth([hover((0, 0, 0), yaw=0.0), hover((-2, 0, 0), yaw=math.pi / 2)],
                         dt=0.1, duration=0.1)
    cfg = NoiseConfig(sigma_det=0.0, fov_half_angle=math.radians(45))
    assert gen_detections(truth, cfg, t_idx=0) == []


def test_detection_straight_ahead():
    truth = sample_truth([hover((0, 0, 0), yaw=0.0), hover((2, 0, 0))], dt=0.1, duration=0.1)
    cfg = NoiseConfig(sigma_det=0.0, det_size_const=0.3)
    dets = gen_detections(truth, cfg, t_idx=0)
    mine = [d for d in dets if d.observer == 0]
    assert len(mine) == 1
    assert np.allclose(mine[0].rel_t, [2.0, 0.0, 0.0], atol=1e-12)
    assert mine[0].apparent_size == pytest.approx(0.3 / 2.0)


def test_detection_count_matches_brute_force_cone_oracle():
    rng = np.random.default_rng(5)
    specs = [TrajectorySpec(kind="circle",
                            center=(2.5 * math.cos(a), 2.5 * math.sin(a), 1.0 + 0.1 * k),
                            radius=0.8, rate=0.4, phase=float(rng.uniform(0, 6)),
                            yaw_initial=float(geo.wrap_angle(a + math.pi)))
             for k, a in enumerate(np.linspace(0, 2 * math.pi, 5, endpoint=False))]
    truth = sample_truth(specs, dt=0.1, duration=8.0)
    cfg = NoiseConfig(sigma_det=0.0, fov_half_angle=math.radians(45), det_max_range=8.0)
    frames = gen_detections(truth, cfg)

    for t in range(truth.n_samples):
        expected = 0
        for i in range(5):
            for j in range(5):
                if i == j:
                    continue
                rel = truth.pos[j, t] - truth.pos[i, t]
                body = geo.rot_z(-truth.yaw[i, t]) @ rel
                r = np.linalg.norm(body)
                ang = math.acos(np.clip(body[0] / r, -1, 1))
                if r <= 8.0 and ang <= math.radians(45):
                    expected += 1
        assert len(frames[t]) == expected


def test_detection_miss_prob_one_blinds_everyone():
    truth = two_drone_truth(d2=(2.0, 0.0, 0.0))
    cfg = NoiseConfig(det_miss_prob=1.0)
    assert gen_detections(truth, cfg, t_idx=0) == []


def test_detection_record_is_anonymous():
    d = DetectionMeas(2, np.array([1.0, 0.5, -0.1]), 0.15)
    rec = d.to_record()
    assert set(rec) == {"observer", "rel_t", "apparent_size"}
    back = DetectionMeas.from_record(rec)
    assert back.observer == 2 and np.allclose(back.rel_t, d.rel_t)


# --- cross-cutting ------------------------------------------------------------


def test_streams_deterministic_under_seed():
    spec = [TrajectorySpec(kind="circle", radius=1.0, rate=0.6),
            TrajectorySpec(kind="lissajous", center=(2.5, 0, 1))]
    truth = sample_truth(spec, dt=0.05, duration=5.0)
    cfg = NoiseConfig(sigma_d=0.1, sigma_det=0.05, sigma_vio_t=0.01,
                      range_dropout_prob=0.2, det_miss_prob=0.1, rng_seed=99)
    a = MeasurementStreams.generate(truth, cfg)
    b = MeasurementStreams.generate(truth, cfg)
    for i in range(2):
        assert np.array_equal(a.vio[i].delta, b.vio[i].delta)
        assert np.array_equal(a.vio[i].pose, b.vio[i].pose)
    assert a.distances == b.distances
    for da, db in zip(a.detections, b.detections):
        assert len(da) == len(db)
        for x, y in zip(da, db):
            assert x.observer == y.observer and np.array_equal(x.rel_t, y.rel_t)


def test_noiseless_streams_have_zero_residual_at_truth():
    spec = [TrajectorySpec(kind="lissajous", center=(0, 0, 1), yaw_rate=0.2),
            TrajectorySpec(kind="circle", center=(2.0, 0.5, 1.2), radius=0.7, rate=0.5)]
    truth = sample_truth(spec, dt=0.05, duration=4.0)
    streams = MeasurementStreams.generate(truth, ZERO_NOISE)

    # pick a mid-run sample and express all poses in drone 0's start frame
    t = 40
    anchor = truth.pose(0, 0)
    poses = [geo.relative(anchor, truth.pose(i, t)) for i in range(2)]
    slots01 = [poses[0].as_vec()[None, :], poses[1].as_vec()[None, :]]

    d = streams.distances[t][(0, 1)]
    assert abs(DISTANCE.evaluate(slots01, np.array([[d]]))[0, 0]) < 1e-9

    for det in streams.detections[t]:
        obs = det.observer
        tgt = 1 - obs
        slots = [poses[obs].as_vec()[None, :], poses[tgt].as_vec()[None, :]]
        r = DETECTION.evaluate(slots, det.rel_t[None, :])[0]
        assert np.allclose(r, 0.0, atol=1e-9)

    prev = [geo.relative(anchor, truth.pose(i, t - 1)) for i in range(2)]
    for i in range(2):
        z = streams.vio[i].delta[t]
        r = VIO.evaluate([prev[i].as_vec()[None, :], poses[i].as_vec()[None, :]],
                         z[None, :])[0]
        assert np.allclose(r, 0.0, atol=1e-9)
