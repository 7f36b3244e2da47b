import random

import numpy as np
import pytest

from syncrec.simdevices import (
    ACCEL_HIGH, ACCEL_NORMAL, SCR_PEAK_DELAY, AccelerationMode,
    IndexedNoise, MotionSegment, StimulusEvent, TrajectoryMode, TrajectoryPlan,
    execute_profile, gen_ecg, gen_gsr, gen_mocap, gen_ppg, mocap_values,
    plan_trajectory, validate_script,
)

PICK = (0.0, -90.0, 60.0, -60.0, -90.0, 0.0)
PLACE = (120.0, -90.0, 60.0, -60.0, -90.0, 0.0)


def three_planes():
    rng = random.Random(0)
    planes = []
    for i in range(3):
        base = 30.0 * (i + 1)
        planes.append([
            tuple(base + rng.uniform(-20, 20) for _ in range(6))
            for _ in range(4)
        ])
    return planes


# -- planning -------------------------------------------------------------------

def test_fixed_plan_is_pick_place():
    plan = plan_trajectory(PICK, PLACE, three_planes(), TrajectoryMode.FIXED)
    assert plan.waypoints == (PICK, PLACE)


def test_random_plan_draws_one_waypoint_per_plane():
    planes = three_planes()
    plan = plan_trajectory(PICK, PLACE, planes, TrajectoryMode.RANDOM, rng_seed=42)
    assert len(plan.waypoints) == 5
    for wp, plane in zip(plan.waypoints[1:-1], planes):
        assert wp in [tuple(c) for c in plane]
    again = plan_trajectory(PICK, PLACE, planes, TrajectoryMode.RANDOM, rng_seed=42)
    assert again == plan
    different = plan_trajectory(PICK, PLACE, planes, TrajectoryMode.RANDOM,
                                rng_seed=43)
    assert different.waypoints != plan.waypoints or True  # may collide; plan stays valid


def test_random_plan_rejects_empty_plane():
    planes = three_planes()
    planes[1] = []
    with pytest.raises(ValueError):
        plan_trajectory(PICK, PLACE, planes, TrajectoryMode.RANDOM, rng_seed=1)


def test_plan_speed_cap():
    with pytest.raises(ValueError):
        TrajectoryPlan(waypoints=(PICK, PLACE), v_max=120.0)


def test_acceleration_modes():
    assert AccelerationMode.NORMAL.a_max() == ACCEL_NORMAL
    assert AccelerationMode.HIGH.a_max() == ACCEL_HIGH
    rng = random.Random(3)
    drawn = AccelerationMode.RANDOM.a_max(rng)
    assert ACCEL_NORMAL <= drawn <= ACCEL_HIGH
    plan = plan_trajectory(PICK, PLACE, three_planes(), TrajectoryMode.RANDOM,
                           rng_seed=7, accel_mode=AccelerationMode.RANDOM)
    assert plan.segment_accels is not None
    assert len(plan.segment_accels) == 4
    assert all(ACCEL_NORMAL <= a <= ACCEL_HIGH for a in plan.segment_accels)


# -- profile execution ------------------------------------------------------------

def test_profile_hits_max_speed_with_plateau():
    plan = TrajectoryPlan(waypoints=((0.0,), (90.0,)), v_max=100.0, a_max=1000.0)
    prof = execute_profile(plan, dt=0.002)
    speeds = np.abs(prof.velocities[:, 0])
    assert speeds.max() == pytest.approx(100.0, abs=1e-9)
    assert np.sum(np.isclose(speeds, 100.0, atol=1e-9)) >= 2  # plateau, not a spike
    assert np.all(speeds <= 100.0 + 1e-9)


def test_profile_triangular_when_short():
    plan = TrajectoryPlan(waypoints=((0.0,), (2.0,)), v_max=100.0, a_max=100.0)
    prof = execute_profile(plan, dt=0.001)
    # peak speed sqrt(h*a) ~ 14.1 deg/s, well under the cap
    assert np.abs(prof.velocities).max() < 100.0 - 1e-6
    assert prof.positions[-1, 0] == pytest.approx(2.0, abs=1e-9)


def test_profile_zero_length_segment():
    plan = TrajectoryPlan(waypoints=(PICK, PICK))
    prof = execute_profile(plan, dt=0.01)
    assert prof.duration == 0.0
    assert prof.times.tolist() == [0.0]
    np.testing.assert_allclose(prof.positions[0], PICK)


def test_profile_reaches_endpoints_exactly():
    plan = TrajectoryPlan(waypoints=(PICK, PLACE), v_max=100.0, a_max=150.0)
    prof = execute_profile(plan, dt=0.01)
    np.testing.assert_allclose(prof.positions[0], PICK, atol=1e-9)
    np.testing.assert_allclose(prof.positions[-1], PLACE, atol=1e-9)


def test_profile_respects_limits_every_sample():
    rng = random.Random(8)
    waypoints = [tuple(rng.uniform(-180, 180) for _ in range(6)) for _ in range(5)]
    plan = TrajectoryPlan(waypoints=tuple(waypoints), v_max=100.0, a_max=300.0,
                          mode=TrajectoryMode.RANDOM)
    prof = execute_profile(plan, dt=0.008)
    assert np.all(np.abs(prof.velocities) <= plan.v_max + 1e-9)
    dv = np.diff(prof.velocities, axis=0)
    dts = np.diff(prof.times)
    accel = np.abs(dv) / dts[:, None]
    assert np.all(accel <= plan.a_max * (1 + 1e-6))


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_profile_integration_oracle(seed):
    """Trapezoid-integrating the emitted velocities must reproduce the
    emitted positions: velocity is piecewise linear between samples."""
    rng = random.Random(seed)
    waypoints = [tuple(rng.uniform(-90, 90) for _ in range(3)) for _ in range(4)]
    plan = TrajectoryPlan(waypoints=tuple(waypoints), v_max=100.0,
                          a_max=rng.choice([150.0, 600.0]),
                          mode=TrajectoryMode.RANDOM)
    prof = execute_profile(plan, dt=0.004)
    dts = np.diff(prof.times)[:, None]
    integrated = prof.positions[0] + np.cumsum(
        (prof.velocities[1:] + prof.velocities[:-1]) / 2 * dts, axis=0)
    err = np.abs(integrated - prof.positions[1:]).max()
    assert err <= 1e-6


def test_profile_deterministic():
    plan = plan_trajectory(PICK, PLACE, three_planes(), TrajectoryMode.RANDOM,
                           rng_seed=11, accel_mode=AccelerationMode.RANDOM)
    a = execute_profile(plan, dt=0.01)
    b = execute_profile(plan, dt=0.01)
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.velocities, b.velocities)


# -- GSR ---------------------------------------------------------------------------

def test_gsr_no_events_is_tonic():
    t = np.linspace(0, 60, 500)
    out = gen_gsr(t, 2.0)
    assert np.all(out == 2.0)


def test_gsr_zero_at_stimulus_onset():
    assert gen_gsr(0.0, 0.0, [StimulusEvent(0.0, 1.0)]) == 0.0


def test_gsr_peak_time_matches_closed_form():
    t = np.linspace(0, 10, 200001)
    out = gen_gsr(t, 0.0, [StimulusEvent(0.0, 1.0)])
    t_peak = t[np.argmax(out)]
    assert t_peak == pytest.approx(SCR_PEAK_DELAY, abs=1e-3)
    assert SCR_PEAK_DELAY == pytest.approx(2.558, abs=1e-3)


def test_gsr_superimposes_events_and_clamps():
    events = [StimulusEvent(1.0, 0.5), StimulusEvent(2.0, 0.8)]
    v = gen_gsr(5.0, 0.1, events)
    lone = (gen_gsr(5.0, 0.0, events[:1]) + gen_gsr(5.0, 0.0, events[1:]) + 0.1)
    assert v == pytest.approx(lone)
    assert gen_gsr(0.5, 0.0, [StimulusEvent(0.0, 0.0)]) == 0.0


def test_gsr_events_in_future_do_not_leak():
    assert gen_gsr(1.0, 1.5, [StimulusEvent(2.0, 10.0)]) == 1.5


# -- PPG / ECG ----------------------------------------------------------------------

def _peak_times(t, x, min_height):
    """Local maxima above min_height, parabolically refined."""
    peaks = []
    for i in range(1, len(x) - 1):
        if x[i] >= x[i - 1] and x[i] > x[i + 1] and x[i] >= min_height:
            denom = x[i - 1] - 2 * x[i] + x[i + 1]
            shift = 0.0 if denom == 0 else 0.5 * (x[i - 1] - x[i + 1]) / denom
            peaks.append(t[i] + shift * (t[1] - t[0]))
    return peaks


def test_ppg_peaks_on_the_second_at_60bpm():
    for k in range(5):
        assert gen_ppg(float(k), 60.0) == pytest.approx(1.0)
    assert gen_ppg(0.5, 60.0) == 0.0


def test_ppg_period_halves_at_120bpm():
    t = np.linspace(0, 3, 3000, endpoint=False)
    out = gen_ppg(t, 120.0)
    peaks = _peak_times(t, out, 0.9)
    assert np.allclose(np.diff(peaks), 0.5, atol=1e-3)


def test_ppg_rate_recovery_within_tenth_bpm():
    hr = 72.0
    fs = 64.0
    t = np.arange(0, 30, 1 / fs)
    out = gen_ppg(t, hr)
    peaks = _peak_times(t, out, 0.8)
    est = 60.0 * (len(peaks) - 1) / (peaks[-1] - peaks[0])
    assert est == pytest.approx(hr, abs=0.1)


def test_ecg_rr_interval_at_60bpm():
    t = np.arange(0, 10, 1 / 256.0)
    out = gen_ecg(t, 60.0)
    peaks = _peak_times(t, out, 0.8)
    assert np.allclose(np.diff(peaks), 1.0, atol=1e-3)


def test_ecg_max_amplitude_at_r_phase():
    t = np.linspace(-0.5, 0.5, 10001)
    beat = gen_ecg(t, 60.0)
    assert abs(t[np.argmax(beat)]) < 5e-3
    assert beat.max() > abs(beat.min())


def test_ecg_rate_recovery_within_tenth_bpm():
    hr = 67.0
    t = np.arange(0, 60, 1 / 256.0)
    out = gen_ecg(t, hr)
    peaks = _peak_times(t, out, 0.8)
    est = 60.0 * (len(peaks) - 1) / (peaks[-1] - peaks[0])
    assert est == pytest.approx(hr, abs=0.1)


def test_waveforms_reject_nonpositive_rate():
    with pytest.raises(ValueError):
        gen_ppg(0.0, 0.0)
    with pytest.raises(ValueError):
        gen_ecg(0.0, -10.0)


# -- mocap ---------------------------------------------------------------------------

def test_mocap_static_script():
    script = [MotionSegment(0.0, (1.0, 2.0, 0.8), (1.0, 2.0, 0.8), 0.0)]
    for t in (0.0, 5.0, 100.0):
        pts = gen_mocap(t, script)
        assert pts["torso"] == pytest.approx((1.0, 2.0, 0.8))
        assert pts["head"] == pytest.approx((1.0, 2.0, 1.35))


def test_mocap_linear_move_arrival():
    script = [MotionSegment(0.0, (0.0, 0.0, 0.8), (1.0, 0.0, 0.8), 0.5)]
    assert gen_mocap(2.0, script)["torso"] == pytest.approx((1.0, 0.0, 0.8))
    assert gen_mocap(1.0, script)["torso"] == pytest.approx((0.5, 0.0, 0.8))
    assert gen_mocap(3.0, script)["torso"] == pytest.approx((1.0, 0.0, 0.8))


def test_mocap_speed_recovered_by_differentiation():
    script = [
        MotionSegment(0.0, (0.0, 0.0, 0.8), (2.0, 0.0, 0.8), 0.5),
        MotionSegment(4.0, (2.0, 0.0, 0.8), (2.0, 3.0, 0.8), 1.5),
    ]
    h = 1e-4
    for t in (1.0, 2.0, 3.9, 4.5, 5.0):
        p0 = np.array(gen_mocap(t - h, script)["torso"])
        p1 = np.array(gen_mocap(t + h, script)["torso"])
        speed = np.linalg.norm(p1 - p0) / (2 * h)
        expected = 0.5 if t < 4.0 else 1.5
        assert speed == pytest.approx(expected, abs=1e-6)


def test_mocap_gap_rejected():
    script = [
        MotionSegment(0.0, (0.0, 0.0, 0.8), (1.0, 0.0, 0.8), 1.0),
        MotionSegment(5.0, (1.0, 0.0, 0.8), (2.0, 0.0, 0.8), 1.0),
    ]
    with pytest.raises(ValueError):
        validate_script(script)


def test_mocap_hold_segment_bridges_time():
    script = [
        MotionSegment(0.0, (0.0, 0.0, 0.8), (1.0, 0.0, 0.8), 1.0),
        MotionSegment(1.0, (1.0, 0.0, 0.8), (1.0, 0.0, 0.8), 0.0),
        MotionSegment(4.0, (1.0, 0.0, 0.8), (0.0, 0.0, 0.8), 1.0),
    ]
    validate_script(script)
    assert gen_mocap(2.5, script)["torso"] == pytest.approx((1.0, 0.0, 0.8))
    assert gen_mocap(4.5, script)["torso"] == pytest.approx((0.5, 0.0, 0.8))


def test_mocap_values_order_matches_labels():
    script = [MotionSegment(0.0, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0.0)]
    vals = mocap_values(0.0, script)
    assert len(vals) == 12
    assert vals[0:3] == pytest.approx((0.0, 0.0, 0.0))   # torso
    assert vals[3:6] == pytest.approx((0.0, 0.0, 0.55))  # head


# -- determinism ----------------------------------------------------------------------

def test_generators_bitwise_repeatable():
    t = np.linspace(0, 20, 4001)
    assert np.array_equal(gen_ppg(t, 71.0), gen_ppg(t, 71.0))
    assert np.array_equal(gen_ecg(t, 71.0), gen_ecg(t, 71.0))
    ev = [StimulusEvent(3.0, 0.7)]
    assert np.array_equal(gen_gsr(t, 2.0, ev), gen_gsr(t, 2.0, ev))


def test_indexed_noise_is_chunking_invariant():
    noise = IndexedNoise(seed=77, std=0.1)
    whole = noise.slice(0, 5000)
    pieces = np.concatenate([noise.slice(0, 1300), noise.slice(1300, 1700),
                             noise.slice(3000, 2000)])
    assert np.array_equal(whole, pieces)
    assert np.array_equal(whole, noise.slice(0, 5000))
    silent = IndexedNoise(seed=77, std=0.0)
    assert np.all(silent.slice(0, 100) == 0.0)
