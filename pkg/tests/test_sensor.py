import math

import numpy as np
import pytest

from hdaland.dynamics import GeometryError, LanderState
from hdaland.sensor import (
    ObservationFrame,
    SensorParams,
    fov_width,
    generate_observation,
    lattice,
    slant_geometry,
)

FIELD = np.full((1001, 1001), 0.5)


def lander_at(x, y, z):
    return LanderState([x, y, z], [0.0, 0.0, -20.0], 1190.0, 12.5)


def test_fov_width_examples():
    assert fov_width(0.0, 11.4) == 0.0
    # 500 * tan(11.4 deg) evaluated independently
    assert fov_width(500.0, 11.4) == pytest.approx(100.8177, abs=0.01)
    assert fov_width(1000.0, 11.4) == pytest.approx(2 * fov_width(500.0, 11.4), rel=1e-15)
    with pytest.raises(ValueError):
        fov_width(-1.0, 11.4)


def test_slant_geometry_examples():
    assert slant_geometry([0, 0, 0], lander_at(0, 0, 100)) == pytest.approx((100.0, 90.0))
    assert slant_geometry([0, 0, 0], lander_at(100, 0, 100)) == pytest.approx((141.42, 45.0), abs=0.01)
    assert slant_geometry([0, 0, 0], lander_at(100, 0, 36.4))[1] == pytest.approx(20.0, abs=0.01)
    with pytest.raises(GeometryError):
        slant_geometry([0, 0, 5], lander_at(0, 0, 5))


def test_frame_width_is_exact_and_linear():
    target = np.array([10.0, -20.0, 0.0])
    lander = lander_at(60.0, 40.0, 480.0)
    frame = generate_observation(FIELD, lander, target, rng=0)
    r_s = float(np.linalg.norm(lander.r - target))
    assert abs(frame.w_x - r_s * math.tan(math.radians(11.4))) <= 1e-9
    assert frame.w_x == frame.w_y
    half = generate_observation(FIELD, lander_at(35.0, 10.0, 240.0), target, rng=0)
    assert half.w_x == pytest.approx(0.5 * frame.w_x, rel=1e-12)
    xs, ys = frame.pixel_centers()
    step = frame.w_x / 64
    assert xs[0, 0] == pytest.approx(target[0] - 0.5 * frame.w_x + 0.5 * step)
    assert ys[-1, 0] == pytest.approx(target[1] + 0.5 * frame.w_y - 0.5 * step)


def test_noise_std_at_500m():
    lander = lander_at(0.0, 0.0, 500.0)
    rng = np.random.default_rng(2024)
    samples = [generate_observation(FIELD, lander, [0, 0, 0], rng=rng).o_p for _ in range(25)]
    dev = np.stack(samples) - 0.5
    assert dev.size >= 100_000
    assert np.std(dev) == pytest.approx(0.05, rel=0.05)
    assert abs(np.mean(dev)) < 1e-3


def test_sixty_degree_elevation_is_masked():
    # target seen at exactly 60 deg elevation; the whole footprint sits below 70 deg
    dz = 100.0
    lander = lander_at(dz / math.tan(math.radians(60.0)), 0.0, dz)
    frame = generate_observation(np.ones((1001, 1001)), lander, [0, 0, 0], rng=1)
    assert np.all(frame.o_p == 0.0)


def test_mask_boundary_and_monotonicity():
    params = SensorParams(noise_sigma_slope=0.0)
    ones = np.ones((1001, 1001))
    lander = lander_at(30.0, 0.0, 100.0)
    frame = generate_observation(ones, lander, [0, 0, 0], params, rng=0)
    xs, ys = frame.pixel_centers()
    elev = np.degrees(np.arctan2(100.0, np.hypot(xs - 30.0, ys)))
    assert np.array_equal(frame.o_p == 1.0, elev >= 70.0)
    assert 0 < np.count_nonzero(frame.o_p) < frame.o_p.size
    lower = generate_observation(ones, lander_at(30.0, 0.0, 90.0), [0, 0, 0], params, rng=0)
    # same pixel lattice is not shared, so compare visible fraction instead of cells
    assert np.count_nonzero(lower.o_p) <= np.count_nonzero(frame.o_p)


def test_nearest_neighbour_resampling_without_noise():
    params = SensorParams(noise_sigma_slope=0.0)
    v_p = np.random.default_rng(3).random((201, 201))
    frame = generate_observation(v_p, lander_at(0.0, 0.0, 300.0), [4.3, -7.9, 0.0], params, rng=0)
    xs, ys = frame.pixel_centers()
    rows = np.floor(ys + 100 + 0.5).astype(int)
    cols = np.floor(xs + 100 + 0.5).astype(int)
    assert np.array_equal(frame.o_p, v_p[rows, cols])


def test_out_of_field_pixels_are_zero():
    params = SensorParams(noise_sigma_slope=0.0)
    frame = generate_observation(np.ones((101, 101)), lander_at(50.0, 0.0, 400.0), [50.0, 0.0, 0.0], params, rng=0)
    xs, _ = frame.pixel_centers()
    outside = np.floor(xs + 50 + 0.5) > 100
    assert outside.any() and np.all(frame.o_p[outside] == 0.0)
    assert np.all(frame.o_p[~outside] == 1.0)


def test_pixels_in_unit_interval_and_seeded():
    lander = lander_at(0.0, 0.0, 950.0)
    a = generate_observation(FIELD, lander, [0, 0, 0], rng=9).o_p
    b = generate_observation(FIELD, lander, [0, 0, 0], rng=9).o_p
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_lattice_is_axis_aligned():
    xs, ys = lattice((0.0, 0.0), 64.0, 64.0, 64)
    assert np.all(xs[0] == xs[-1]) and np.all(ys[:, 0] == ys[:, -1])


def test_frame_save_load(tmp_path, rng):
    frame = generate_observation(FIELD, lander_at(5.0, 5.0, 700.0), [1.0, 2.0, 0.0], rng=rng)
    frame.save(tmp_path / "f")
    back = ObservationFrame.load(tmp_path / "f")
    assert np.array_equal(back.o_p, frame.o_p.astype(np.float32).astype(float))
    assert back.w_x == frame.w_x and back.center == frame.center
    assert np.array_equal(back.lander_snapshot.r, frame.lander_snapshot.r)
    assert back.timestamp == frame.timestamp
