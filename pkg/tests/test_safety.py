import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdaland.safety import (
    BoundaryError,
    LanderGeometry,
    SafetyThresholds,
    compute_safety_maps,
    roughness,
    roughness_to_probability,
    worst_case_slope,
)
from hdaland.terrain import Dem, stamp_boulder

from oracles import brute_force_safety

GEOM = LanderGeometry()


def plane_dem(n, angle_deg, azimuth_deg=0.0):
    ii, jj = np.mgrid[0:n, 0:n].astype(float)
    t = math.tan(math.radians(angle_deg))
    a = math.radians(azimuth_deg)
    return Dem(t * (math.cos(a) * jj + math.sin(a) * ii))


def test_flat_terrain_is_safe_inside_and_unsafe_on_border():
    maps = compute_safety_maps(Dem(np.zeros((40, 40))))
    m = 2
    assert np.all(maps.v_d[m:-m, m:-m] == 1) and np.all(maps.v_p[m:-m, m:-m] == 1)
    border = np.ones((40, 40), bool)
    border[m:-m, m:-m] = False
    assert np.all(maps.v_d[border] == 0) and np.all(maps.v_p[border] == 0)


@pytest.mark.parametrize("azimuth", [0.0, 30.0, 90.0])
def test_steep_plane_is_unsafe_everywhere(azimuth):
    maps = compute_safety_maps(plane_dem(40, 15.0, azimuth))
    assert not maps.v_d.any() and not maps.v_p.any()


def test_tilted_plane_slope_is_exact():
    dem = plane_dem(20, 5.0)
    assert worst_case_slope(dem, (10, 10), GEOM) == pytest.approx(5.0, abs=1e-9)
    assert roughness(dem, (10, 10), 0.3, GEOM) == pytest.approx(0.0, abs=1e-9)


def test_single_boulder_roughness():
    dem = stamp_boulder(Dem(np.zeros((41, 41))), (0.0, 0.0), 1.0)
    # pads sit 2 m out on flat ground; the 0.5 m bump is the deviation
    assert roughness(dem, (20, 20), 0.0, GEOM) == pytest.approx(0.5)
    maps = compute_safety_maps(dem)
    assert maps.v_d[20, 20] == 0
    assert maps.v_p[20, 20] == pytest.approx(roughness_to_probability(0.5, SafetyThresholds()))


def test_probability_ramp():
    thr = SafetyThresholds(roughness_max=0.3)
    assert roughness_to_probability([0.0, 0.15, 0.3, 0.45, 1.0], thr).tolist() == pytest.approx([1, 1, 0.5, 0, 0])


def test_border_footprint_raises():
    with pytest.raises(BoundaryError):
        worst_case_slope(Dem(np.zeros((10, 10))), (1, 5), GEOM)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.01, 1.5))
def test_vectorised_maps_equal_brute_force(seed, scale):
    h = np.random.default_rng(seed).normal(scale=scale, size=(12, 12))
    maps = compute_safety_maps(Dem(h))
    v_d, v_p = brute_force_safety(h)
    assert np.array_equal(maps.v_d, v_d)
    assert np.max(np.abs(maps.v_p - v_p)) <= 1e-12


def test_scalar_and_vectorised_paths_agree(rng):
    dem = Dem(rng.normal(scale=0.2, size=(16, 16)))
    maps = compute_safety_maps(dem)
    for px in [(5, 5), (8, 11), (13, 2)]:
        slope = worst_case_slope(dem, px, GEOM)
        rough = max(roughness(dem, px, th, GEOM) for th in GEOM.orientations())
        expected = 1.0 if slope <= 10.0 and rough <= 0.3 else 0.0
        assert maps.v_d[px] == expected


def test_hazard_fraction_counts_zeros():
    maps = compute_safety_maps(Dem(np.zeros((10, 10))))
    assert maps.hazard_fraction() == pytest.approx(1 - 36 / 100)
