import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from waydest.geo import (
    EARTH_RADIUS_KM,
    GeoPoint,
    GridSpec,
    cell_bounds,
    cell_center,
    cell_of,
    destination_point,
    haversine_km,
    haversine_km_array,
    initial_bearing,
    normalize_lon,
    polygon_area_km2,
    polygon_center,
)

lons = st.floats(-180.0, 179.999999, allow_nan=False)
lats = st.floats(-90.0, 90.0, allow_nan=False)
points = st.builds(GeoPoint, lons, lats)


def central_angle_cosines(a: GeoPoint, b: GeoPoint) -> float:
    """Spherical law of cosines, an independent route to the central angle."""
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dl = math.radians(b.lon - a.lon)
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return math.acos(max(-1.0, min(1.0, c)))


def test_haversine_identity():
    assert haversine_km(GeoPoint(0, 0), GeoPoint(0, 0)) == 0.0


def test_haversine_one_degree_equator():
    assert haversine_km(GeoPoint(0, 0), GeoPoint(1, 0)) == pytest.approx(2 * math.pi * 6371.0 / 360, rel=1e-12)
    assert haversine_km(GeoPoint(0, 0), GeoPoint(1, 0)) == pytest.approx(111.195, abs=1e-3)


def test_haversine_over_pole():
    d = haversine_km(GeoPoint(0, 89), GeoPoint(180, 89))
    oracle = central_angle_cosines(GeoPoint(0, 89), GeoPoint(180, 89)) * EARTH_RADIUS_KM
    assert d == pytest.approx(oracle, rel=1e-9)
    assert d == pytest.approx(222.39, abs=0.01)


@given(points, points)
def test_haversine_symmetric_nonnegative(a, b):
    d = haversine_km(a, b)
    assert d >= 0
    assert d == haversine_km(b, a)


@given(points, points, points)
def test_haversine_triangle_inequality(a, b, c):
    assert haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-9


def test_haversine_array_matches_scalar():
    rng = np.random.default_rng(1)
    lo = rng.uniform(-180, 180, 50)
    la = rng.uniform(-90, 90, 50)
    arr = haversine_km_array(lo, la, 10.0, 20.0)
    for x, y, d in zip(lo, la, arr):
        assert d == pytest.approx(haversine_km(GeoPoint(x, y), GeoPoint(10, 20)), rel=1e-12, abs=1e-9)


@pytest.mark.parametrize(
    "lon,lat,cell,center",
    [
        (3.7, 52.4, (183, 142), (3.5, 52.5)),
        (-0.5, -0.5, (179, 89), (-0.5, -0.5)),
        (179.999, 0.0, (359, 90), (179.5, 0.5)),
    ],
)
def test_cell_of_examples(lon, lat, cell, center):
    c = cell_of(GeoPoint(lon, lat))
    assert c.key == cell
    assert (c.center.lon, c.center.lat) == pytest.approx(center)


def test_cell_of_north_pole_top_row():
    assert cell_of(GeoPoint(0.0, 90.0)).row == 179
    assert cell_of(GeoPoint(0.0, 90.0), GridSpec(2.0)).row == 89


def test_antimeridian_wraps():
    assert normalize_lon(180.0) == -180.0
    assert GeoPoint(180.0, 0.0).lon == -180.0
    assert cell_of(GeoPoint(180.0, 0.0)).col == 0


def test_invalid_latitude_rejected():
    with pytest.raises(ValueError):
        GeoPoint(0.0, 90.5)


@pytest.mark.parametrize("size", [0.0, -1.0, 0.7])
def test_gridspec_validation(size):
    with pytest.raises(ValueError):
        GridSpec(size)


@given(points, st.sampled_from([0.5, 1.0, 2.0, 5.0]))
def test_point_inside_its_cell(p, size):
    spec = GridSpec(size)
    c = cell_of(p, spec)
    lon0, lat0, lon1, lat1 = cell_bounds(c, spec)
    assert lon0 <= p.lon < lon1 or math.isclose(p.lon, lon1)
    assert lat0 <= p.lat <= lat1
    assert 0 <= c.col < spec.n_cols and 0 <= c.row < spec.n_rows


@given(points, st.sampled_from([0.5, 1.0, 2.0]))
def test_cell_idempotent_under_center(p, size):
    spec = GridSpec(size)
    c = cell_of(p, spec)
    assert cell_of(c.center, spec) == c
    assert cell_center(c.col, c.row, size) == c.center


def test_polygon_area_small_square():
    # a 0.1 degree square at the equator is almost planar
    side = 0.1 * 2 * math.pi * EARTH_RADIUS_KM / 360
    poly = [GeoPoint(0, 0), GeoPoint(0.1, 0), GeoPoint(0.1, 0.1), GeoPoint(0, 0.1)]
    assert polygon_area_km2(poly) == pytest.approx(side * side, rel=1e-4)


def test_polygon_area_octant():
    # one eighth of the sphere, exactly
    poly = [GeoPoint(0, 0), GeoPoint(90, 0), GeoPoint(0, 90)]
    assert polygon_area_km2(poly) == pytest.approx(4 * math.pi * EARTH_RADIUS_KM**2 / 8, rel=1e-9)


def test_polygon_area_orientation_free():
    poly = [GeoPoint(10, 10), GeoPoint(10.2, 10), GeoPoint(10.2, 10.3), GeoPoint(10, 10.3)]
    assert polygon_area_km2(poly) == pytest.approx(polygon_area_km2(poly[::-1]), rel=1e-12)


def test_polygon_center_across_antimeridian():
    poly = [GeoPoint(179.9, 0), GeoPoint(-179.9, 0), GeoPoint(-179.9, 0.2), GeoPoint(179.9, 0.2)]
    c = polygon_center(poly)
    assert abs(normalize_lon(c.lon + 180.0)) < 1e-9 or abs(abs(c.lon) - 180.0) < 1e-9
    assert c.lat == pytest.approx(0.1)


@given(points, st.floats(0, 360), st.floats(1, 2000))
def test_destination_point_distance(p, bearing, dist):
    if abs(p.lat) > 89:
        return
    q = destination_point(p, bearing, dist)
    assert haversine_km(p, q) == pytest.approx(dist, rel=1e-6)


def test_initial_bearing_cardinal():
    assert initial_bearing(0, 0, 0, 10) == pytest.approx(0.0)
    assert initial_bearing(0, 0, 10, 0) == pytest.approx(90.0)
    assert initial_bearing(0, 0, -10, 0) == pytest.approx(270.0)
