"""Spherical coordinate helpers and the uniform lon/lat grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_KM = 6371.0


def normalize_lon(lon: float) -> float:
    """Wrap a longitude into [-180, 180). 180 maps to -180."""
    wrapped = (lon + 180.0) % 360.0 - 180.0
    # float modulo can round up to exactly 180
    return -180.0 if wrapped >= 180.0 else wrapped


def valid_position(lon: float, lat: float) -> bool:
    return (
        math.isfinite(lon)
        and math.isfinite(lat)
        and -180.0 <= lon <= 180.0
        and -90.0 <= lat <= 90.0
    )


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValueError(f"non-finite coordinate ({self.lon}, {self.lat})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        object.__setattr__(self, "lon", normalize_lon(float(self.lon)))
        object.__setattr__(self, "lat", float(self.lat))


@dataclass(frozen=True)
class GridSpec:
    cell_size: float = 1.0

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        for span in (360.0, 180.0):
            ratio = span / self.cell_size
            if abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"{span} is not an integer multiple of cell_size={self.cell_size}")

    @property
    def n_cols(self) -> int:
        return int(round(360.0 / self.cell_size))

    @property
    def n_rows(self) -> int:
        return int(round(180.0 / self.cell_size))


@dataclass(frozen=True)
class GridCell:
    col: int
    row: int
    center: GeoPoint = field(compare=False)

    @property
    def key(self) -> tuple[int, int]:
        return (self.col, self.row)


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    return haversine_km_raw(a.lon, a.lat, b.lon, b.lat)


def haversine_km_raw(lon1: float, lat1: float, lon2: float, lat2: float) -> float:
    """Great-circle distance on plain floats (degrees), for hot loops."""
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    h = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_km_array(lon1, lat1, lon2, lat2) -> np.ndarray:
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(v, dtype=float)) for v in (lon1, lat1, lon2, lat2))
    h = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def cell_index(lon: float, lat: float, cell_size: float = 1.0) -> tuple[int, int]:
    n_cols = int(round(360.0 / cell_size))
    n_rows = int(round(180.0 / cell_size))
    lon = normalize_lon(lon)
    col = int(math.floor((lon + 180.0) / cell_size))
    row = int(math.floor((lat + 90.0) / cell_size))
    # the shifted coordinate can round up onto the next edge (e.g. lat = -1e-160)
    if col > 0 and lon < col * cell_size - 180.0:
        col -= 1
    if row > 0 and lat < row * cell_size - 90.0:
        row -= 1
    # lat = 90 belongs to the top row
    return min(col, n_cols - 1), min(row, n_rows - 1)


def cell_center(col: int, row: int, cell_size: float = 1.0) -> GeoPoint:
    return GeoPoint((col + 0.5) * cell_size - 180.0, (row + 0.5) * cell_size - 90.0)


def cell_of(p: GeoPoint, spec: GridSpec = GridSpec()) -> GridCell:
    col, row = cell_index(p.lon, p.lat, spec.cell_size)
    return GridCell(col, row, cell_center(col, row, spec.cell_size))


def cell_bounds(cell: GridCell, spec: GridSpec = GridSpec()) -> tuple[float, float, float, float]:
    """(lon_min, lat_min, lon_max, lat_max) of a cell."""
    lon0 = cell.col * spec.cell_size - 180.0
    lat0 = cell.row * spec.cell_size - 90.0
    return lon0, lat0, lon0 + spec.cell_size, lat0 + spec.cell_size


def _unwrapped_lons(polygon) -> np.ndarray:
    lons = np.array([p.lon for p in polygon], dtype=float)
    ref = lons[0]
    return ref + (lons - ref + 180.0) % 360.0 - 180.0


def polygon_area_km2(polygon) -> float:
    """Area of a simple polygon with great-circle edges, by spherical excess.

    Sums the signed excess of the triangle each edge forms with the pole.
    """
    if len(polygon) < 3:
        raise ValueError("polygon needs at least 3 vertices")
    lons = np.radians(_unwrapped_lons(polygon))
    lats = np.radians(np.array([p.lat for p in polygon], dtype=float))
    lon2 = np.roll(lons, -1)
    lat2 = np.roll(lats, -1)
    t1 = np.tan(lats / 2.0)
    t2 = np.tan(lat2 / 2.0)
    excess = 2.0 * np.arctan2(np.tan((lon2 - lons) / 2.0) * (t1 + t2), 1.0 + t1 * t2)
    return float(abs(excess.sum())) * EARTH_RADIUS_KM**2


def polygon_center(polygon) -> GeoPoint:
    """Planar area centroid in lon/lat degrees; adequate for port-sized polygons."""
    x = _unwrapped_lons(polygon)
    y = np.array([p.lat for p in polygon], dtype=float)
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    cross = x * y2 - x2 * y
    a = cross.sum() / 2.0
    if abs(a) < 1e-15:
        return GeoPoint(float(x.mean()), float(y.mean()))
    cx = ((x + x2) * cross).sum() / (6.0 * a)
    cy = ((y + y2) * cross).sum() / (6.0 * a)
    return GeoPoint(float(cx), float(cy))


def destination_point(origin: GeoPoint, bearing_deg: float, distance_km: float) -> GeoPoint:
    """Point reached by travelling along a great circle from ``origin``."""
    p1 = math.radians(origin.lat)
    l1 = math.radians(origin.lon)
    b = math.radians(bearing_deg)
    delta = distance_km / EARTH_RADIUS_KM
    p2 = math.asin(math.sin(p1) * math.cos(delta) + math.cos(p1) * math.sin(delta) * math.cos(b))
    l2 = l1 + math.atan2(
        math.sin(b) * math.sin(delta) * math.cos(p1),
        math.cos(delta) - math.sin(p1) * math.sin(p2),
    )
    return GeoPoint(math.degrees(l2), max(-90.0, min(90.0, math.degrees(p2))))


def initial_bearing(lon1: float, lat1: float, lon2: float, lat2: float) -> float:
    """Initial great-circle course from point 1 to point 2, degrees in [0, 360)."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    y = math.sin(dl) * math.cos(p2)
    x = math.cos(p1) * math.sin(p2) - math.sin(p1) * math.cos(p2) * math.cos(dl)
    return math.degrees(math.atan2(y, x)) % 360.0


def to_unit_vectors(lon, lat) -> np.ndarray:
    lon = np.radians(np.asarray(lon, dtype=float))
    lat = np.radians(np.asarray(lat, dtype=float))
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def from_unit_vectors(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    lat = np.degrees(np.arcsin(np.clip(v[..., 2], -1.0, 1.0)))
    lon = np.degrees(np.arctan2(v[..., 1], v[..., 0]))
    lon = (lon + 180.0) % 360.0 - 180.0
    return lon, lat
