"""Nested grid-sequence representation of refined segments.

A segment becomes a sequence of grid elements: each element is a maximal
run of consecutive messages inside one grid cell. At training and inference
time a Poisson-sized subset of every element is sampled and turned into
local feature rows; the element centers and time offsets feed the
sinusoidal spatial and time encodings.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .annotate import Segment
from .geo import GridSpec, cell_center, cell_index

RAW_FIELDS = ("timestamp", "lon", "lat", "sog", "rot", "cog", "heading", "draught", "eta")
KINEMATIC_FIELDS = ("sog", "rot", "cog", "heading", "draught", "eta_distance")
LOCAL_FEATURES = (
    ("rel_lon", "rel_lat", "days_in_cell")
    + KINEMATIC_FIELDS
    + tuple(f"has_{f}" for f in KINEMATIC_FIELDS)
)
N_LOCAL_FEATURES = len(LOCAL_FEATURES)
DEFAULT_POISSON_LAMBDA = 5.0
LOG_PI_SQ = math.log(math.pi) ** 2
SECONDS_PER_DAY = 86400.0

_T, _LON, _LAT = 0, 1, 2


@dataclass
class GridElement:
    col: int
    row: int
    rows: np.ndarray  # (m, len(RAW_FIELDS)), time ordered, NaN marks missing
    center: tuple[float, float] = field(default=(math.nan, math.nan))

    def __len__(self):
        return len(self.rows)


@dataclass
class NestedSequence:
    elements: list[GridElement]
    departure: int
    ship_type: str
    label: int | None = None
    traj_id: str = ""
    cell_size: float = 1.0

    def __len__(self):
        return len(self.elements)

    @property
    def start_time(self) -> float:
        return float(self.elements[0].rows[0, _T])

    @property
    def n_messages(self) -> int:
        return sum(len(e) for e in self.elements)

    def prefix(self, n: int) -> NestedSequence:
        return NestedSequence(self.elements[:n], self.departure, self.ship_type, self.label, self.traj_id, self.cell_size)


def segment_rows(seg: Segment) -> np.ndarray:
    return np.array([[getattr(m, f) for f in RAW_FIELDS] for m in seg.messages], dtype=float)


def reorganize(seg: Segment, spec: GridSpec = GridSpec(), traj_id: str = "") -> NestedSequence:
    """Group consecutive same-cell messages into grid elements.

    Returning to a cell after leaving it opens a new element.
    """
    if len(seg.messages) == 0:
        raise ValueError("cannot reorganize an empty segment")
    rows = segment_rows(seg)
    keys = [cell_index(lon, lat, spec.cell_size) for lon, lat in rows[:, [_LON, _LAT]]]
    elements = []
    start = 0
    for i in range(1, len(keys) + 1):
        if i == len(keys) or keys[i] != keys[start]:
            col, row = keys[start]
            c = cell_center(col, row, spec.cell_size)
            elements.append(GridElement(col, row, rows[start:i], (c.lon, c.lat)))
            start = i
    return NestedSequence(
        elements,
        departure=int(seg.departure),
        ship_type=seg.ship_type,
        label=None if seg.destination is None else int(seg.destination),
        traj_id=traj_id,
        cell_size=spec.cell_size,
    )


def sample_count(m: int, rng: np.random.Generator, lam: float = DEFAULT_POISSON_LAMBDA) -> int:
    return int(min(max(rng.poisson(lam), 1), m))


def sample_element(element: GridElement | int, rng: np.random.Generator, lam: float = DEFAULT_POISSON_LAMBDA) -> np.ndarray:
    """Sorted indices of a Poisson-sized uniform subset (at least one, at most all)."""
    m = element if isinstance(element, int) else len(element)
    if m < 1:
        raise ValueError("element has no messages")
    k = sample_count(m, rng, lam)
    if k == m:
        return np.arange(m)
    return np.sort(rng.choice(m, size=k, replace=False))


@dataclass
class SampledSequence:
    centers: np.ndarray  # (N, 2) lon, lat degrees
    deltas: np.ndarray  # (N,) days from the trajectory start to the element's last sample
    local: list[np.ndarray]  # N arrays of shape (m_k, N_LOCAL_FEATURES)
    departure: int
    ship_type: str
    label: int | None

    def __len__(self):
        return len(self.deltas)


def kinematic_block(rows: np.ndarray) -> np.ndarray:
    """Raw (n, 6) kinematic matrix; ETA becomes days ahead of the message time."""
    eta_days = (rows[:, 8] - rows[:, _T]) / SECONDS_PER_DAY
    return np.column_stack([rows[:, 3:8], eta_days])


class FeatureScaler(TransformerMixin, BaseEstimator):
    """Standardises kinematic columns, imputes missing as 0 and appends presence flags.

    Statistics come from the data passed to ``fit`` only (the training split).
    """

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {X.shape}")
        present = np.isfinite(X)
        counts = present.sum(axis=0)
        sums = np.where(present, X, 0.0).sum(axis=0)
        mean = np.divide(sums, counts, out=np.zeros(X.shape[1]), where=counts > 0)
        sq = np.where(present, (X - mean) ** 2, 0.0).sum(axis=0)
        var = np.divide(sq, counts, out=np.zeros(X.shape[1]), where=counts > 0)
        std = np.sqrt(var)
        self.mean_ = mean
        self.scale_ = np.where(std > 1e-12, std, 1.0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected shape (n, {self.n_features_in_}), got {X.shape}")
        present = np.isfinite(X)
        z = np.where(present, (X - self.mean_) / self.scale_, 0.0)
        return np.hstack([z, present.astype(float)])

    def fit_sequences(self, sequences: Sequence[NestedSequence]):
        blocks = [kinematic_block(e.rows) for s in sequences for e in s.elements]
        return self.fit(np.vstack(blocks) if blocks else np.zeros((0, len(KINEMATIC_FIELDS))))

    def to_dict(self) -> dict:
        check_is_fitted(self, "mean_")
        return {"fields": list(KINEMATIC_FIELDS), "mean": self.mean_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> FeatureScaler:
        if list(d.get("fields", KINEMATIC_FIELDS)) != list(KINEMATIC_FIELDS):
            raise ValueError(f"scaler fields {d.get('fields')} do not match {list(KINEMATIC_FIELDS)}")
        obj = cls()
        obj.mean_ = np.asarray(d["mean"], dtype=float)
        obj.scale_ = np.asarray(d["scale"], dtype=float)
        obj.n_features_in_ = len(obj.mean_)
        return obj


def local_features(rows: np.ndarray, center: tuple[float, float], scaler: FeatureScaler) -> np.ndarray:
    """Feature rows for the sampled messages of one element."""
    rel_lon = center[0] - rows[:, _LON]
    rel_lon = (rel_lon + 180.0) % 360.0 - 180.0
    rel_lat = center[1] - rows[:, _LAT]
    days = (rows[:, _T] - rows[0, _T]) / SECONDS_PER_DAY
    return np.column_stack([rel_lon, rel_lat, days, scaler.transform(kinematic_block(rows))])


def sample_sequence(
    seq: NestedSequence,
    rng: np.random.Generator,
    scaler: FeatureScaler,
    lam: float = DEFAULT_POISSON_LAMBDA,
) -> SampledSequence:
    t0 = seq.start_time
    centers = np.array([e.center for e in seq.elements], dtype=float)
    deltas = np.empty(len(seq.elements))
    local = []
    for k, e in enumerate(seq.elements):
        rows = e.rows[sample_element(e, rng, lam)]
        deltas[k] = (rows[-1, _T] - t0) / SECONDS_PER_DAY
        local.append(local_features(rows, e.center, scaler))
    return SampledSequence(centers, deltas, local, seq.departure, seq.ship_type, seq.label)


def spatial_encode(lon_deg, lat_deg, d: int) -> np.ndarray:
    """Sinusoidal encoding of coordinates (degrees in, radians inside), shape (N, d)."""
    if d <= 0 or d % 4:
        raise ValueError(f"spatial encoding size must be a positive multiple of 4, got {d}")
    lam = np.radians(np.atleast_1d(np.asarray(lon_deg, dtype=float)))[:, None]
    phi = np.radians(np.atleast_1d(np.asarray(lat_deg, dtype=float)))[:, None]
    i = np.arange(d // 4)
    div = (2.0 * np.pi) ** (4.0 * i / d**2)
    gl = lam / div
    gp = phi / div
    out = np.empty((lam.shape[0], d))
    out[:, 0::4] = np.cos(gp) * np.sin(gl)
    out[:, 1::4] = LOG_PI_SQ * np.sin(gp)
    out[:, 2::4] = np.cos(gp) * np.cos(gl)
    out[:, 3::4] = -LOG_PI_SQ * np.sin(gp)
    return out


def time_encode(deltas, d: int) -> np.ndarray:
    """Sinusoidal encoding of real-valued day offsets, shape (N, d)."""
    if d <= 0 or d % 2:
        raise ValueError(f"time encoding size must be a positive even number, got {d}")
    delta = np.atleast_1d(np.asarray(deltas, dtype=float))[:, None]
    div = 1000.0 ** (2.0 * np.arange(d // 2) / d)
    out = np.empty((delta.shape[0], d))
    out[:, 0::2] = np.cos(delta / div)
    out[:, 1::2] = np.sin(delta / div)
    return out


class GridSequencer(TransformerMixin, BaseEstimator):
    """Turns refined segments into nested grid sequences."""

    def __init__(self, cell_size: float = 1.0):
        self.cell_size = cell_size

    def fit(self, X, y=None):
        GridSpec(self.cell_size)
        return self

    def transform(self, X):
        spec = GridSpec(self.cell_size)
        return [reorganize(seg, spec, traj_id=seg.meta.get("id", f"{seg.vessel_id}:{i}")) for i, seg in enumerate(X)]
