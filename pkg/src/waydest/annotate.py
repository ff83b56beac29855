"""Port-to-port segmentation of raw per-vessel AIS streams.

Destination text is matched against port names and UN/LOCODEs with a
Damerau-Levenshtein score, positions are tagged against circular port
boundaries, the stream is cut at port visits, and each cut piece is
validated as a single voyage.
"""

from __future__ import annotations

import logging
import math
import re
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .geo import GeoPoint, haversine_km_raw, polygon_area_km2, polygon_center, valid_position

logger = logging.getLogger(__name__)

MOVING = -1
STILL = -2

DEFAULT_THRESHOLD = 0.75
DEFAULT_ALPHA = 1.8
DEFAULT_MAX_GAP_DAYS = 3.0
DEFAULT_NGRAM = 3

_SPECIAL = re.compile(r"[^0-9A-Za-z]+")


@dataclass(slots=True)
class AisMessage:
    timestamp: float
    lon: float
    lat: float
    sog: float = math.nan
    rot: float = math.nan
    cog: float = math.nan
    heading: float = math.nan
    draught: float = math.nan
    eta: float = math.nan
    ship_type: str = ""
    vessel_id: str = ""
    destination_text: str = ""

    @property
    def pos(self) -> GeoPoint:
        return GeoPoint(self.lon, self.lat)


@dataclass
class PortRecord:
    port_id: int
    name: str
    locode: str
    polygon: list[GeoPoint]
    center: GeoPoint
    boundary_radius_km: float

    @classmethod
    def from_polygon(cls, port_id, name, locode, polygon, alpha=DEFAULT_ALPHA):
        polygon = [p if isinstance(p, GeoPoint) else GeoPoint(*p) for p in polygon]
        area = polygon_area_km2(polygon)
        radius = alpha * math.sqrt(area / math.pi)
        return cls(int(port_id), name, locode, polygon, polygon_center(polygon), radius)

    def contains(self, lon: float, lat: float) -> bool:
        return haversine_km_raw(lon, lat, self.center.lon, self.center.lat) < self.boundary_radius_km


def status_name(tag: int) -> str:
    if tag == MOVING:
        return "moving"
    if tag == STILL:
        return "still"
    return f"port:{tag}"


@dataclass
class Segment:
    """Time-ordered messages between two port cuts, with per-message tags."""

    vessel_id: str
    messages: list[AisMessage]
    tags: list[int]
    candidates: list[tuple[int, ...]]
    departure: int | None = None
    destination: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.departure is None and self.tags and self.tags[0] >= 0:
            self.departure = self.tags[0]
        if self.destination is None and self.tags and self.tags[-1] >= 0:
            self.destination = self.tags[-1]

    def __len__(self):
        return len(self.messages)

    @property
    def ship_type(self) -> str:
        return self.messages[0].ship_type if self.messages else ""

    def subset(self, keep: Sequence[int]) -> Segment:
        return Segment(
            self.vessel_id,
            [self.messages[i] for i in keep],
            [self.tags[i] for i in keep],
            [self.candidates[i] for i in keep],
            self.departure,
            self.destination,
            dict(self.meta),
        )


def regularize(expr: str, max_n: int = DEFAULT_NGRAM) -> list[str]:
    """Split free destination text into uppercase token n-grams (n = 1..max_n)."""
    tokens = _SPECIAL.sub(" ", expr or "").upper().split()
    grams = []
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            grams.append(" ".join(tokens[i : i + n]))
    return list(dict.fromkeys(grams))


def dl_distance(a: str, b: str) -> int:
    """Unrestricted Damerau-Levenshtein distance (Lowrance-Wagner).

    >>> dl_distance("KITTEN", "SITTING")
    3
    >>> dl_distance("CA", "ABC")
    2
    """
    if a == b:
        return 0
    la, lb = len(a), len(b)
    if not la:
        return lb
    if not lb:
        return la
    big = la + lb
    last_row = {}
    # d[i+1][j+1] holds the distance of a[:i], b[:j]; row/col 0 are the sentinel
    d = [[big] * (lb + 2) for _ in range(la + 2)]
    for i in range(la + 1):
        d[i + 1][1] = i
    for j in range(lb + 1):
        d[1][j + 1] = j
    for i in range(1, la + 1):
        ca = a[i - 1]
        last_match_col = 0
        row = d[i + 1]
        prev = d[i]
        for j in range(1, lb + 1):
            cb = b[j - 1]
            k = last_row.get(cb, 0)
            l = last_match_col
            if ca == cb:
                cost = 0
                last_match_col = j
            else:
                cost = 1
            row[j + 1] = min(
                prev[j] + cost,
                row[j] + 1,
                prev[j + 1] + 1,
                d[k][l] + (i - k - 1) + 1 + (j - l - 1),
            )
        last_row[ca] = i
    return d[la + 1][lb + 1]


def _identifiers(port: PortRecord) -> list[str]:
    ids = []
    for s in (port.name, port.locode):
        s = " ".join(_SPECIAL.sub(" ", s or "").upper().split())
        if s:
            ids.append(s)
    return ids


def similarity(gram: str, ident: str) -> float:
    return 1.0 - dl_distance(gram, ident) / len(gram)


def extract_candidates(
    expr: str,
    ports: Sequence[PortRecord],
    threshold: float = DEFAULT_THRESHOLD,
    max_n: int = DEFAULT_NGRAM,
) -> set[int]:
    """Ports whose name or LOCODE scores above ``threshold`` against any gram."""
    grams = regularize(expr, max_n)
    found = set()
    if not grams:
        return found
    for port in ports:
        for ident in _identifiers(port):
            for g in grams:
                # DL >= length difference, so the score cannot pass
                if abs(len(g) - len(ident)) >= len(g) * (1.0 - threshold):
                    continue
                if similarity(g, ident) > threshold:
                    found.add(port.port_id)
                    break
            if port.port_id in found:
                break
    return found


class CandidateExtractor:
    """Caches candidate sets per distinct destination text."""

    def __init__(self, ports, threshold=DEFAULT_THRESHOLD, max_n=DEFAULT_NGRAM):
        self.ports = list(ports)
        self.threshold = threshold
        self.max_n = max_n
        self._cache: dict[str, tuple[int, ...]] = {}

    def __call__(self, expr: str) -> tuple[int, ...]:
        hit = self._cache.get(expr)
        if hit is None:
            hit = tuple(sorted(extract_candidates(expr, self.ports, self.threshold, self.max_n)))
            self._cache[expr] = hit
        return hit


def positional_status(
    msgs: Sequence[AisMessage],
    candidates_per_msg: Sequence[Iterable[int]],
    ports: dict[int, PortRecord] | Sequence[PortRecord],
) -> list[int]:
    """Tag each message as a port id, MOVING or STILL.

    A port tag is sticky while the ship stays inside that port's boundary,
    even after the destination text has moved on.
    """
    if not isinstance(ports, dict):
        ports = {p.port_id: p for p in ports}
    tags: list[int] = []
    for msg, cands in zip(msgs, candidates_per_msg):
        prev = tags[-1] if tags else None
        if prev is not None and prev >= 0 and ports[prev].contains(msg.lon, msg.lat):
            tags.append(prev)
            continue
        for c in cands:
            if ports[c].contains(msg.lon, msg.lat):
                tags.append(c)
                break
        else:
            tags.append(MOVING if msg.sog > 1.0 else STILL)
    return tags


def extract_trajectories(msgs, tags, ports) -> list[tuple[int, int]]:
    """Cut the tagged stream at port visits; returns inclusive index ranges.

    Each maximal run of one port tag is cut after its message nearest to the
    port center (first one on ties). The piece before the first cut is
    returned too; validation discards it unless it is a real voyage. The tail
    after the last cut is dropped.
    """
    if not isinstance(ports, dict):
        ports = {p.port_id: p for p in ports}
    spans = []
    start = 0
    t = 0
    n = len(tags)
    while t < n:
        tag = tags[t]
        if tag < 0:
            t += 1
            continue
        port = ports[tag]
        end = t
        while end + 1 < n and tags[end + 1] == tag:
            end += 1
        dists = [
            haversine_km_raw(msgs[i].lon, msgs[i].lat, port.center.lon, port.center.lat)
            for i in range(t, end + 1)
        ]
        cut = t + dists.index(min(dists))
        spans.append((start, cut))
        start = cut + 1
        t = end + 1
    return spans


def validation_failure(seg: Segment, max_gap_days: float = DEFAULT_MAX_GAP_DAYS) -> str | None:
    """Reason code for rejecting ``seg``, or None when it is a valid voyage."""
    if len(seg.tags) < 2:
        return "too_short"
    dept, dest = seg.tags[0], seg.tags[-1]
    if dept < 0 or dest < 0:
        return "endpoint_not_port"
    if dept == dest:
        return "same_port"
    if any(t == STILL for t in seg.tags):
        return "still_inside"
    if not any(t == MOVING for t in seg.tags):
        return "never_moving"
    ends = {dept, dest}
    if any(ends.isdisjoint(c) for c in seg.candidates):
        return "candidate_mismatch"
    gap = max_gap_days * 86400.0
    ts = [m.timestamp for m in seg.messages]
    if any(b - a >= gap for a, b in zip(ts, ts[1:])):
        return "time_gap"
    return None


def validate_segment(seg: Segment, max_gap_days: float = DEFAULT_MAX_GAP_DAYS) -> bool:
    return validation_failure(seg, max_gap_days) is None


@dataclass
class Rejection:
    vessel_id: str
    departure: int | None
    destination: int | None
    reason: str
    n_messages: int
    start_timestamp: float | None = None


def annotate_stream(
    msgs: Sequence[AisMessage],
    ports: Sequence[PortRecord],
    threshold: float = DEFAULT_THRESHOLD,
    max_gap_days: float = DEFAULT_MAX_GAP_DAYS,
    max_n: int = DEFAULT_NGRAM,
    extractor: CandidateExtractor | None = None,
) -> tuple[list[Segment], list[Rejection]]:
    """Run the full annotation on one vessel's messages."""
    msgs = sorted((m for m in msgs if valid_position(m.lon, m.lat)), key=lambda m: m.timestamp)
    if not msgs:
        return [], []
    extractor = extractor or CandidateExtractor(ports, threshold, max_n)
    by_id = {p.port_id: p for p in ports}
    cands = [extractor(m.destination_text) for m in msgs]
    tags = positional_status(msgs, cands, by_id)
    vessel = msgs[0].vessel_id
    accepted, rejected = [], []
    for a, b in extract_trajectories(msgs, tags, by_id):
        seg = Segment(vessel, msgs[a : b + 1], tags[a : b + 1], cands[a : b + 1])
        reason = validation_failure(seg, max_gap_days)
        if reason is None:
            accepted.append(seg)
        else:
            rejected.append(
                Rejection(vessel, seg.departure, seg.destination, reason, len(seg), seg.messages[0].timestamp)
            )
    return accepted, rejected


def group_by_vessel(msgs: Iterable[AisMessage]) -> dict[str, list[AisMessage]]:
    streams: dict[str, list[AisMessage]] = {}
    for m in msgs:
        streams.setdefault(m.vessel_id, []).append(m)
    return streams


def _annotate_job(args):
    msgs, ports, threshold, max_gap_days, max_n = args
    return annotate_stream(msgs, ports, threshold, max_gap_days, max_n)


def annotate_all(
    msgs: Iterable[AisMessage],
    ports: Sequence[PortRecord],
    threshold: float = DEFAULT_THRESHOLD,
    max_gap_days: float = DEFAULT_MAX_GAP_DAYS,
    max_n: int = DEFAULT_NGRAM,
    workers: int = 1,
) -> tuple[list[Segment], list[Rejection]]:
    """Annotate every vessel stream; vessels are independent and may run in parallel."""
    streams = group_by_vessel(msgs)
    keys = sorted(streams)
    segments, rejections = [], []
    if workers > 1 and len(keys) > 1:
        jobs = [(streams[k], ports, threshold, max_gap_days, max_n) for k in keys]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_annotate_job, jobs))
    else:
        extractor = CandidateExtractor(ports, threshold, max_n)
        results = [
            annotate_stream(streams[k], ports, threshold, max_gap_days, max_n, extractor) for k in keys
        ]
    for acc, rej in results:
        segments.extend(acc)
        rejections.extend(rej)
    logger.info("annotated %d vessels: %d segments, %d rejected", len(keys), len(segments), len(rejections))
    return segments, rejections
