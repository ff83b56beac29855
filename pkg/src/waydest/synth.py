"""Seeded synthetic AIS world.

Ports are small convex polygons scattered over a bounded region and joined
by a lane graph. Vessels shuttle between ports along piecewise great-circle
routes and report at irregular intervals. Ground truth for every voyage is
kept separately from the raw stream so the annotation and refinement
pipeline can be scored against it.

Routes leave a port toward a corridor waypoint quantised to 45 degree
sectors, so destinations in the same sector share the opening part of their
paths.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .annotate import AisMessage, PortRecord, dl_distance, extract_candidates
from .geo import (
    EARTH_RADIUS_KM,
    GeoPoint,
    destination_point,
    from_unit_vectors,
    haversine_km_array,
    haversine_km_raw,
    initial_bearing,
    to_unit_vectors,
)
from .refine import SENTINELS

KM_PER_NM = 1.852
KM_PER_DEG = 2.0 * math.pi * EARTH_RADIUS_KM / 360.0

_CONSONANTS = "BCDFGHKLMNPRSTVZ"
_VOWELS = "AEIOU"
_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


@dataclass(frozen=True)
class NoiseProfile:
    typo_rate: float = 0.3
    sentinel_rate: float = 0.05
    teleport_rate: float = 0.02
    unlabelable_rate: float = 0.0

    def __post_init__(self):
        for name in ("typo_rate", "sentinel_rate", "teleport_rate", "unlabelable_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    @classmethod
    def clean(cls) -> NoiseProfile:
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class WorldSpec:
    seed: int = 0
    n_ports: int = 20
    n_vessels: int = 100
    voyages_per_vessel: int = 5
    ship_types: tuple[str, ...] = ("tanker", "container", "bulk")
    ship_type_weights: tuple[float, ...] = (0.3, 0.4, 0.3)
    region: tuple[float, float, float, float] = (-40.0, -35.0, 40.0, 35.0)
    min_port_separation_km: float = 500.0
    port_radius_km: tuple[float, float] = (3.0, 8.0)
    lanes_per_port: int = 3
    speed_knots: tuple[float, float] = (8.0, 20.0)
    interarrival: str = "exponential"
    mean_interarrival_min: float = 20.0
    max_interarrival_days: float = 2.0
    dwell_hours: tuple[float, float] = (6.0, 36.0)
    route_jitter_km: float = 15.0
    start_time: float = 1_600_000_000.0
    noise: NoiseProfile = field(default_factory=NoiseProfile)

    def __post_init__(self):
        if self.n_ports < 2:
            raise ValueError("a world needs at least 2 ports")
        if self.n_vessels < 1 or self.voyages_per_vessel < 1:
            raise ValueError("need at least one vessel and one voyage")
        if len(self.ship_types) != len(self.ship_type_weights) or not self.ship_types:
            raise ValueError("ship_types and ship_type_weights must align")
        if min(self.ship_type_weights) <= 0:
            raise ValueError("ship type weights must be positive")
        lo, hi = self.speed_knots
        if not 1.0 < lo <= hi:
            raise ValueError("speeds must exceed 1 knot")
        if self.interarrival not in ("exponential", "fixed"):
            raise ValueError(f"unknown interarrival {self.interarrival!r}")
        if self.mean_interarrival_min <= 0 or self.max_interarrival_days <= 0:
            raise ValueError("interarrival parameters must be positive")
        if self.max_interarrival_days >= 3.0:
            raise ValueError("gaps of 3 days or more would split voyages")
        lon0, lat0, lon1, lat1 = self.region
        if not (-180 <= lon0 < lon1 < 180 and -80 <= lat0 < lat1 <= 80):
            raise ValueError(f"bad region {self.region}")

    @property
    def n_voyages(self) -> int:
        return self.n_vessels * self.voyages_per_vessel


@dataclass
class Lane:
    a: int
    b: int
    weight: float
    routes: dict[tuple[int, int], list[tuple[float, float]]]  # intermediate waypoints per direction


@dataclass
class World:
    spec: WorldSpec
    ports: list[PortRecord]
    lanes: list[Lane]
    type_bias: dict[str, np.ndarray]  # per ship type, one multiplier per lane

    def neighbours(self, port: int) -> list[tuple[int, int]]:
        """(lane index, other port) pairs touching ``port``."""
        out = []
        for k, lane in enumerate(self.lanes):
            if lane.a == port:
                out.append((k, lane.b))
            elif lane.b == port:
                out.append((k, lane.a))
        return out

    def destinations(self, port: int, ship_type: str) -> tuple[np.ndarray, np.ndarray]:
        nb = self.neighbours(port)
        ids = np.array([b for _, b in nb], dtype=int)
        w = np.array([self.lanes[k].weight * self.type_bias[ship_type][k] for k, _ in nb])
        return ids, w / w.sum()

    def route(self, a: int, b: int) -> list[tuple[float, float]]:
        for lane in self.lanes:
            if (a, b) in lane.routes:
                return lane.routes[(a, b)]
        raise KeyError(f"no lane between ports {a} and {b}")

    def to_dict(self) -> dict:
        return {
            "lanes": [
                {"a": l.a, "b": l.b, "weight": l.weight, "routes": {f"{x}>{y}": w for (x, y), w in l.routes.items()}}
                for l in self.lanes
            ],
            "type_bias": {t: v.tolist() for t, v in self.type_bias.items()},
        }


@dataclass
class GroundTruth:
    vessel_id: str
    voyage: int
    departure: int
    destination: int
    ship_type: str
    destination_text: str
    labelable: bool
    messages: list[AisMessage]
    teleports: list[float]  # timestamps of spiked messages inside the segment

    @property
    def timestamps(self) -> list[float]:
        return [m.timestamp for m in self.messages]

    def to_dict(self) -> dict:
        return {
            "vessel_id": self.vessel_id,
            "voyage": self.voyage,
            "departure": self.departure,
            "destination": self.destination,
            "ship_type": self.ship_type,
            "destination_text": self.destination_text,
            "labelable": self.labelable,
            "timestamps": self.timestamps,
            "teleports": self.teleports,
        }


@dataclass
class VesselState:
    vessel_id: str
    ship_type: str
    port: int
    dwell: list[AisMessage]
    text: str
    eta: float
    voyage: int = 0


@dataclass
class Corpus:
    world: World
    messages: list[AisMessage]
    truths: list[GroundTruth]


# ---------------------------------------------------------------- world


def _make_name(rng) -> str:
    n_syl = int(rng.integers(3, 6))
    s = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n_syl))
    if rng.random() < 0.5:
        s += _CONSONANTS[rng.integers(len(_CONSONANTS))]
    return s


def _make_locode(rng) -> str:
    return "".join(_LETTERS[i] for i in rng.integers(len(_LETTERS), size=5))


def _port_polygon(rng, center: GeoPoint, radius_km: float) -> list[GeoPoint]:
    k = int(rng.integers(6, 10))
    rot = rng.uniform(0, 360)
    stretch = rng.uniform(0.7, 1.0)
    pts = []
    for i in range(k):
        theta = rot + 360.0 * i / k
        # an ellipse sampled at increasing angles stays convex
        t = math.radians(360.0 * i / k)
        r = radius_km * math.hypot(math.cos(t), stretch * math.sin(t))
        pts.append(destination_point(center, theta, r))
    return pts


def _place_ports(spec: WorldSpec, rng) -> list[GeoPoint]:
    lon0, lat0, lon1, lat1 = spec.region
    centers: list[GeoPoint] = []
    for _ in range(2000 * spec.n_ports):
        if len(centers) == spec.n_ports:
            return centers
        lon = rng.uniform(lon0, lon1)
        # uniform on the sphere within the latitude band
        z = rng.uniform(math.sin(math.radians(lat0)), math.sin(math.radians(lat1)))
        lat = math.degrees(math.asin(z))
        if all(haversine_km_raw(lon, lat, c.lon, c.lat) >= spec.min_port_separation_km for c in centers):
            centers.append(GeoPoint(lon, lat))
    raise ValueError(
        f"infeasible world: cannot place {spec.n_ports} ports {spec.min_port_separation_km} km apart in {spec.region}"
    )


def _name_ports(rng, n: int, polygons) -> list[PortRecord]:
    """Names and LOCODEs far enough apart that each one matches only its own port."""
    names: list[str] = []
    codes: list[str] = []
    for _ in range(n):
        for _ in range(10000):
            nm = _make_name(rng)
            if all(dl_distance(nm, o) >= 5 for o in names):
                names.append(nm)
                break
        else:
            raise ValueError("could not generate distinct port names")
        for _ in range(10000):
            cd = _make_locode(rng)
            if all(dl_distance(cd, o) >= 2 for o in codes):
                codes.append(cd)
                break
        else:
            raise ValueError("could not generate distinct locodes")
    ports = [PortRecord.from_polygon(i, names[i], codes[i], polygons[i]) for i in range(n)]
    for p in ports:
        for text in (p.name, p.locode):
            if extract_candidates(text, ports) != {p.port_id}:
                raise ValueError(f"port identifier {text!r} is ambiguous")
    return ports


def _leg_points(p: tuple[float, float], q: tuple[float, float], step_km: float):
    d = haversine_km_raw(p[0], p[1], q[0], q[1])
    n = max(int(d / step_km), 1)
    t = np.linspace(0.0, 1.0, n + 1)
    return _slerp(p, q, t), d


def _slerp(p, q, t) -> np.ndarray:
    u = to_unit_vectors(p[0], p[1])
    v = to_unit_vectors(q[0], q[1])
    omega = math.acos(max(-1.0, min(1.0, float(np.dot(u, v)))))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if omega < 1e-12:
        pts = np.repeat(u[None, :], len(t), axis=0)
    else:
        s = math.sin(omega)
        pts = (np.sin((1 - t) * omega) / s)[:, None] * u + (np.sin(t * omega) / s)[:, None] * v
    lon, lat = from_unit_vectors(pts)
    return np.column_stack([lon, lat])


def route_clear(ports: Sequence[PortRecord], a: int, b: int, waypoints, step_km: float = 10.0) -> bool:
    """True when the route keeps away from every port boundary except on leaving ``a`` and reaching ``b``."""
    path = [(ports[a].center.lon, ports[a].center.lat), *waypoints, (ports[b].center.lon, ports[b].center.lat)]
    pts, arcs = [], []
    s0 = 0.0
    for p, q in zip(path, path[1:]):
        seg, d = _leg_points(p, q, step_km)
        pts.append(seg)
        arcs.append(s0 + d * np.linspace(0, 1, len(seg)))
        s0 += d
    pts = np.vstack(pts)
    s = np.concatenate(arcs)
    total = s0
    for port in ports:
        r = port.boundary_radius_km
        dist = haversine_km_array(pts[:, 0], pts[:, 1], port.center.lon, port.center.lat)
        if port.port_id == a:
            bad = (dist < 1.5 * r) & (s > 1.5 * r + 1e-6) & (dist < s - 1e-6)
        elif port.port_id == b:
            bad = (dist < 1.5 * r) & (total - s > 1.5 * r + 1e-6) & (dist < total - s - 1e-6)
        else:
            bad = dist < 3.0 * r
        if bad.any():
            return False
    return True


def _lane_route(rng, ports, a, b, max_tries=60) -> list[tuple[float, float]]:
    pa, pb = ports[a].center, ports[b].center
    dist = haversine_km_raw(pa.lon, pa.lat, pb.lon, pb.lat)
    sector = round(initial_bearing(pa.lon, pa.lat, pb.lon, pb.lat) / 45.0) * 45.0
    reach = min(max(0.3 * dist, 150.0), 800.0)
    # the shared corridor first, then nearer or farther variants, then none
    starts = [destination_point(pa, sector, reach * f) for f in (1.0, 0.6, 1.4)] + [None]
    for corridor in starts:
        head = [] if corridor is None else [(corridor.lon, corridor.lat)]
        origin = (pa.lon, pa.lat) if corridor is None else head[0]
        for attempt in range(max_tries):
            n_extra = int(rng.integers(0 if head else 1, 4))
            spread = (0.08 if attempt < max_tries // 2 else 0.25) * dist
            wps = list(head)
            for frac in np.linspace(0.4, 0.85, n_extra) if n_extra else []:
                base = _slerp(origin, (pb.lon, pb.lat), frac)[0]
                brg = initial_bearing(base[0], base[1], pb.lon, pb.lat)
                off = destination_point(GeoPoint(*base), brg + 90.0, rng.normal(0.0, spread))
                wps.append((off.lon, off.lat))
            if route_clear(ports, a, b, wps):
                return wps
    raise ValueError(f"infeasible world: no clear route from port {a} to port {b}")


def gen_world(spec: WorldSpec, rng: np.random.Generator | None = None) -> World:
    """Ports, lanes with frequencies and lane routes; deterministic under ``spec.seed``."""
    rng = rng if rng is not None else np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
    centers = _place_ports(spec, rng)
    rmin, rmax = spec.port_radius_km
    polygons = [_port_polygon(rng, c, rng.uniform(rmin, rmax)) for c in centers]
    ports = _name_ports(rng, spec.n_ports, polygons)

    P = spec.n_ports
    pairs: set[tuple[int, int]] = set()
    if P == 2:
        pairs.add((0, 1))
    else:
        # ring in angular order around the mean position keeps ring lanes short
        mx = np.mean([p.center.lon for p in ports])
        my = np.mean([p.center.lat for p in ports])
        ang = [math.atan2(p.center.lat - my, p.center.lon - mx) for p in ports]
        order = np.argsort(ang, kind="stable")
        for i in range(P):
            x, y = int(order[i]), int(order[(i + 1) % P])
            pairs.add((min(x, y), max(x, y)))
        cx = np.array([p.center.lon for p in ports])
        cy = np.array([p.center.lat for p in ports])
        for i in range(P):
            d = haversine_km_array(cx, cy, cx[i], cy[i])
            near = [int(j) for j in np.argsort(d, kind="stable") if j != i][:6]
            while sum(i in pr for pr in pairs) < spec.lanes_per_port:
                free = [j for j in near if (min(i, j), max(i, j)) not in pairs]
                if not free:
                    break
                j = free[int(rng.integers(len(free)))]
                pairs.add((min(i, j), max(i, j)))

    lanes = []
    for a, b in sorted(pairs):
        routes = {(a, b): _lane_route(rng, ports, a, b), (b, a): _lane_route(rng, ports, b, a)}
        lanes.append(Lane(a, b, float(rng.gamma(1.0, 1.0) + 0.05), routes))
    type_bias = {t: rng.gamma(2.0, 0.5, size=len(lanes)) + 0.05 for t in spec.ship_types}
    return World(spec, ports, lanes, type_bias)


# ---------------------------------------------------------------- voyages


def _gap_seconds(spec: WorldSpec, rng) -> float:
    mean = spec.mean_interarrival_min * 60.0
    cap = spec.max_interarrival_days * 86400.0
    if spec.interarrival == "fixed":
        return float(max(1, round(mean)))
    while True:
        g = rng.exponential(mean)
        if g <= cap:
            return float(max(1, round(g)))


def _apply_typos(rng, word: str) -> str:
    """At most ceil(len/5) - 1 edits, so the edited word keeps similarity above 0.75."""
    max_e = max(0, math.ceil(len(word) / 5) - 1)
    if max_e == 0:
        return word
    e = int(rng.integers(1, max_e + 1))
    w = list(word)
    for _ in range(e):
        op = rng.integers(4)
        i = int(rng.integers(len(w)))
        if op == 0:
            w[i] = _LETTERS[rng.integers(len(_LETTERS))]
        elif op == 1:
            w.insert(i, _LETTERS[rng.integers(len(_LETTERS))])
        elif op == 2 and len(w) > 1:
            del w[i]
        elif i + 1 < len(w):
            w[i], w[i + 1] = w[i + 1], w[i]
    return "".join(w)


def destination_text(world: World, rng, dep: int, dest: int, noise: NoiseProfile) -> tuple[str, bool]:
    """Free text for a voyage plus whether it still identifies ``dest``."""
    ports = world.ports
    if rng.random() < noise.unlabelable_rate:
        for _ in range(1000):
            junk = "".join(_LETTERS[i] for i in rng.integers(len(_LETTERS), size=int(rng.integers(4, 10))))
            if not extract_candidates(junk, ports):
                return junk, False
    typo = rng.random() < noise.typo_rate
    fmt = rng.choice(3, p=[0.5, 0.25, 0.25])
    if fmt == 1 and typo:
        fmt = 0
    for _ in range(1000):
        name = _apply_typos(rng, ports[dest].name) if typo else ports[dest].name
        if fmt == 0:
            text, want = name, {dest}
        elif fmt == 1:
            text, want = ports[dest].locode, {dest}
        else:
            text, want = f"{ports[dep].name}>{name}", {dep, dest}
        if extract_candidates(text, ports) == want:
            return text, True
    return ports[dest].name, True


def _dwell_message(vessel_id, ship_type, port: PortRecord, t, text, eta, draught, course) -> AisMessage:
    return AisMessage(
        timestamp=float(t),
        lon=port.center.lon,
        lat=port.center.lat,
        sog=0.0,
        rot=0.0,
        cog=course,
        heading=course,
        draught=draught,
        eta=eta,
        ship_type=ship_type,
        vessel_id=vessel_id,
        destination_text=text,
    )


def _dwell(world, rng, state_like, port_id, t_first, text, eta, draught, course) -> list[AisMessage]:
    """At least two messages at the port center, covering the planned dwell time."""
    spec = world.spec
    vessel_id, ship_type = state_like
    port = world.ports[port_id]
    until = t_first + rng.uniform(*spec.dwell_hours) * 3600.0
    out = [_dwell_message(vessel_id, ship_type, port, t_first, text, eta, draught, course)]
    t = t_first
    while len(out) < 2 or t < until:
        t += _gap_seconds(spec, rng)
        out.append(_dwell_message(vessel_id, ship_type, port, t, text, eta, draught, course))
    return out


def _inject_sentinels(msgs: list[AisMessage], rate: float, rng) -> list[AisMessage]:
    if rate <= 0:
        return msgs
    fields = sorted(SENTINELS)
    out = []
    for m in msgs:
        if rng.random() < rate:
            f = fields[int(rng.integers(len(fields)))]
            codes = SENTINELS[f]
            m = replace(m, **{f: codes[int(rng.integers(len(codes)))]})
        out.append(m)
    return out


def _outside_all(ports, lon, lat) -> bool:
    return all(haversine_km_raw(lon, lat, p.center.lon, p.center.lat) >= p.boundary_radius_km for p in ports)


def start_vessel(world: World, rng, vessel_id: str) -> tuple[VesselState, list[AisMessage]]:
    spec = world.spec
    w = np.asarray(spec.ship_type_weights, dtype=float)
    ship_type = spec.ship_types[int(rng.choice(len(w), p=w / w.sum()))]
    port = int(rng.integers(spec.n_ports))
    t0 = spec.start_time + round(rng.uniform(0, 30 * 86400.0))
    text = world.ports[port].name
    dwell = _dwell(world, rng, (vessel_id, ship_type), port, float(t0), text, math.nan, 8.0, 0.0)
    dwell = _inject_sentinels(dwell, spec.noise.sentinel_rate, rng)
    return VesselState(vessel_id, ship_type, port, dwell, text, math.nan), dwell


def _jittered_route(world, rng, a, b) -> list[tuple[float, float]]:
    base = world.route(a, b)
    jit = world.spec.route_jitter_km
    if jit <= 0:
        return base
    for _ in range(20):
        wps = []
        for lon, lat in base:
            p = destination_point(GeoPoint(lon, lat), rng.uniform(0, 360), rng.uniform(0, jit))
            wps.append((p.lon, p.lat))
        if route_clear(world.ports, a, b, wps):
            return wps
    return base


class _Path:
    """Arc-length parametrised piecewise great-circle path."""

    def __init__(self, points):
        self.points = points
        self.lengths = [haversine_km_raw(p[0], p[1], q[0], q[1]) for p, q in zip(points, points[1:])]
        self.cum = np.concatenate([[0.0], np.cumsum(self.lengths)])
        self.total = float(self.cum[-1])

    def at(self, s: float) -> tuple[float, float, float]:
        """(lon, lat, course) at arc length ``s`` km."""
        k = min(int(np.searchsorted(self.cum, s, side="right")) - 1, len(self.lengths) - 1)
        p, q = self.points[k], self.points[k + 1]
        frac = 0.0 if self.lengths[k] == 0 else (s - self.cum[k]) / self.lengths[k]
        lon, lat = _slerp(p, q, min(max(frac, 0.0), 1.0))[0]
        return float(lon), float(lat), initial_bearing(lon, lat, q[0], q[1])


def gen_voyage(
    world: World, rng: np.random.Generator, state: VesselState
) -> tuple[list[AisMessage], GroundTruth, VesselState]:
    """Sail from ``state.port`` to a sampled neighbour.

    Returns the underway and arrival-dwell messages, the ground-truth segment
    (the departure dwell after its first message, the underway part and the
    first arrival message) and the vessel state at arrival.
    """
    spec, noise = world.spec, world.spec.noise
    ids, probs = world.destinations(state.port, state.ship_type)
    dest = int(ids[int(rng.choice(len(ids), p=probs))])
    dep = state.port
    speed = rng.uniform(*spec.speed_knots)
    draught = round(float(rng.uniform(5.0, 15.0)), 1)
    path = _Path(
        [(world.ports[dep].center.lon, world.ports[dep].center.lat)]
        + _jittered_route(world, rng, dep, dest)
        + [(world.ports[dest].center.lon, world.ports[dest].center.lat)]
    )
    t_dep = state.dwell[-1].timestamp
    t_arr = t_dep + path.total / (speed * KM_PER_NM) * 3600.0
    eta = float(round(t_arr + rng.normal(0.0, 3.0 * 3600.0)))
    text, labelable = destination_text(world, rng, dep, dest, noise)

    underway: list[AisMessage] = []
    teleports: list[float] = []
    t = t_dep + _gap_seconds(spec, rng)
    course = 0.0
    while t < t_arr:
        s = (t - t_dep) / 3600.0 * speed * KM_PER_NM
        lon, lat, course = path.at(s)
        sog = round(max(speed + rng.normal(0.0, 0.2), 1.5), 1)
        msg = AisMessage(
            timestamp=float(t),
            lon=lon,
            lat=lat,
            sog=sog,
            rot=round(float(rng.normal(0.0, 0.5)), 1),
            cog=round(course, 1) % 360.0,
            heading=float(round(course + rng.normal(0.0, 2.0)) % 360),
            draught=draught,
            eta=eta,
            ship_type=state.ship_type,
            vessel_id=state.vessel_id,
            destination_text=text,
        )
        if noise.teleport_rate > 0 and rng.random() < noise.teleport_rate and _outside_all(world.ports, lon, lat):
            for _ in range(100):
                jump = destination_point(GeoPoint(lon, lat), rng.uniform(0, 360), rng.uniform(5.0, 15.0) * KM_PER_DEG)
                if abs(jump.lat) < 85.0 and _outside_all(world.ports, jump.lon, jump.lat):
                    msg = replace(msg, lon=jump.lon, lat=jump.lat)
                    teleports.append(msg.timestamp)
                    break
        underway.append(msg)
        t += _gap_seconds(spec, rng)

    arrival = _dwell(world, rng, (state.vessel_id, state.ship_type), dest, t, text, eta, draught, round(course, 1) % 360.0)
    emitted = _inject_sentinels(underway + arrival, noise.sentinel_rate, rng)
    n_under = len(underway)
    truth = GroundTruth(
        vessel_id=state.vessel_id,
        voyage=state.voyage,
        departure=dep,
        destination=dest,
        ship_type=state.ship_type,
        destination_text=text,
        labelable=labelable,
        messages=state.dwell[1:] + emitted[: n_under + 1],
        teleports=teleports,
    )
    new_state = VesselState(state.vessel_id, state.ship_type, dest, emitted[n_under:], text, eta, state.voyage + 1)
    return emitted, truth, new_state


def _vessel_job(args) -> tuple[list[AisMessage], list[GroundTruth]]:
    world, seed_seq, index = args
    rng = np.random.default_rng(seed_seq)
    spec = world.spec
    state, msgs = start_vessel(world, rng, f"V{index:05d}")
    msgs = list(msgs)
    truths = []
    for _ in range(spec.voyages_per_vessel):
        emitted, truth, state = gen_voyage(world, rng, state)
        msgs.extend(emitted)
        truths.append(truth)
    return msgs, truths


def generate(spec: WorldSpec, workers: int = 1) -> Corpus:
    """World plus every vessel's message stream; vessels use derived seeds."""
    root = np.random.SeedSequence(spec.seed)
    world_seq, *vessel_seqs = root.spawn(spec.n_vessels + 1)
    world = gen_world(spec, np.random.default_rng(world_seq))
    jobs = [(world, vessel_seqs[i], i) for i in range(spec.n_vessels)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_vessel_job, jobs))
    else:
        results = [_vessel_job(j) for j in jobs]
    messages: list[AisMessage] = []
    truths: list[GroundTruth] = []
    for msgs, tr in results:
        messages.extend(msgs)
        truths.extend(tr)
    messages.sort(key=lambda m: (m.timestamp, m.vessel_id))
    return Corpus(world, messages, truths)


# ---------------------------------------------------------------- scoring


def _key(m: AisMessage) -> tuple[str, float]:
    return m.vessel_id, m.timestamp


def score_recovery(truths: Sequence[GroundTruth], segments) -> dict:
    """Compare pipeline segments against ground truth voyages.

    A segment belongs to the voyage holding most of its messages. A voyage
    is recovered exactly when one segment has precisely its messages and
    labels, and correctly labelled when every segment assigned to it carries
    its departure and destination.
    """
    owner: dict[tuple[str, float], int] = {}
    for k, tr in enumerate(truths):
        for m in tr.messages:
            owner[_key(m)] = k
    assigned: dict[int, list] = {}
    kept_keys: set[tuple[str, float]] = set()
    for seg in segments:
        keys = [_key(m) for m in seg.messages]
        kept_keys.update(keys)
        votes = Counter(owner[k] for k in keys if k in owner)
        if votes:
            assigned.setdefault(votes.most_common(1)[0][0], []).append(seg)

    exact = labelled = 0
    teleports = clean = tele_removed = clean_kept = 0
    for k, tr in enumerate(truths):
        segs = assigned.get(k, [])
        want = set(_key(m) for m in tr.messages)
        if segs and all(s.departure == tr.departure and s.destination == tr.destination for s in segs):
            labelled += 1
            if len(segs) == 1 and set(_key(m) for m in segs[0].messages) == want:
                exact += 1
        tele = set((tr.vessel_id, t) for t in tr.teleports)
        teleports += len(tele)
        tele_removed += len(tele - kept_keys)
        for key in want - tele:
            clean += 1
            clean_kept += key in kept_keys

    n = len(truths)
    return {
        "n_voyages": n,
        "n_segments": len(segments),
        "exact_recovery": exact / n if n else None,
        "correctly_labelled": labelled / n if n else None,
        "n_teleports": teleports,
        "teleports_removed": tele_removed / teleports if teleports else None,
        "clean_retained": clean_kept / clean if clean else None,
    }
