"""Removal of machinery errors from annotated segments.

Sentinel kinematic values are voided, then edges between consecutive
messages are embedded as speed-normalised displacement vectors and
clustered with DBSCAN; edges labelled noise are cut by deleting their later
endpoint. Surviving segments are re-validated.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .annotate import DEFAULT_MAX_GAP_DAYS, AisMessage, Segment, validation_failure
from .geo import valid_position

NOISE = -1
DEFAULT_EPS = 0.15
DEFAULT_MIN_PTS = 4
DEFAULT_MAX_PASSES = 5
NORMALIZER_FLOOR = 1e-6

SENTINELS = {
    "sog": (1023.0, 102.3),
    "cog": (360.0,),
    "rot": (-731.0,),
    "heading": (511.0,),
}


def _is_sentinel(value: float, codes) -> bool:
    return any(abs(value - c) < 1e-9 for c in codes)


def clean_message(msg: AisMessage) -> AisMessage | None:
    """Copy of ``msg`` with sentinel fields set to NaN; None if the position is unusable."""
    if not valid_position(msg.lon, msg.lat):
        return None
    changes = {f: math.nan for f, codes in SENTINELS.items() if _is_sentinel(getattr(msg, f), codes)}
    return dataclasses.replace(msg, **changes) if changes else msg


def filter_sentinels(msgs: Sequence[AisMessage]) -> list[AisMessage]:
    out = []
    for m in msgs:
        c = clean_message(m)
        if c is not None:
            out.append(c)
    return out


def edge_residuals(msgs: Sequence[AisMessage], sog_average: str = "pair") -> np.ndarray:
    """Per-edge (|dlon|, |dlat|, euclid) / (|dt hours| * mean SOG), shape (n-1, 3).

    Missing SOG values are filled with the segment mean SOG. With
    ``sog_average="segment"`` every edge uses the segment mean instead of the
    mean of its two endpoints.
    """
    if isinstance(msgs, Segment):
        msgs = msgs.messages
    if len(msgs) < 2:
        raise ValueError("segment too short")
    lon = np.array([m.lon for m in msgs])
    lat = np.array([m.lat for m in msgs])
    t = np.array([m.timestamp for m in msgs])
    sog = np.array([m.sog for m in msgs], dtype=float)
    valid = np.isfinite(sog)
    fill = sog[valid].mean() if valid.any() else 0.0
    sog = np.where(valid, sog, fill)

    dlon = np.abs((np.diff(lon) + 180.0) % 360.0 - 180.0)
    dlat = np.abs(np.diff(lat))
    deu = np.hypot(dlon, dlat)
    hours = np.abs(np.diff(t)) / 3600.0
    if sog_average == "segment":
        speed = np.full(len(hours), sog.mean())
    elif sog_average == "pair":
        speed = (sog[:-1] + sog[1:]) / 2.0
    else:
        raise ValueError(f"unknown sog_average {sog_average!r}")
    norm = np.maximum(hours * speed, NORMALIZER_FLOOR)
    return np.stack([dlon, dlat, deu], axis=1) / norm[:, None]


def dbscan(points, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS) -> np.ndarray:
    """Density clustering; returns cluster ids (0, 1, ...) or NOISE per point.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Core points within ``eps`` of each other share a cluster.
    A non-core point joins the cluster of its nearest core neighbour, which
    keeps labels independent of input order.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return np.zeros(0, dtype=int)
    pts = pts.reshape(len(pts), -1)
    n = len(pts)
    tree = cKDTree(pts)
    neigh = tree.query_ball_point(pts, r=eps)
    core = np.array([len(nb) >= min_pts for nb in neigh])

    comp = np.full(n, -1)
    n_comp = 0
    for i in range(n):
        if not core[i] or comp[i] >= 0:
            continue
        comp[i] = n_comp
        stack = [i]
        while stack:
            j = stack.pop()
            for k in neigh[j]:
                if core[k] and comp[k] < 0:
                    comp[k] = n_comp
                    stack.append(k)
        n_comp += 1

    # order-free tie-break for equidistant border assignments
    comp_key = {}
    for i in np.flatnonzero(core):
        key = tuple(pts[i])
        c = comp[i]
        if c not in comp_key or key < comp_key[c]:
            comp_key[c] = key

    labels = comp.copy()
    for i in np.flatnonzero(~core):
        best = None
        for k in neigh[i]:
            if not core[k]:
                continue
            dist = float(np.linalg.norm(pts[i] - pts[k]))
            cand = (dist, comp_key[comp[k]])
            if best is None or cand < best[0]:
                best = (cand, comp[k])
        labels[i] = NOISE if best is None else best[1]

    # renumber clusters by first appearance
    remap = {}
    for i in range(n):
        c = labels[i]
        if c != NOISE and c not in remap:
            remap[c] = len(remap)
    return np.array([remap.get(c, NOISE) for c in labels], dtype=int)


@dataclass
class RefineResult:
    segment: Segment | None
    reason: str | None
    removed: list[int]
    passes: int

    @property
    def accepted(self) -> bool:
        return self.segment is not None


def refine_segment(
    seg: Segment,
    eps: float = DEFAULT_EPS,
    min_pts: int = DEFAULT_MIN_PTS,
    max_passes: int = DEFAULT_MAX_PASSES,
    max_gap_days: float = DEFAULT_MAX_GAP_DAYS,
    sog_average: str = "pair",
) -> RefineResult:
    """Delete anomalous messages from ``seg`` and re-validate it.

    ``removed`` holds indices into the input segment. Surviving messages keep
    their order; only sentinel fields are rewritten.
    """
    cleaned = [clean_message(m) for m in seg.messages]
    alive = [i for i, m in enumerate(cleaned) if m is not None]
    removed = [i for i, m in enumerate(cleaned) if m is None]
    passes = 0
    while passes < max_passes:
        if len(alive) < 2:
            break
        residuals = edge_residuals([cleaned[i] for i in alive], sog_average)
        labels = dbscan(residuals, eps, min_pts)
        if not (labels == NOISE).any():
            break
        passes += 1
        dropped = set()
        for e in np.flatnonzero(labels == NOISE):
            if e in dropped:
                # earlier endpoint already gone this pass; the edge no longer exists
                continue
            dropped.add(e + 1)
        removed.extend(alive[e] for e in sorted(dropped))
        alive = [a for pos, a in enumerate(alive) if pos not in dropped]

    removed.sort()
    if len(alive) < 2:
        return RefineResult(None, "too_short", removed, passes)
    out = seg.subset(alive)
    out.messages = [cleaned[i] for i in alive]
    reason = validation_failure(out, max_gap_days)
    if reason is not None:
        return RefineResult(None, reason, removed, passes)
    return RefineResult(out, None, removed, passes)


def refine_all(segments, **kwargs) -> tuple[list[Segment], list[tuple[Segment, RefineResult]]]:
    kept, rejected = [], []
    for seg in segments:
        res = refine_segment(seg, **kwargs)
        if res.accepted:
            kept.append(res.segment)
        else:
            rejected.append((seg, res))
    return kept, rejected
