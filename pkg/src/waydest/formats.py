"""On-disk formats shared by the pipeline stages.

Every JSON record carries a ``schema`` tag of the form ``name/version``.
Readers reject unknown names and other versions with a message that says
which stage to re-run. Parse failures raise :class:`DataError` naming the
file and line.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from collections.abc import Iterable, Iterator
from pathlib import Path

import numpy as np

from .annotate import DEFAULT_ALPHA, AisMessage, PortRecord, Rejection, Segment
from .represent import RAW_FIELDS, FeatureScaler, GridElement, NestedSequence

SCHEMAS = {
    "ports": 1,
    "segment": 1,
    "rejection": 1,
    "truth": 1,
    "nested": 1,
    "scaler": 1,
    "manifest": 1,
}
PRODUCER = {
    "ports": "synth",
    "segment": "annotate or refine",
    "rejection": "annotate or refine",
    "truth": "synth",
    "nested": "represent",
    "scaler": "train",
    "manifest": "the producing stage",
}

AIS_COLUMNS = (
    "vessel_id",
    "timestamp",
    "lon",
    "lat",
    "sog",
    "rot",
    "cog",
    "heading",
    "draught",
    "eta",
    "ship_type",
    "destination",
)
_FLOAT_COLUMNS = ("timestamp", "lon", "lat", "sog", "rot", "cog", "heading", "draught", "eta")


class DataError(ValueError):
    """Malformed input; the message names the file and, when known, the line."""

    def __init__(self, path, message: str, line: int | None = None):
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


class SchemaError(DataError):
    pass


def schema_tag(name: str) -> str:
    return f"{name}/{SCHEMAS[name]}"


def check_schema(obj: dict, name: str, path, line: int | None = None) -> None:
    tag = obj.get("schema") if isinstance(obj, dict) else None
    if not isinstance(tag, str) or "/" not in tag:
        raise SchemaError(path, f"missing schema tag (expected {schema_tag(name)!r})", line)
    got, _, version = tag.partition("/")
    if got != name:
        raise SchemaError(path, f"expected a {name!r} record, found {got!r}", line)
    if version != str(SCHEMAS[name]):
        raise SchemaError(
            path,
            f"{name} schema version {version} is not supported (this build reads version {SCHEMAS[name]}); "
            f"re-run `{PRODUCER[name]}` to migrate",
            line,
        )


# ---------------------------------------------------------------- numbers


def fnum(x: float | None):
    """JSON-safe float: NaN becomes null."""
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


def unum(x) -> float:
    return math.nan if x is None else float(x)


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False, separators=(",", ":"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_jsonl(path, records: Iterable[dict]) -> int:
    lines = [dumps(r) for r in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return len(lines)


def read_jsonl(path, name: str) -> Iterator[tuple[int, dict]]:
    """Yield (line number, record) for every non-blank line, schema checked."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(path, f"cannot open ({exc.strerror})") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(path, f"invalid JSON ({exc.msg})", lineno) from exc
            check_schema(obj, name, path, lineno)
            yield lineno, obj


def read_json(path, name: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise DataError(path, f"cannot open ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(path, f"invalid JSON ({exc.msg})", exc.lineno) from exc
    check_schema(obj, name, path)
    return obj


# ---------------------------------------------------------------- AIS CSV


def write_ais_csv(path, messages: Iterable[AisMessage]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    n = 0
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AIS_COLUMNS)
        for m in messages:
            w.writerow(
                [m.vessel_id]
                + [_fmt(getattr(m, f)) for f in _FLOAT_COLUMNS]
                + [m.ship_type, m.destination_text]
            )
            n += 1
    os.replace(tmp, path)
    return n


def read_ais_csv(path) -> list[AisMessage]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(path, f"cannot open ({exc.strerror})") from exc
    out = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(path, "empty file", 1)
        missing = [c for c in AIS_COLUMNS if c not in header]
        if missing:
            raise DataError(path, f"missing columns {missing}", 1)
        col = {c: header.index(c) for c in AIS_COLUMNS}
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(path, f"expected {len(header)} fields, found {len(row)}", lineno)
            vals = {}
            for f in _FLOAT_COLUMNS:
                raw = row[col[f]].strip()
                try:
                    vals[f] = float(raw) if raw else math.nan
                except ValueError:
                    raise DataError(path, f"column {f!r}: cannot parse {raw!r} as a number", lineno) from None
            if not math.isfinite(vals["timestamp"]) or vals["timestamp"] <= 0:
                raise DataError(path, "timestamp must be a positive number", lineno)
            if math.isnan(vals["lon"]) or math.isnan(vals["lat"]):
                raise DataError(path, "position is missing", lineno)
            out.append(
                AisMessage(
                    **vals,
                    ship_type=row[col["ship_type"]],
                    vessel_id=row[col["vessel_id"]],
                    destination_text=row[col["destination"]],
                )
            )
    return out


# ---------------------------------------------------------------- ports


def ports_to_json(ports: Iterable[PortRecord], extra: dict | None = None) -> dict:
    return {
        "schema": schema_tag("ports"),
        "ports": [
            {
                "port_id": p.port_id,
                "name": p.name,
                "locode": p.locode,
                "polygon": [[v.lon, v.lat] for v in p.polygon],
            }
            for p in ports
        ],
        **(extra or {}),
    }


def write_ports(path, ports, extra: dict | None = None) -> None:
    atomic_write_text(path, json.dumps(ports_to_json(ports, extra), indent=1, sort_keys=True) + "\n")


def read_ports(path, alpha: float = DEFAULT_ALPHA) -> list[PortRecord]:
    obj = read_json(path, "ports")
    ports = []
    for k, p in enumerate(obj.get("ports", [])):
        try:
            ports.append(PortRecord.from_polygon(p["port_id"], p["name"], p.get("locode", ""), p["polygon"], alpha))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(path, f"port entry {k}: {exc}") from exc
    ids = [p.port_id for p in ports]
    if sorted(ids) != list(range(len(ids))):
        raise DataError(path, "port ids must be exactly 0..P-1")
    return sorted(ports, key=lambda p: p.port_id)


# ---------------------------------------------------------------- segments


def _msg_row(m: AisMessage) -> list:
    return [fnum(getattr(m, f)) for f in _FLOAT_COLUMNS]


def segment_to_json(seg: Segment, seg_id: str) -> dict:
    return {
        "schema": schema_tag("segment"),
        "id": seg_id,
        "vessel_id": seg.vessel_id,
        "departure": seg.departure,
        "destination": seg.destination,
        "ship_type": seg.ship_type,
        "fields": list(_FLOAT_COLUMNS),
        "rows": [_msg_row(m) for m in seg.messages],
        "texts": [m.destination_text for m in seg.messages],
        "tags": list(seg.tags),
        "candidates": [list(c) for c in seg.candidates],
    }


def segment_from_json(obj: dict) -> Segment:
    if obj.get("fields") != list(_FLOAT_COLUMNS):
        raise ValueError(f"unexpected message fields {obj.get('fields')}")
    n = len(obj["rows"])
    if not (len(obj["texts"]) == len(obj["tags"]) == len(obj["candidates"]) == n):
        raise ValueError("rows, texts, tags and candidates differ in length")
    msgs = []
    for row, text in zip(obj["rows"], obj["texts"]):
        vals = dict(zip(_FLOAT_COLUMNS, (unum(v) for v in row)))
        msgs.append(AisMessage(**vals, ship_type=obj["ship_type"], vessel_id=obj["vessel_id"], destination_text=text))
    return Segment(
        obj["vessel_id"],
        msgs,
        [int(t) for t in obj["tags"]],
        [tuple(int(c) for c in cs) for cs in obj["candidates"]],
        obj["departure"],
        obj["destination"],
        {"id": obj["id"]},
    )


def write_segments(path, segments: Iterable[Segment]) -> int:
    return write_jsonl(path, (segment_to_json(s, s.meta.get("id", f"{s.vessel_id}:{i}")) for i, s in enumerate(segments)))


def read_segments(path) -> list[Segment]:
    out = []
    for lineno, obj in read_jsonl(path, "segment"):
        try:
            out.append(segment_from_json(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(path, f"bad segment record ({exc})", lineno) from exc
    return out


def rejection_to_json(r: Rejection, stage: str) -> dict:
    return {
        "schema": schema_tag("rejection"),
        "stage": stage,
        "vessel_id": r.vessel_id,
        "departure": r.departure,
        "destination": r.destination,
        "reason": r.reason,
        "n_messages": r.n_messages,
        "start_timestamp": fnum(r.start_timestamp),
    }


# ---------------------------------------------------------------- nested sequences


def nested_to_json(seq: NestedSequence, split: str | None = None) -> dict:
    return {
        "schema": schema_tag("nested"),
        "id": seq.traj_id,
        "departure": seq.departure,
        "label": seq.label,
        "ship_type": seq.ship_type,
        "cell_size": seq.cell_size,
        "split": split,
        "fields": list(RAW_FIELDS),
        "elements": [
            {"col": e.col, "row": e.row, "center": list(e.center), "rows": [[fnum(v) for v in r] for r in e.rows]}
            for e in seq.elements
        ],
    }


def nested_from_json(obj: dict) -> tuple[NestedSequence, str | None]:
    if obj.get("fields") != list(RAW_FIELDS):
        raise ValueError(f"unexpected element fields {obj.get('fields')}")
    elements = []
    for e in obj["elements"]:
        rows = np.array([[unum(v) for v in r] for r in e["rows"]], dtype=float).reshape(-1, len(RAW_FIELDS))
        if len(rows) == 0:
            raise ValueError("empty grid element")
        elements.append(GridElement(int(e["col"]), int(e["row"]), rows, tuple(float(c) for c in e["center"])))
    if not elements:
        raise ValueError("sequence has no grid elements")
    seq = NestedSequence(
        elements,
        int(obj["departure"]),
        obj["ship_type"],
        None if obj.get("label") is None else int(obj["label"]),
        obj["id"],
        float(obj["cell_size"]),
    )
    return seq, obj.get("split")


def write_nested(path, seqs: Iterable[NestedSequence], splits: Iterable[str | None] | None = None) -> int:
    seqs = list(seqs)
    splits = list(splits) if splits is not None else [None] * len(seqs)
    return write_jsonl(path, (nested_to_json(s, sp) for s, sp in zip(seqs, splits)))


def read_nested(path) -> list[tuple[NestedSequence, str | None]]:
    out = []
    for lineno, obj in read_jsonl(path, "nested"):
        try:
            out.append(nested_from_json(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(path, f"bad nested-sequence record ({exc})", lineno) from exc
    return out


# ---------------------------------------------------------------- scaler sidecar


def write_scaler(path, scaler: FeatureScaler) -> None:
    atomic_write_text(path, json.dumps({"schema": schema_tag("scaler"), **scaler.to_dict()}, indent=1) + "\n")


def read_scaler(path) -> FeatureScaler:
    obj = read_json(path, "scaler")
    try:
        return FeatureScaler.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(path, f"bad scaler record ({exc})") from exc
