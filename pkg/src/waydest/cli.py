"""``waydest`` command line: one subcommand per pipeline stage.

Stages talk only through files. Each output gets a ``.manifest.json``
sidecar recording input hashes, the full configuration, the seed and the
package version, so a stage can be re-run exactly.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .annotate import annotate_all
from .config import CONFIG_ENV, ConfigError, RunConfig
from .estimator import WayClassifier, stratified_split
from .formats import (
    DataError,
    atomic_write_text,
    read_ais_csv,
    read_nested,
    read_ports,
    read_segments,
    rejection_to_json,
    schema_tag,
    sha256_file,
    write_ais_csv,
    write_jsonl,
    write_nested,
    write_ports,
    write_scaler,
    write_segments,
)
from .geo import GridSpec
from .metrics import MajorityBaseline, metrics_report, overall_accuracy, quartile_csv, records_from_logits
from .nn.io import CheckpointError
from .refine import refine_all
from .represent import reorganize
from .synth import NoiseProfile, WorldSpec, generate
from .train import NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("waydest")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_manifest(output, stage: str, inputs: dict[str, str], cfg: RunConfig, seed, outputs=()) -> None:
    paths = [Path(output), *map(Path, outputs)]
    manifest = {
        "schema": schema_tag("manifest"),
        "stage": stage,
        "version": __version__,
        "seed": seed,
        "config": cfg.to_dict(),
        "inputs": {k: {"path": str(v), "sha256": sha256_file(v)} for k, v in sorted(inputs.items())},
        "outputs": {p.name: sha256_file(p) for p in paths if p.is_file()},
    }
    atomic_write_text(f"{output}.manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------- stages


def cmd_synth(args, cfg: RunConfig) -> int:
    s = cfg["synth"]
    spec = WorldSpec(
        seed=s["seed"],
        n_ports=s["n_ports"],
        n_vessels=s["n_vessels"],
        voyages_per_vessel=s["voyages_per_vessel"],
        lanes_per_port=s["lanes_per_port"],
        min_port_separation_km=s["min_port_separation_km"],
        mean_interarrival_min=s["mean_interarrival_min"],
        max_interarrival_days=s["max_interarrival_days"],
        route_jitter_km=s["route_jitter_km"],
        noise=NoiseProfile(s["typo_rate"], s["sentinel_rate"], s["teleport_rate"], s["unlabelable_rate"]),
    )
    corpus = generate(spec, workers=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ports(out / "ports.json", corpus.world.ports, {"world": corpus.world.to_dict()})
    write_ais_csv(out / "ais.csv", corpus.messages)
    write_jsonl(out / "truth.jsonl", ({"schema": schema_tag("truth"), **t.to_dict()} for t in corpus.truths))
    write_manifest(out / "ais.csv", "synth", {}, cfg, s["seed"], [out / "ports.json", out / "truth.jsonl"])
    print(f"wrote {len(corpus.messages)} messages, {len(corpus.truths)} voyages, {len(corpus.world.ports)} ports to {out}")
    return EXIT_OK


def _rejections_path(args, default_suffix):
    return args.rejections or str(Path(args.out).with_suffix("")) + default_suffix


def cmd_annotate(args, cfg: RunConfig) -> int:
    a = cfg["annotate"]
    ports = read_ports(args.ports, alpha=a["alpha"])
    msgs = read_ais_csv(args.ais)
    segs, rejected = annotate_all(msgs, ports, a["threshold"], a["max_gap_days"], a["max_ngram"], workers=args.threads)
    counters: dict[str, int] = {}
    for s in segs:
        k = counters.get(s.vessel_id, 0)
        counters[s.vessel_id] = k + 1
        s.meta["id"] = f"{s.vessel_id}:{k}"
    write_segments(args.out, segs)
    rej_path = _rejections_path(args, ".rejections.jsonl")
    write_jsonl(rej_path, (rejection_to_json(r, "annotate") for r in rejected))
    write_manifest(args.out, "annotate", {"ports": args.ports, "ais": args.ais}, cfg, None, [rej_path])
    print(f"{len(segs)} segments, {len(rejected)} rejected")
    return EXIT_OK


def cmd_refine(args, cfg: RunConfig) -> int:
    r = cfg["refine"]
    segs = read_segments(args.segments)
    kept, rejected = refine_all(
        segs,
        eps=r["eps"],
        min_pts=r["min_pts"],
        max_passes=r["max_passes"],
        max_gap_days=cfg["annotate"]["max_gap_days"],
        sog_average=r["sog_average"],
    )
    write_segments(args.out, kept)
    rej_path = _rejections_path(args, ".rejections.jsonl")
    rows = []
    for seg, res in rejected:
        rows.append(
            {
                "schema": schema_tag("rejection"),
                "stage": "refine",
                "id": seg.meta.get("id"),
                "vessel_id": seg.vessel_id,
                "departure": seg.departure,
                "destination": seg.destination,
                "reason": res.reason,
                "n_messages": len(seg),
                "removed": len(res.removed),
            }
        )
    write_jsonl(rej_path, rows)
    write_manifest(args.out, "refine", {"segments": args.segments}, cfg, None, [rej_path])
    print(f"{len(kept)} segments kept, {len(rejected)} rejected")
    return EXIT_OK


def cmd_represent(args, cfg: RunConfig) -> int:
    r = cfg["represent"]
    spec = GridSpec(r["cell_size"])
    segs = read_segments(args.segments)
    seqs = [reorganize(s, spec, s.meta.get("id", str(i))) for i, s in enumerate(segs)]
    fractions = (r["train_fraction"], r["val_fraction"], r["test_fraction"])
    labels = [s.label for s in seqs]
    split = [None] * len(seqs)
    for name, idx in zip(("train", "val", "test"), stratified_split(labels, fractions, r["split_seed"])):
        for i in idx:
            split[i] = name
    write_nested(args.out, seqs, split)
    write_manifest(args.out, "represent", {"segments": args.segments}, cfg, r["split_seed"])
    counts = {k: split.count(k) for k in ("train", "val", "test")}
    print(f"{len(seqs)} nested sequences: {counts}")
    return EXIT_OK


def _split(items, name):
    return [s for s, sp in items if sp == name]


def cmd_train(args, cfg: RunConfig) -> int:
    t, m = cfg["train"], cfg["model"]
    ports = read_ports(args.ports, alpha=cfg["annotate"]["alpha"])
    items = read_nested(args.nested)
    train_set = _split(items, "train") or [s for s, sp in items if sp is None]
    val_set = _split(items, "val") or None
    if not train_set:
        raise DataError(args.nested, "no training sequences")
    clf = WayClassifier(
        n_ports=len(ports),
        preset=m["preset"],
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        lr=t["lr"],
        dropout=m["dropout"],
        gradient_dropout=t["gradient_dropout"],
        poisson_lambda=cfg["represent"]["poisson_lambda"],
        seed=t["seed"],
    )
    log_path = args.log or str(Path(args.out).with_suffix("")) + ".log.jsonl"
    meta = {"port_names": [p.name for p in ports]}
    lines = []

    def on_epoch(entry, model):
        lines.append(entry.to_json())
        atomic_write_text(log_path, "".join(line + "\n" for line in lines))
        if entry.best:
            clf.best_epoch_ = entry.epoch
            clf.save(args.out, meta)

    clf.best_epoch_ = 0
    clf.fit(train_set, validation=val_set, on_epoch=on_epoch)
    clf.save(args.out, meta)
    scaler_path = str(Path(args.out).with_suffix("")) + ".scaler.json"
    write_scaler(scaler_path, clf.scaler_)
    outputs = [log_path, scaler_path]
    write_manifest(args.out, "train", {"nested": args.nested, "ports": args.ports}, cfg, t["seed"], outputs)
    best = clf.history_[clf.best_epoch_ - 1] if clf.best_epoch_ else None
    print(f"trained {clf.epochs} epochs; best epoch {clf.best_epoch_}" + (f", val loss {best.val_loss:.4f}" if best and best.val_loss is not None else ""))
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    e = cfg["eval"]
    split = args.split or e["split"]
    clf = WayClassifier.load(args.model)
    items = read_nested(args.nested)
    seqs = _split(items, split)
    if not seqs:
        raise DataError(args.nested, f"no sequences in split {split!r}")
    if any(s.label is None for s in seqs):
        raise DataError(args.nested, "evaluation sequences need labels")
    logits = clf.decision_function(seqs, seed=e["seed"])
    records = records_from_logits(logits, [s.label for s in seqs], [s.traj_id for s in seqs])
    report = metrics_report(records, seed=e["seed"], port_names=clf.meta_.get("port_names"))
    report["split"] = split
    fit_set = _split(items, "train") or seqs
    base = MajorityBaseline().fit([s.departure for s in fit_set], [s.label for s in fit_set])
    brecs = base.records([s.departure for s in seqs], [s.label for s in seqs], [len(s) for s in seqs])
    report["baseline_accuracy"] = overall_accuracy(brecs)
    atomic_write_text(args.out, json.dumps(report, indent=1, sort_keys=True) + "\n")
    csv_path = args.csv or str(Path(args.out).with_suffix("")) + ".quartiles.csv"
    atomic_write_text(csv_path, quartile_csv(report))
    write_manifest(args.out, "eval", {"model": args.model, "nested": args.nested}, cfg, e["seed"], [csv_path])
    q = " ".join(
        f"Q{k}={'n/a' if report['quartiles'][f'q{k}']['accuracy'] is None else format(report['quartiles'][f'q{k}']['accuracy'], '.4f')}"
        for k in (1, 2, 3, 4)
    )
    print(
        f"accuracy {report['overall_accuracy']:.4f}  macro-F1 {report['macro_f1']:.4f}  {q}  "
        f"baseline {report['baseline_accuracy']:.4f}"
    )
    return EXIT_OK


def cmd_infer(args, cfg: RunConfig) -> int:
    clf = WayClassifier.load(args.model)
    items = read_nested(args.nested)
    if args.id is None:
        seq = items[0][0]
    else:
        found = [s for s, _ in items if s.traj_id == args.id]
        if not found:
            raise DataError(args.nested, f"no trajectory with id {args.id!r}")
        seq = found[0]
    if args.prefix is not None:
        if args.prefix < 1:
            raise UsageError("--prefix must be at least 1")
        seq = seq.prefix(args.prefix)
    names = clf.meta_.get("port_names") or [str(i) for i in range(clf.n_ports)]
    probs = clf.predict_proba([seq], seed=cfg["eval"]["seed"])[0]
    k = min(args.top, probs.shape[1])
    print(f"trajectory {seq.traj_id}: {len(seq)} steps, departure {names[seq.departure]}")
    for step, (p, el) in enumerate(zip(probs, seq.elements), 1):
        top = np.argsort(-p, kind="stable")[:k]
        ranked = "  ".join(f"{names[j]} {p[j]:.3f}" for j in top)
        print(f"step {step:3d} cell ({el.center[0]:+.1f}, {el.center[1]:+.1f})  {ranked}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="waydest", description="AIS destination estimation pipeline")
    p.add_argument("--version", action="version", version=f"waydest {__version__}")
    p.add_argument("--config", help=f"config file (default: ${CONFIG_ENV})")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")
    p.add_argument("--threads", type=int, default=1, help="cap on worker processes and BLAS threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic AIS world")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("annotate", help="extract port-to-port segments from raw AIS")
    s.add_argument("--ports", required=True)
    s.add_argument("--ais", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--rejections")
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("refine", help="remove erroneous messages and re-validate")
    s.add_argument("--segments", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--rejections")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("represent", help="build nested grid sequences and the data split")
    s.add_argument("--segments", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_represent)

    s = sub.add_parser("train", help="train the model")
    s.add_argument("--nested", required=True)
    s.add_argument("--ports", required=True)
    s.add_argument("--out", required=True, help="checkpoint path (.npz)")
    s.add_argument("--log", help="per-epoch JSONL log")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="compute metrics on a split")
    s.add_argument("--model", required=True)
    s.add_argument("--nested", required=True)
    s.add_argument("--out", required=True, help="metrics JSON")
    s.add_argument("--csv", help="quartile accuracy CSV")
    s.add_argument("--split", help="split name (default from config)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="print top destinations per step")
    s.add_argument("--model", required=True)
    s.add_argument("--nested", required=True)
    s.add_argument("--id", help="trajectory id (default: first record)")
    s.add_argument("--prefix", type=int, help="use only the first K grid elements")
    s.add_argument("--top", type=int, default=5)
    s.set_defaults(func=cmd_infer)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        cfg = RunConfig.load(args.config, args.set)
        with threadpool_limits(limits=args.threads):
            return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"waydest: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"waydest: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (KeyError, ValueError) as exc:
        # inconsistent but parseable inputs, e.g. a ship type the model never saw
        print(f"waydest: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"waydest: data error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"waydest: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
