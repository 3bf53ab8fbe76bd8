"""Anytime evaluation loop, the separated scoring program and ablation drivers.

A run writes one snapshot file per finished epoch while training goes on.
Test labels are read only by :func:`score_predictions`, after training has
returned, so the learning curve can always be rebuilt from disk alone.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import re
import statistics
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import plot
from .augment import builtin_pool
from .data import (
    infer_meta,
    load_dataset,
    load_images,
    load_labels,
    resize_to_target,
    split_train_valid,
    target_input_shape,
)
from .errors import ConfigError, OrderingError, ScoringError
from .metrics import (
    AlcConfig,
    LearningCurve,
    alc,
    nauc_macro,
    per_class_nauc,
    read_curve_csv,
    write_curve_csv,
)
from .model import load_checkpoint, save_checkpoint
from .search import SearchConfig
from .trainer import AugmentMode, TrainerConfig, fit, init_model

log = logging.getLogger(__name__)

SNAPSHOT_RE = re.compile(r"^snap_(.+)\.csv$")

# "cpu" charges the budget with this process's CPU time, which factors out
# contention from other work on a shared machine
CLOCKS = {"wall": time.perf_counter, "cpu": time.process_time}


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    test: str = None
    out: str = "run"
    budget: float = 1200.0
    t0: float = 60.0
    mode: AugmentMode = AugmentMode.SEARCHED
    seed: int = 0
    valid_fraction: float = 0.2
    warmstart: str = None
    clock: str = "wall"
    trainer: TrainerConfig = TrainerConfig()
    search: SearchConfig = SearchConfig()

    def __post_init__(self):
        object.__setattr__(self, "mode", AugmentMode(self.mode))
        if not self.budget > 0:
            raise ConfigError(f"budget must be positive, got {self.budget}")
        if not self.t0 > 0:
            raise ConfigError(f"t0 must be positive, got {self.t0}")
        if self.clock not in CLOCKS:
            raise ConfigError(f"clock must be one of {sorted(CLOCKS)}, got {self.clock!r}")

    @property
    def test_dir(self):
        # default layout: <root>/train next to <root>/test
        if self.test:
            return Path(self.test)
        return Path(self.dataset).parent / "test"

    def to_dict(self):
        d = asdict(self)
        d["mode"] = self.mode.value
        d["trainer"]["widths"] = list(self.trainer.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("trainer"), dict):
            d["trainer"] = TrainerConfig(**d["trainer"])
        if isinstance(d.get("search"), dict):
            d["search"] = SearchConfig(**d["search"])
        return cls(**d)


def with_overrides(cfg, overrides):
    """Apply ``{"field": v, "trainer.tau": v, "search.C": v}`` style overrides."""
    top, nested = {}, {"trainer": {}, "search": {}}
    names = {f.name for f in fields(RunConfig)}
    for key, value in overrides.items():
        head, _, tail = key.partition(".")
        if tail:
            if head not in nested:
                raise ConfigError(f"unknown config section {head!r}")
            nested[head][tail] = value
        elif key in names:
            top[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        if nested["trainer"]:
            top["trainer"] = replace(top.get("trainer", cfg.trainer), **nested["trainer"])
        if nested["search"]:
            top["search"] = replace(top.get("search", cfg.search), **nested["search"])
        return replace(cfg, **top)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class RunReport:
    curve: LearningCurve
    alc: float
    final_nauc: float
    search: dict = None
    log: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    alc_rescored: float = None
    per_class_nauc: list = field(default_factory=list)
    out: str = ""

    def to_json(self):
        def clean(x):
            return None if isinstance(x, float) and math.isnan(x) else x

        return {
            "alc": self.alc,
            "alc_rescored": self.alc_rescored,
            "final_nauc": clean(self.final_nauc),
            "per_class_nauc": [clean(float(v)) for v in self.per_class_nauc],
            "curve": [[t, v] for t, v in self.curve.points],
            "search": self.search,
            "log": [{k: clean(v) for k, v in r.items()} for r in self.log],
            "config": self.config,
            "wall_clock": self.wall_clock,
        }

    @classmethod
    def from_json(cls, doc):
        final = doc.get("final_nauc")
        return cls(
            curve=LearningCurve(tuple(tuple(p) for p in doc["curve"])),
            alc=doc["alc"],
            final_nauc=float("nan") if final is None else final,
            search=doc.get("search"),
            log=doc.get("log", []),
            config=doc.get("config", {}),
            wall_clock=doc.get("wall_clock", 0.0),
            alc_rescored=doc.get("alc_rescored"),
            per_class_nauc=[float("nan") if v is None else v
                            for v in doc.get("per_class_nauc", [])],
        )


# ---------------------------------------------------------------------------
# snapshots and scoring


def snapshot_name(timestamp):
    return f"snap_{timestamp!r}.csv"


def write_snapshot(directory, snapshot, names):
    path = Path(directory) / snapshot_name(float(snapshot.timestamp))
    tmp = path.with_suffix(".tmp")
    k = snapshot.scores.shape[1]
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file"] + [f"score_{i}" for i in range(k)])
        for name, row in zip(names, snapshot.scores):
            w.writerow([name] + [repr(float(v)) for v in row])
    # rename so a reader never sees a half-written snapshot
    os.replace(tmp, path)
    return path


def _read_snapshot(path, k):
    try:
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ScoringError(f"{path.name}: unreadable snapshot: {exc}") from exc
    expected = ["file"] + [f"score_{i}" for i in range(k)]
    if not rows or rows[0] != expected:
        raise ScoringError(f"{path.name}: bad header, expected {k} score columns")
    names, scores = [], []
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != k + 1:
            raise ScoringError(f"{path.name}:{line_no}: expected {k + 1} fields")
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ScoringError(f"{path.name}:{line_no}: {exc}") from exc
        if not all(math.isfinite(v) for v in vals):
            raise ScoringError(f"{path.name}:{line_no}: non-finite score")
        names.append(row[0])
        scores.append(vals)
    return names, np.array(scores, dtype=np.float64).reshape(len(names), k)


def _snapshot_files(directory):
    found = []
    for p in Path(directory).iterdir():
        m = SNAPSHOT_RE.match(p.name)
        if not m:
            continue
        try:
            ts = float(m.group(1))
        except ValueError as exc:
            raise ScoringError(f"{p.name}: cannot parse timestamp") from exc
        if not (math.isfinite(ts) and ts >= 0):
            raise ScoringError(f"{p.name}: invalid timestamp {ts}")
        found.append((ts, p))
    found.sort(key=lambda x: x[0])
    return found


def score_predictions(snapshot_dir, labels, cfg=AlcConfig()):
    """Rebuild the learning curve from snapshot files and score it.

    ``labels`` is a test dataset directory or a ``(file names, matrix)`` pair.
    Files are ordered by the timestamp embedded in their names, so discovery
    order does not matter.
    """
    if isinstance(labels, (str, os.PathLike)):
        names, matrix = load_labels(labels)
    else:
        names, matrix = labels
        matrix = np.asarray(matrix)
    k = matrix.shape[1]
    row_of = {n: i for i, n in enumerate(names)}
    points = []
    files = []
    for ts, path in _snapshot_files(snapshot_dir):
        snap_names, scores = _read_snapshot(path, k)
        if sorted(snap_names) != sorted(names):
            raise ScoringError(f"{path.name}: sample names do not match the label file")
        y = matrix[[row_of[n] for n in snap_names]]
        try:
            v = nauc_macro(scores, y)
        except ScoringError as exc:
            raise ScoringError(f"{path.name}: {exc}") from exc
        if points and ts == points[-1][0]:
            raise OrderingError(f"{path.name}: duplicate timestamp {ts}")
        points.append((ts, v))
        files.append(path.name)
    curve = LearningCurve(tuple(points))
    return {"curve": curve, "alc": alc(curve, cfg), "files": files}


def export_curve(report, path):
    curve = report.curve if hasattr(report, "curve") else report
    return write_curve_csv(curve, path)


def import_curve(path):
    return read_curve_csv(path)


# ---------------------------------------------------------------------------
# a single run


def run(cfg, clock=None):
    """Train under ``cfg.budget`` seconds, writing snapshots, then score them.

    ``clock`` overrides the clock named by ``cfg.clock`` (tests pass a fake).
    """
    clock = clock or CLOCKS[cfg.clock]
    start = clock()
    ds = load_dataset(cfg.dataset)
    _, test_names, test_raw = load_images(cfg.test_dir)
    if not test_raw:
        raise ScoringError(f"{cfg.test_dir}: no test images")
    out = Path(cfg.out)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    for stale in snap_dir.glob("snap_*.csv"):
        stale.unlink()
    train, valid = split_train_valid(ds, cfg.valid_fraction, cfg.seed)
    spec = target_input_shape(infer_meta(train))
    tcfg = replace(cfg.trainer, seed=cfg.seed)
    scfg = replace(cfg.search, seed=cfg.seed)
    warm = load_checkpoint(cfg.warmstart) if cfg.warmstart else None
    model = init_model(spec, ds.num_classes, tcfg, warm)
    test_images = [resize_to_target(im, spec) for im in test_raw]

    snapshots = []

    def emit(snap):
        write_snapshot(snap_dir, snap, test_names)
        snapshots.append(snap)

    log_path = out / "train_log.jsonl"
    log_fh = log_path.open("w")

    def on_epoch(record):
        log_fh.write(json.dumps(record) + "\n")
        log_fh.flush()

    try:
        result = fit(model, train, valid, tcfg, cfg.budget, builtin_pool(), emit=emit,
                     test_images=test_images, mode=cfg.mode, search_cfg=scfg, clock=clock,
                     start_time=start, on_epoch=on_epoch)
    finally:
        log_fh.close()
    wall = clock() - start
    save_checkpoint(result.model, out / "model.ckpt", fingerprint=ds.name)

    # training is over; only now are test labels read
    label_names, label_matrix = load_labels(cfg.test_dir)
    if label_names != test_names:
        raise ScoringError(f"{cfg.test_dir}: label rows do not match test images")
    acfg = AlcConfig(cfg.budget, cfg.t0)
    curve = LearningCurve(tuple((s.timestamp, nauc_macro(s.scores, label_matrix))
                                for s in snapshots))
    in_process = alc(curve, acfg)
    rescored = score_predictions(snap_dir, (label_names, label_matrix), acfg)

    search_doc = result.search.to_json() if result.search is not None else None
    (out / "search-report.json").write_text(json.dumps(
        {"mode": cfg.mode.value, "trigger_epoch": result.trigger_epoch,
         "policy": result.policy.to_json() if result.policy is not None else None,
         "search": search_doc}, indent=1))
    report = RunReport(
        curve=curve,
        alc=in_process,
        final_nauc=curve.values[-1] if len(curve) else float("nan"),
        search=search_doc,
        log=result.log,
        config=cfg.to_dict(),
        wall_clock=wall,
        alc_rescored=rescored["alc"],
        per_class_nauc=(per_class_nauc(snapshots[-1].scores, label_matrix).tolist()
                        if snapshots else []),
        out=str(out),
    )
    export_curve(report, out / "curve.csv")
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=1))
    return report


def load_report(path):
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return RunReport.from_json(json.loads(path.read_text()))


# ---------------------------------------------------------------------------
# ablations


def _cell_name(overrides):
    return ",".join(f"{k}={v}" for k, v in overrides.items()) or "base"


def ablation(base, grid, seeds, out):
    """Run every grid cell for every seed; failures are recorded, not raised.

    ``grid`` is a list of override dicts (see :func:`with_overrides`).
    Writes ``summary.json`` and ``ablation.svg`` under ``out``.
    """
    if not grid:
        raise ConfigError("ablation grid is empty")
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for overrides in grid:
        name = _cell_name(overrides)
        runs, errors = [], []
        for seed in seeds:
            run_dir = out / re.sub(r"[^A-Za-z0-9_.=,-]", "_", name) / f"seed_{seed}"
            try:
                cfg = with_overrides(base, {**overrides, "seed": seed, "out": str(run_dir)})
                rep = run(cfg)
                final = None if math.isnan(rep.final_nauc) else rep.final_nauc
                runs.append({"seed": seed, "alc": rep.alc, "final_nauc": final,
                             "out": str(run_dir)})
            except Exception as exc:  # recorded per cell, the grid goes on
                log.warning("cell %s seed %s failed: %s", name, seed, exc)
                errors.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
        alcs = [r["alc"] for r in runs]
        naucs = [r["final_nauc"] for r in runs if r["final_nauc"] is not None]
        cells.append({
            "name": name,
            "overrides": overrides,
            "runs": runs,
            "errors": errors,
            "alc_mean": statistics.fmean(alcs) if alcs else None,
            "alc_median": statistics.median(alcs) if alcs else None,
            "nauc_mean": statistics.fmean(naucs) if naucs else None,
            "nauc_median": statistics.median(naucs) if naucs else None,
        })
    summary = {"seeds": list(seeds), "cells": cells}
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    plot.render_boxplot(
        [(c["name"], [r["alc"] for r in c["runs"]]) for c in cells], out / "ablation.svg"
    )
    return summary
