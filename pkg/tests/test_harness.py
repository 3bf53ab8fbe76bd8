import json
import random
from pathlib import Path

import numpy as np
import pytest

import anytimecv.harness as harness
from anytimecv.errors import ConfigError, IntegrityError, LoadError, ScoringError
from anytimecv.harness import (
    RunConfig,
    RunReport,
    ablation,
    export_curve,
    import_curve,
    load_report,
    score_predictions,
    with_overrides,
    write_snapshot,
)
from anytimecv.metrics import AlcConfig, LearningCurve, PredictionSnapshot, alc
from anytimecv.trainer import TrainerConfig

from conftest import StepClock


def _cfg(root, out, **kw):
    base = RunConfig(dataset=str(root / "train"), out=str(out), budget=30.0, t0=3.0,
                     trainer=TrainerConfig(widths=(4,), batch_size=32))
    return with_overrides(base, {"search.T": 4, **kw})


@pytest.fixture(scope="module")
def searched_run(shapes_dir, tmp_path_factory):
    root, _ = shapes_dir
    out = tmp_path_factory.mktemp("run_searched")
    return harness.run(_cfg(root, out, mode="searched"), clock=StepClock(0.25))


def test_report_contents(searched_run):
    rep = searched_run
    out = Path(rep.out)
    assert len(rep.curve) >= 2
    assert rep.alc == pytest.approx(alc(rep.curve, AlcConfig(30.0, 3.0)), abs=0)
    assert rep.final_nauc == rep.curve.values[-1]
    assert len(rep.per_class_nauc) == 4
    for name in ("report.json", "curve.csv", "search-report.json", "model.ckpt",
                 "train_log.jsonl"):
        assert (out / name).is_file(), name
    recs = [json.loads(x) for x in (out / "train_log.jsonl").read_text().splitlines()]
    assert set(recs[0]) == {"epoch", "lr", "loss", "valid_nauc", "phase", "wall_clock"}
    assert len(recs) == len(rep.curve)


def test_rescoring_matches_in_process(searched_run):
    rep = searched_run
    assert abs(rep.alc_rescored - rep.alc) <= 1e-12
    root = Path(rep.config["dataset"]).parent
    again = score_predictions(Path(rep.out) / "snapshots", root / "test",
                              AlcConfig(rep.config["budget"], rep.config["t0"]))
    assert abs(again["alc"] - rep.alc) <= 1e-12


def test_snapshot_timestamps_within_budget(searched_run):
    ts = searched_run.curve.timestamps
    assert all(b > a for a, b in zip(ts, ts[1:]))
    assert ts[-1] <= 30.0


def test_report_round_trip(searched_run):
    loaded = load_report(searched_run.out)
    assert loaded.curve == searched_run.curve and loaded.alc == searched_run.alc
    assert loaded.config == searched_run.config
    assert RunConfig.from_dict(loaded.config).trainer.widths == (4,)


def test_none_and_searched_share_prefix(shapes_dir, tmp_path, searched_run):
    root, _ = shapes_dir
    other = harness.run(_cfg(root, tmp_path / "none", mode="none"), clock=StepClock(0.25))
    k = json.loads((Path(searched_run.out) / "search-report.json").read_text())["trigger_epoch"]
    n = k  # epochs 1..k ran before either run diverged
    assert n >= 1 and len(other.curve) > n
    assert searched_run.curve.points[:n] == other.curve.points[:n]
    for a, b in zip(searched_run.log[:n], other.log[:n]):
        assert a == b


def test_labels_read_only_after_training(shapes_dir, tmp_path, monkeypatch):
    root, _ = shapes_dir
    events = []
    real_fit, real_labels = harness.fit, harness.load_labels

    def fit_spy(*a, **k):
        events.append("fit")
        return real_fit(*a, **k)

    def labels_spy(*a, **k):
        events.append("labels")
        return real_labels(*a, **k)

    monkeypatch.setattr(harness, "fit", fit_spy)
    monkeypatch.setattr(harness, "load_labels", labels_spy)
    harness.run(_cfg(root, tmp_path / "o", mode="none", budget=4.0), clock=StepClock(0.25))
    assert events[0] == "fit" and "labels" in events[1:]


def test_degenerate_budget(shapes_dir, tmp_path):
    root, _ = shapes_dir
    rep = harness.run(_cfg(root, tmp_path / "d", budget=1.0), clock=StepClock(0.5))
    assert len(rep.curve) <= 1 and rep.alc == 0.0


def test_missing_dataset_fails_before_output(tmp_path):
    cfg = RunConfig(dataset=str(tmp_path / "nope" / "train"), out=str(tmp_path / "o"))
    with pytest.raises(LoadError):
        harness.run(cfg)
    assert not (tmp_path / "o").exists()


def test_bad_configs():
    with pytest.raises(ConfigError):
        RunConfig(dataset="x", budget=0)
    with pytest.raises(ConfigError):
        RunConfig(dataset="x", clock="sundial")
    base = RunConfig(dataset="x")
    with pytest.raises(ConfigError):
        with_overrides(base, {"trainer.nonsense": 1})
    with pytest.raises(ConfigError):
        with_overrides(base, {"colour": "red"})
    assert with_overrides(base, {"trainer.tau": 1.0, "search.C": 2, "seed": 4}).search.C == 2


# ---------------------------------------------------------------------------
# scoring from files alone


def _labels(n=6, k=3):
    names = [f"s{i}.png" for i in range(n)]
    y = np.eye(k, dtype=np.uint8)[np.arange(n) % k]
    return names, y


def test_constant_perfect_snapshots(tmp_path):
    names, y = _labels()
    for t in (0.0, 5.0, 9.5):
        write_snapshot(tmp_path, PredictionSnapshot(t, y.astype(float)), names)
    res = score_predictions(tmp_path, (names, y), AlcConfig(20, 2))
    assert res["alc"] == pytest.approx(1.0, abs=1e-12)


def test_discovery_order_does_not_matter(tmp_path, monkeypatch):
    names, y = _labels(9)
    rng = np.random.default_rng(0)
    for t in (0.3, 1.0, 2.5, 7.0, 11.0):
        write_snapshot(tmp_path, PredictionSnapshot(t, rng.random((9, 3))), names)
    ref = score_predictions(tmp_path, (names, y), AlcConfig(20, 2))
    real_iterdir = Path.iterdir

    def shuffled(self):
        items = list(real_iterdir(self))
        random.Random(42).shuffle(items)
        return iter(items)

    monkeypatch.setattr(Path, "iterdir", shuffled)
    res = score_predictions(tmp_path, (names, y), AlcConfig(20, 2))
    assert res["alc"] == ref["alc"] and res["curve"] == ref["curve"]


def test_row_order_inside_snapshot_is_irrelevant(tmp_path):
    names, y = _labels()
    scores = np.random.default_rng(1).random((6, 3))
    (tmp_path / "a").mkdir()
    write_snapshot(tmp_path / "a", PredictionSnapshot(1.0, scores), names)
    perm = [5, 2, 0, 4, 1, 3]
    (tmp_path / "b").mkdir()
    write_snapshot(tmp_path / "b", PredictionSnapshot(1.0, scores[perm]), [names[i] for i in perm])
    a = score_predictions(tmp_path / "a", (names, y))
    b = score_predictions(tmp_path / "b", (names, y))
    assert a["alc"] == b["alc"]


def test_malformed_snapshot_named(tmp_path):
    names, y = _labels()
    write_snapshot(tmp_path, PredictionSnapshot(1.0, np.ones((6, 3))), names)
    bad = tmp_path / "snap_2.0.csv"
    bad.write_text("file,score_0,score_1,score_2\ns0.png,0.1,oops,0.3\n")
    with pytest.raises(ScoringError, match="snap_2.0.csv"):
        score_predictions(tmp_path, (names, y))
    bad.write_text("file,score_0\n")
    with pytest.raises(ScoringError, match="snap_2.0.csv"):
        score_predictions(tmp_path, (names, y))


def test_snapshot_with_wrong_samples(tmp_path):
    names, y = _labels()
    write_snapshot(tmp_path, PredictionSnapshot(1.0, np.ones((5, 3))), names[:5])
    with pytest.raises(ScoringError):
        score_predictions(tmp_path, (names, y))


# ---------------------------------------------------------------------------
# curve export


def test_export_one_point(tmp_path):
    p = export_curve(LearningCurve(((0.5, 0.25),)), tmp_path / "c.csv")
    assert len(p.read_text().splitlines()) == 2


def test_export_thousand_points(tmp_path):
    rng = np.random.default_rng(3)
    ts = np.cumsum(rng.random(1000) + 1e-3)
    curve = LearningCurve(tuple(zip(ts, rng.uniform(-1, 1, 1000))))
    p = export_curve(curve, tmp_path / "c.csv")
    lines = p.read_text().splitlines()
    assert len(lines) == 1001
    back = import_curve(p)
    assert all(b > a for a, b in zip(back.timestamps, back.timestamps[1:]))
    cfg = AlcConfig(float(ts[-1]) + 1, 10)
    assert alc(back, cfg) == alc(curve, cfg)


def test_report_json_nan_is_null():
    rep = RunReport(curve=LearningCurve(), alc=0.0, final_nauc=float("nan"))
    doc = rep.to_json()
    assert doc["final_nauc"] is None
    json.dumps(doc, allow_nan=False)


# ---------------------------------------------------------------------------
# ablation driver


def test_single_cell_ablation_equals_run(shapes_dir, tmp_path):
    root, _ = shapes_dir
    base = _cfg(root, tmp_path / "unused", mode="none", budget=3.0, clock="cpu")
    summary = ablation(base, [{}], [0], tmp_path / "abl")
    cell = summary["cells"][0]
    assert cell["errors"] == [] and len(cell["runs"]) == 1
    rep = load_report(cell["runs"][0]["out"])
    assert cell["alc_mean"] == cell["alc_median"] == rep.alc
    assert cell["nauc_mean"] == rep.final_nauc
    assert (tmp_path / "abl" / "summary.json").is_file()
    assert (tmp_path / "abl" / "ablation.svg").read_text().startswith("<svg")


def test_ablation_records_failures(shapes_dir, tmp_path):
    root, _ = shapes_dir
    base = _cfg(root, tmp_path / "unused", mode="none", budget=2.0, clock="cpu")
    grid = [{"dataset": str(tmp_path / "missing")}, {"trainer.tau": 1.0}]
    summary = ablation(base, grid, [0], tmp_path / "abl")
    bad, good = summary["cells"]
    assert bad["runs"] == [] and "LoadError" in bad["errors"][0]["error"]
    assert len(good["runs"]) == 1 and good["errors"] == []


def test_ablation_rejects_empty_grid(tmp_path):
    with pytest.raises(ConfigError):
        ablation(RunConfig(dataset="x"), [], [0], tmp_path)


def test_integrity_error_reaches_caller(tmp_path):
    from anytimecv.data import write_dataset

    write_dataset(tmp_path / "train", [], np.zeros((0, 2), dtype=np.uint8))
    with pytest.raises(IntegrityError):
        harness.run(RunConfig(dataset=str(tmp_path / "train"), out=str(tmp_path / "o")))
