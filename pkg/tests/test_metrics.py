import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anytimecv.errors import OrderingError, ScoringError, UndefinedAUCError
from anytimecv.metrics import (
    AlcConfig,
    LearningCurve,
    PredictionSnapshot,
    alc,
    append_point,
    auc,
    midranks,
    nauc_macro,
    nbac,
    per_class_nauc,
    read_curve_csv,
    write_curve_csv,
)


def pair_auc(scores, labels):
    """O(P*N) reference: count wins, half a point per tie."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auc_hand_case():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75, abs=1e-12)
    assert pair_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auc_all_ties_and_perfect():
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0


def test_auc_undefined():
    with pytest.raises(UndefinedAUCError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(ScoringError):
        auc([0.1, 0.2, 0.3], [1, 0])


def test_midranks_ties():
    np.testing.assert_array_equal(midranks([3, 1, 3, 2]), [3.5, 1.0, 3.5, 2.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=60))
def test_auc_matches_pair_counting(rows):
    scores = [s / 6 for s, _ in rows]
    labels = [int(y) for _, y in rows]
    if len(set(labels)) < 2:
        return
    assert abs(auc(scores, labels) - pair_auc(scores, labels)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=40), st.randoms(use_true_random=False))
def test_auc_invariant_under_increasing_map(scores, r):
    labels = [i % 2 for i in range(len(scores))]
    r.shuffle(labels)
    mapped = [math.exp(s) * 3 + 1 for s in scores]
    # exp can merge near-equal floats; only compare when ties are preserved
    if len(set(mapped)) != len(set(scores)):
        return
    assert auc(mapped, labels) == pytest.approx(auc(scores, labels), abs=1e-12)


def test_nauc_macro_examples():
    labels = np.array([[1, 0], [0, 1], [1, 0], [0, 1]])
    assert nauc_macro(np.full((4, 2), 0.3), labels) == 0.0
    perfect = labels.astype(float)
    assert nauc_macro(perfect, labels) == 1.0


def test_nauc_macro_three_classes():
    # per-class AUCs 1.0, 0.75, 0.5 built column by column
    y = np.array([[0, 0, 0], [0, 0, 1], [1, 1, 0], [1, 1, 1]])
    s = np.column_stack([
        [0.1, 0.2, 0.8, 0.9],
        [0.1, 0.4, 0.35, 0.8],
        [0.5, 0.5, 0.5, 0.5],
    ])
    per = per_class_nauc(s, y)
    np.testing.assert_allclose(per, [1.0, 0.5, 0.0], atol=1e-12)
    assert nauc_macro(s, y) == pytest.approx(0.5, abs=1e-12)


def test_nauc_skips_undefined_class():
    y = np.array([[1, 0], [0, 0], [1, 0]])
    s = np.array([[0.9, 0.1], [0.1, 0.2], [0.8, 0.3]])
    assert math.isnan(per_class_nauc(s, y)[1])
    assert nauc_macro(s, y) == 1.0
    with pytest.raises(ScoringError):
        nauc_macro(s, np.zeros((3, 2)))


def test_nauc_accepts_snapshot():
    snap = PredictionSnapshot(1.0, np.eye(2))
    assert nauc_macro(snap.scores, np.eye(2)) == 1.0
    with pytest.raises(ScoringError):
        PredictionSnapshot(-1.0, np.eye(2))
    with pytest.raises(ScoringError):
        PredictionSnapshot(0.0, np.array([[np.nan, 1.0]]))


class TestNbac:
    def test_perfect(self):
        assert nbac([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0

    def test_constant_one(self):
        assert nbac([1.0] * 4, [1, 0, 1, 0]) == 0.0

    def test_tpr1_tnr_half(self):
        # both positives caught, one of two negatives rejected
        assert nbac([0.9, 0.7, 0.6, 0.2], [1, 1, 0, 0]) == pytest.approx(0.5)

    def test_threshold_inclusive(self):
        assert nbac([0.5, 0.4999], [1, 0]) == 1.0


def test_alc_constant_curve():
    for c in (-0.3, 0.0, 0.42, 1.0):
        assert alc(LearningCurve(((0.0, c),)), AlcConfig(300, 7)) == pytest.approx(c, abs=1e-12)


def test_alc_empty_is_zero():
    assert alc(LearningCurve()) == 0.0


def test_alc_worked_example():
    got = alc(LearningCurve(((0.0, 0.0), (600.0, 1.0))), AlcConfig(1200, 60))
    expected = (math.log(1260) - math.log(660)) / math.log(21)
    assert got == pytest.approx(expected, abs=1e-12)
    assert abs(got - 0.21246) < 1e-4


def test_alc_ignores_points_after_budget():
    c = LearningCurve(((0.0, 0.5), (50.0, 1.0)))
    assert alc(c, AlcConfig(40, 10)) == pytest.approx(0.5, abs=1e-12)


def test_append_point_ordering():
    c = append_point(LearningCurve(), 5, 0.3)
    assert c.points == ((5.0, 0.3),)
    with pytest.raises(OrderingError):
        append_point(c, 3, 0.4)
    with pytest.raises(OrderingError):
        LearningCurve(((1.0, 0.1), (1.0, 0.2)))
    with pytest.raises(ScoringError):
        LearningCurve(((1.0, 1.5),))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_alc_grows_with_monotone_appends(values):
    values = sorted(values)
    cfg = AlcConfig(100, 5)
    c, prev = LearningCurve(), 0.0
    for i, v in enumerate(values):
        c = append_point(c, 3.0 * i, v)
        cur = alc(c, cfg)
        assert cur >= prev - 1e-12
        prev = cur


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 10), st.floats(-1, 1)), min_size=1, max_size=20),
       st.floats(0, 1))
def test_alc_dominance_and_earlier_gain(steps, bump):
    t, pts = 0.0, []
    for dt, v in steps:
        t += dt
        pts.append((t, v))
    cfg = AlcConfig(t + 5, 3)
    base = LearningCurve(tuple(pts))
    higher = LearningCurve(tuple((a, min(1.0, v + bump)) for a, v in pts))
    assert alc(higher, cfg) >= alc(base, cfg) - 1e-12
    # shift every point earlier by half its gap to the previous one; that is
    # a gain only when each step goes up from the implicit 0 before the start
    earlier = [(pts[0][0] / 2, pts[0][1])] + [
        ((pts[i - 1][0] + pts[i][0]) / 2, pts[i][1]) for i in range(1, len(pts))
    ]
    if all(b > a for (a, _), (b, _) in zip(earlier, earlier[1:])) and sorted(
        v for _, v in pts
    ) == [v for _, v in pts] and pts[0][1] >= 0:
        assert alc(LearningCurve(tuple(earlier)), cfg) >= alc(base, cfg) - 1e-12


def test_curve_csv_round_trip(tmp_path):
    c = LearningCurve(((0.1, 0.2), (1 / 3, 0.7)))
    p = write_curve_csv(c, tmp_path / "c.csv")
    assert read_curve_csv(p) == c
    (tmp_path / "bad.csv").write_text("t,v\n1,2\n")
    with pytest.raises(ScoringError):
        read_curve_csv(tmp_path / "bad.csv")


def test_brute_force_small_instances():
    # every labelling of 5 samples with 3 distinct score levels
    for labels in itertools.product((0, 1), repeat=5):
        if len(set(labels)) < 2:
            continue
        scores = [0.2, 0.2, 0.5, 0.9, 0.5]
        assert auc(scores, labels) == pytest.approx(pair_auc(scores, labels), abs=1e-12)
