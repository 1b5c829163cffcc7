import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from queryis import evaluation as ev
from queryis.heads import InstanceResult
from queryis.scene import GroundTruth

from fixtures import as_results, three_scene_fixture
from oracles import ap_bruteforce, evaluate_bruteforce, labels_bruteforce

GOLDEN = Path(__file__).parent / "golden" / "eval_3scene.json"


def _res(label, score, mask):
    return InstanceResult(label=label, confidence=score, mask=np.asarray(mask, bool), score=score, kept=True)


def test_tp_fp_tp_hand_case():
    assert ev.average_precision([True, False, True], [0.9, 0.8, 0.7], 2) == pytest.approx(0.8333333, abs=1e-6)
    assert ap_bruteforce([(1, 0.9), (0, 0.8), (1, 0.7)], 2) == pytest.approx(5 / 6, abs=1e-12)


def test_ap_edge_cases():
    assert ev.average_precision([True, True], [0.5, 0.4], 2) == 1.0
    assert ev.average_precision([False, False], [0.5, 0.4], 2) == 0.0
    assert ev.average_precision([], [], 3) == 0.0
    assert ev.average_precision([], [], 0) is None
    assert ev.average_precision([False], [0.3], 0) == 0.0


@given(st.lists(st.tuples(st.booleans(), st.floats(0.01, 1.0)), max_size=12), st.integers(0, 6))
@settings(max_examples=300)
def test_ap_matches_bruteforce(pairs, extra):
    num_gt = sum(l for l, _ in pairs) + extra
    labels = [l for l, _ in pairs]
    scores = [s for _, s in pairs]
    got = ev.average_precision(labels, scores, num_gt)
    # break score ties the same way as a stable sort by index
    ranked = [(int(l), -i) for i, (l, _) in sorted(enumerate(pairs), key=lambda t: -t[1][1])]
    want = ap_bruteforce([(l, len(pairs) - r) for r, (l, _) in enumerate(ranked)], num_gt)
    if want is None:
        assert got is None
    else:
        assert got == pytest.approx(want, abs=1e-12)


def test_greedy_identical_and_duplicate():
    gt = GroundTruth(np.array([0]), np.array([[1, 1, 0, 0]], bool))
    assert ev.match_greedy([_res(0, 0.9, [1, 1, 0, 0])], gt, 0.5) == [True]
    dup = [_res(0, 0.9, [1, 1, 0, 0]), _res(0, 0.8, [1, 1, 0, 0])]
    assert ev.match_greedy(dup, gt, 0.5) == [True, False]
    assert ev.match_greedy([_res(1, 0.9, [1, 1, 0, 0])], gt, 0.5) == [False]


def test_greedy_matches_bruteforce_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        owner = rng.integers(-1, 3, 12)
        owner[:3] = [0, 1, 2]
        gt = GroundTruth(rng.integers(0, 2, 3), np.arange(3)[:, None] == owner)
        preds = [_res(int(rng.integers(0, 2)), float(s), rng.uniform(size=12) < 0.4) for s in sorted(rng.uniform(size=5), reverse=True)]
        thr = float(rng.choice(ev.THRESHOLDS))
        want = labels_bruteforce([(p.label, p.mask.tolist()) for p in preds], gt.classes.tolist(), gt.masks.tolist(), thr)
        assert ev.match_greedy(preds, gt, thr) == want


def test_evaluate_perfect_and_empty():
    masks = np.array([[1, 1, 0, 0, 0], [0, 0, 1, 1, 0]], bool)
    gt = GroundTruth(np.array([0, 1]), masks)
    perfect = [_res(0, 0.9, masks[0]), _res(1, 0.8, masks[1])]
    rep = ev.evaluate([perfect], [gt], 2)
    assert rep.mean_ap == rep.mean_ap50 == 1.0
    rep = ev.evaluate([[]], [gt], 2)
    assert rep.mean_ap == rep.mean_ap50 == 0.0


def test_class_absent_from_gt_excluded():
    gt = GroundTruth(np.array([0]), np.array([[1, 1, 0]], bool))
    rep = ev.evaluate([[_res(0, 0.9, [1, 1, 0]), _res(2, 0.5, [0, 0, 1])]], [gt], 3)
    assert set(rep.per_class) == {0}
    assert rep.mean_ap == 1.0


def test_length_mismatch():
    with pytest.raises(ValueError):
        ev.evaluate([[]], [], 2)


def _fixture_report():
    pairs = [as_results(s) for s in three_scene_fixture()]
    return ev.evaluate([r for r, _ in pairs], [g for _, g in pairs], 3)


def test_golden_three_scene_fixture():
    golden = json.loads(GOLDEN.read_text())
    got = _fixture_report().as_dict()
    assert set(got) == set(golden)
    for k, v in golden.items():
        assert got[k] == pytest.approx(v, rel=0, abs=1e-9), k


def test_golden_file_is_current():
    """The checked-in golden values still agree with the oracle re-run on the fixture."""
    scenes = [([(l, s, m.tolist()) for l, s, m in p], c.tolist(), mk.tolist()) for p, c, mk in three_scene_fixture()]
    mean_ap, mean_ap50, _ = evaluate_bruteforce(scenes, 3, list(ev.THRESHOLDS))
    golden = json.loads(GOLDEN.read_text())
    assert golden["metric.mean.AP"] == pytest.approx(mean_ap, abs=1e-12)
    assert golden["metric.mean.AP50"] == pytest.approx(mean_ap50, abs=1e-12)


def test_report_invariants():
    pairs = [as_results(s) for s in three_scene_fixture()]
    res, gts = [r for r, _ in pairs], [g for _, g in pairs]
    per_thr = [ev.evaluate(res, gts, 3, thresholds=(t,)).mean_ap for t in ev.THRESHOLDS]
    assert all(a >= b - 1e-15 for a, b in zip(per_thr, per_thr[1:]))
    rep = ev.evaluate(res, gts, 3)
    assert rep.mean_ap50 >= rep.mean_ap
    for v in rep.as_dict().values():
        assert 0.0 <= v <= 1.0
    scaled = [[InstanceResult(r.label, r.confidence, r.mask, r.score * 0.37, r.kept) for r in rr] for rr in res]
    assert ev.evaluate(scaled, gts, 3).as_dict() == rep.as_dict()


def test_report_file_round_trip(tmp_path):
    rep = _fixture_report()
    ev.write_report(rep, tmp_path / "m.txt")
    assert ev.read_report(tmp_path / "m.txt") == rep.as_dict()
    assert "metric.mean.AP50 = " in (tmp_path / "m.txt").read_text()
