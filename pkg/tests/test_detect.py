import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geofuse.detect import (
    BACKGROUND,
    IGNORED,
    BoundingBox,
    Detection,
    ap_from_matches,
    average_precision,
    boxes_array,
    default_proposals,
    grid_proposals,
    iou,
    iou_matrix,
    label_proposals,
    nms,
    read_proposals,
    write_proposals,
)
from geofuse.errors import FormatError
from geofuse.synth import generate_scene

from oracles import ap_bruteforce, greedy_nms_bruteforce


@st.composite
def boxes(draw, size=40):
    x1 = draw(st.integers(0, size - 1))
    y1 = draw(st.integers(0, size - 1))
    return BoundingBox(x1, y1, draw(st.integers(x1, size - 1)), draw(st.integers(y1, size - 1)))


def test_iou_hand_counted():
    assert iou(BoundingBox(0, 0, 9, 9), BoundingBox(5, 0, 14, 9)) == pytest.approx(1 / 3, abs=0)
    assert iou(BoundingBox(0, 0, 9, 9), BoundingBox(0, 0, 9, 9)) == 1.0
    assert iou(BoundingBox(0, 0, 4, 4), BoundingBox(5, 5, 9, 9)) == 0.0


@settings(max_examples=200, deadline=None)
@given(boxes(), boxes())
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)
    assert iou_matrix(boxes_array([a]), boxes_array([b]))[0, 0] == pytest.approx(v, abs=1e-15)
    # pixel-count oracle
    ma = np.zeros((40, 40), bool)
    mb = np.zeros((40, 40), bool)
    ma[a.y1 : a.y2 + 1, a.x1 : a.x2 + 1] = True
    mb[b.y1 : b.y2 + 1, b.x1 : b.x2 + 1] = True
    assert v == (ma & mb).sum() / (ma | mb).sum()


def test_label_proposals_bands():
    gt = [(2, BoundingBox(0, 0, 9, 9))]
    props = [BoundingBox(0, 0, 9, 9), BoundingBox(30, 30, 39, 39), BoundingBox(0, 0, 9, 3)]
    # the last proposal covers 40 of 100 pixels: IoU 0.4
    assert label_proposals(props, gt) == [2, BACKGROUND, IGNORED]


def test_label_proposals_max_overlap_class():
    gt = [(1, BoundingBox(0, 0, 9, 9)), (3, BoundingBox(2, 0, 11, 9))]
    assert label_proposals([BoundingBox(2, 0, 11, 9)], gt) == [3]


@settings(max_examples=100, deadline=None)
@given(st.lists(boxes(), min_size=1, max_size=8), st.lists(boxes(), max_size=3))
def test_label_proposals_partition(props, gt_boxes):
    labels = label_proposals(props, [(1, b) for b in gt_boxes])
    assert len(labels) == len(props)
    assert set(labels) <= {1, BACKGROUND, IGNORED}


def test_nms_trivial():
    a = Detection(BoundingBox(0, 0, 9, 9), 1, 0.9)
    b = Detection(BoundingBox(0, 0, 9, 9), 1, 0.8)
    c = Detection(BoundingBox(20, 20, 29, 29), 1, 0.1)
    assert nms([b, a]) == [a]
    assert nms([a, c]) == [a, c]


def test_nms_tie_break_by_index():
    a = Detection(BoundingBox(0, 0, 9, 9), 1, 0.5)
    b = Detection(BoundingBox(1, 0, 9, 9), 1, 0.5)
    assert nms([a, b]) == [a]
    assert nms([b, a]) == [b]


def test_nms_matches_bruteforce_random(rng):
    for _ in range(200):
        n = int(rng.integers(1, 13))
        bs = []
        for _ in range(n):
            x1, y1 = rng.integers(0, 30, 2)
            bs.append(BoundingBox(int(x1), int(y1), int(x1 + rng.integers(0, 15)), int(y1 + rng.integers(0, 15))))
        scores = rng.integers(0, 5, n) / 4.0  # plenty of ties
        dets = [Detection(b, 1, float(s)) for b, s in zip(bs, scores)]
        kept = nms(dets, 0.3)
        oracle = greedy_nms_bruteforce([b.as_list() for b in bs], list(scores), 0.3)
        assert [dets.index(d) if dets.count(d) == 1 else None for d in kept] == [
            i if dets.count(dets[i]) == 1 else None for i in oracle
        ]
        assert len(kept) == len(oracle)
        for i, d in enumerate(kept):
            for e in kept[i + 1 :]:
                assert iou(d.box, e.box) <= 0.3
        assert all(kept[i].score >= kept[i + 1].score for i in range(len(kept) - 1))


def test_ap_worked_example():
    gt = [BoundingBox(0, 0, 9, 9), BoundingBox(20, 0, 29, 9), BoundingBox(40, 0, 49, 9)]
    dets = [
        Detection(gt[0], 1, 0.9),
        Detection(BoundingBox(60, 0, 69, 9), 1, 0.8),
        Detection(gt[1], 1, 0.7),
        Detection(gt[2], 1, 0.6),
    ]
    assert average_precision(dets, gt) == pytest.approx(1 / 3 + (2 / 3) / 3 + (3 / 4) / 3, abs=1e-15)
    assert average_precision(dets, gt) == pytest.approx(0.8056, abs=5e-5)
    # running-max envelope lifts the dip after the false positive
    assert average_precision(dets, gt, mode="voc") == pytest.approx(1 / 3 + (3 / 4) * (2 / 3), abs=1e-15)


def test_ap_trivial_cases():
    gt = [BoundingBox(0, 0, 9, 9), BoundingBox(20, 0, 29, 9)]
    perfect = [Detection(b, 1, s) for b, s in zip(gt, (0.1, 0.7))]
    assert average_precision(perfect, gt) == 1.0
    miss = [Detection(BoundingBox(50, 50, 59, 59), 1, 0.9)]
    assert average_precision(miss, gt) == 0.0
    assert np.isnan(average_precision(perfect, []))


def test_ap_duplicate_detection_is_false_positive():
    gt = [BoundingBox(0, 0, 9, 9)]
    dets = [Detection(gt[0], 1, 0.9), Detection(gt[0], 1, 0.8)]
    assert average_precision(dets, gt) == 1.0
    tp = [True, False]
    assert ap_from_matches(np.array(tp), 1) == 1.0


def test_ap_matches_bruteforce_random(rng):
    for _ in range(200):
        n_gt = int(rng.integers(1, 6))
        tp = rng.random(int(rng.integers(0, 10))) < 0.5
        # never more true positives than gt boxes
        tp[np.cumsum(tp) > n_gt] = False
        assert ap_from_matches(tp, n_gt) == pytest.approx(ap_bruteforce(tp, n_gt), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=4, max_size=4, unique=True))
def test_ap_invariant_to_monotone_rescaling(ticks):
    scores = [t / 10 for t in ticks]
    gt = [BoundingBox(0, 0, 9, 9), BoundingBox(20, 0, 29, 9)]
    bs = [gt[0], BoundingBox(60, 0, 69, 9), gt[1], BoundingBox(80, 0, 89, 9)]
    a = average_precision([Detection(b, 1, s) for b, s in zip(bs, scores)], gt)
    b = average_precision([Detection(b, 1, 3 * np.exp(s) + 1) for b, s in zip(bs, scores)], gt)
    assert a == b


def test_ap_multi_frame():
    gt = {"a": [BoundingBox(0, 0, 9, 9)], "b": [BoundingBox(0, 0, 9, 9)]}
    dets = [("a", Detection(BoundingBox(0, 0, 9, 9), 1, 0.9)), ("b", Detection(BoundingBox(30, 30, 39, 39), 1, 0.8))]
    assert average_precision(dets, gt) == 0.5


def test_ap_11point():
    assert ap_from_matches(np.array([True]), 1, "11point") == pytest.approx(1.0)
    assert ap_from_matches(np.array([False, True]), 1, "11point") == pytest.approx(0.5)


def test_grid_count_and_bounds():
    assert len(grid_proposals(64, 64, scales=(32,), strides=(32,)).boxes) == 9
    assert len(grid_proposals(64, 64, scales=(32,), strides=(32,), anchor="corner").boxes) == 4
    assert all(b.inside(64, 64) for b in grid_proposals(64, 64, (20, 32), (7, 9), (0.5, 1.0)).boxes)
    g = default_proposals(160, 120)
    assert all(b.inside(160, 120) for b in g.boxes)
    assert len(set(g.boxes)) == len(g.boxes)


def test_default_grid_covers_synthetic_boxes():
    for size in ((320, 240), (160, 120)):
        grid = boxes_array(default_proposals(*size).boxes)
        for seed in range(15):
            sc = generate_scene(seed, width=size[0], height=size[1])
            for _, b in sc.gt_boxes:
                assert iou_matrix(boxes_array([b]), grid).max() >= 0.5


def test_proposals_file_roundtrip(tmp_path):
    sets = [grid_proposals(40, 30, (16,), frame="x"), grid_proposals(40, 30, (8,), frame="y")]
    write_proposals(tmp_path / "p.jsonl", sets)
    back = read_proposals(tmp_path / "p.jsonl")
    assert [s.frame for s in back] == ["x", "y"] and back[0].boxes == sets[0].boxes
    (tmp_path / "bad.jsonl").write_text('{"frame": "x"}\n')
    with pytest.raises(FormatError):
        read_proposals(tmp_path / "bad.jsonl")
