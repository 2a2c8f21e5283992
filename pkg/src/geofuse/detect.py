"""Boxes, proposal labeling, non-maximum suppression and average precision."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError

BACKGROUND = 0
IGNORED = -1


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Inclusive pixel corners."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x2 - self.x1 + 1

    @property
    def height(self) -> int:
        return self.y2 - self.y1 + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def inside(self, width: int, height: int) -> bool:
        return self.x1 >= 0 and self.y1 >= 0 and self.x2 < width and self.y2 < height

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    label: int
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")


@dataclass(frozen=True)
class ProposalSet:
    frame: str
    boxes: list[BoundingBox]
    source: str = "grid"


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1) + 1
    ih = min(a.y2, b.y2) - max(a.y1, b.y1) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def boxes_array(boxes: Iterable[BoundingBox]) -> np.ndarray:
    arr = np.array([b.as_list() for b in boxes], dtype=np.int64)
    return arr.reshape(-1, 4)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (n, 4) and (m, 4) inclusive-corner box arrays."""
    a = np.asarray(a, dtype=np.int64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.int64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]) + 1
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]) + 1
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0] + 1) * (a[:, 3] - a[:, 1] + 1)
    area_b = (b[:, 2] - b[:, 0] + 1) * (b[:, 3] - b[:, 1] + 1)
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def label_proposals(
    proposals: Sequence[BoundingBox],
    gt: Sequence[tuple[int, BoundingBox]],
    pos_thresh: float = 0.5,
    neg_thresh: float = 0.3,
) -> list[int]:
    """Class id for IoU > pos_thresh, BACKGROUND below neg_thresh, IGNORED between."""
    if not proposals:
        return []
    if not gt:
        return [BACKGROUND] * len(proposals)
    ov = iou_matrix(boxes_array(proposals), boxes_array(b for _, b in gt))
    best = np.argmax(ov, axis=1)
    labels = []
    for i, j in enumerate(best):
        m = ov[i, j]
        if m > pos_thresh:
            labels.append(gt[j][0])
        elif m < neg_thresh:
            labels.append(BACKGROUND)
        else:
            labels.append(IGNORED)
    return labels


def nms(dets: Sequence[Detection], threshold: float = 0.3) -> list[Detection]:
    """Greedy suppression; score ties keep the lower input index first."""
    if not dets:
        return []
    scores = np.array([d.score for d in dets])
    order = np.lexsort((np.arange(len(dets)), -scores))
    arr = boxes_array(d.box for d in dets)
    suppressed = np.zeros(len(dets), dtype=bool)
    keep: list[int] = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= iou_matrix(arr[i : i + 1], arr)[0] > threshold
    return [dets[i] for i in keep]


def match_detections(
    dets: Sequence[tuple[str, Detection]],
    gt: dict[str, Sequence[BoundingBox]],
    iou_thresh: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy score-ordered matching over frames.

    ``dets`` pairs each detection with its frame key. Returns sorted scores
    and a boolean true-positive flag per detection.
    """
    scores = np.array([d.score for _, d in dets], dtype=np.float64)
    order = np.lexsort((np.arange(len(dets)), -scores))
    used = {k: np.zeros(len(v), dtype=bool) for k, v in gt.items()}
    gt_arr = {k: boxes_array(v) for k, v in gt.items()}
    tp = np.zeros(len(dets), dtype=bool)
    for rank, i in enumerate(order):
        frame, det = dets[i]
        boxes = gt_arr.get(frame)
        if boxes is None or len(boxes) == 0:
            continue
        ov = iou_matrix(boxes_array([det.box]), boxes)[0]
        j = int(np.argmax(ov))
        if ov[j] >= iou_thresh and not used[frame][j]:
            used[frame][j] = True
            tp[rank] = True
    return scores[order], tp


AP_MODES = ("step", "voc", "11point")


def ap_from_matches(tp: np.ndarray, n_gt: int, mode: str = "step") -> float:
    """Area under the precision-recall curve of score-sorted matches.

    ``step`` sums precision at each recall increment (no interpolation);
    ``voc`` uses the monotone (running-max) precision envelope; ``11point``
    averages the envelope at recall 0, 0.1, ..., 1.
    """
    if mode not in AP_MODES:
        raise ValueError(f"unknown AP mode {mode!r}")
    if n_gt == 0:
        return float("nan")
    tp = np.asarray(tp, dtype=bool)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    if mode == "step":
        return float(np.sum(precision[tp]) / n_gt)
    if mode == "11point":
        ap = 0.0
        for t in np.linspace(0, 1, 11):
            p = precision[recall >= t]
            ap += (p.max() if p.size else 0.0) / 11
        return float(ap)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))


def average_precision(dets, gt, iou_thresh: float = 0.5, mode: str = "step") -> float:
    """Box AP for one class.

    Accepts either a single frame (``dets``: list of Detection, ``gt``: list
    of BoundingBox) or several (``dets``: list of (frame, Detection), ``gt``:
    dict frame -> boxes). Returns NaN when there is no ground truth.
    """
    if isinstance(gt, dict):
        frames = gt
        pairs = list(dets)
    else:
        frames = {"": list(gt)}
        pairs = [("", d) for d in dets]
    n_gt = sum(len(v) for v in frames.values())
    if n_gt == 0:
        return float("nan")
    _, tp = match_detections(pairs, frames, iou_thresh)
    return ap_from_matches(tp, n_gt, mode)


def grid_proposals(
    width: int,
    height: int,
    scales: Sequence[int] = (32,),
    strides: Sequence[int] | None = None,
    aspects: Sequence[float] = (1.0,),
    frame: str = "",
    anchor: str = "center",
) -> ProposalSet:
    """Dense windows of side ``scale`` (times sqrt(aspect) / 1/sqrt(aspect)).

    ``strides`` pairs with ``scales``; by default each stride equals its scale.
    With ``anchor="center"`` window centers sit at 0, stride, 2*stride, ...
    up to the frame edge and windows are clipped to the frame. With
    ``anchor="corner"`` top-left corners step by the stride and only windows
    that fit inside the frame are kept. Windows are deduplicated; order is
    deterministic (by scale, aspect, row, column).
    """
    if strides is None:
        strides = scales
    if len(strides) != len(scales):
        raise ValueError("scales and strides must have equal length")
    if anchor not in ("center", "corner"):
        raise ValueError(f"unknown anchor {anchor!r}")
    out: list[BoundingBox] = []
    seen: set[BoundingBox] = set()
    for s, st in zip(scales, strides):
        if s <= 0 or st <= 0:
            raise ValueError("scales and strides must be positive")
        for a in aspects:
            bw = max(1, int(round(s * np.sqrt(a))))
            bh = max(1, int(round(s / np.sqrt(a))))
            if anchor == "center":
                ys = [c - bh // 2 for c in range(0, height + 1, st)]
                xs = [c - bw // 2 for c in range(0, width + 1, st)]
            else:
                ys = list(range(0, max(height - bh, 0) + 1, st))
                xs = list(range(0, max(width - bw, 0) + 1, st))
            for y in ys:
                for x in xs:
                    x1, y1 = max(x, 0), max(y, 0)
                    x2, y2 = min(x + bw, width) - 1, min(y + bh, height) - 1
                    if x2 < x1 or y2 < y1:
                        continue
                    b = BoundingBox(x1, y1, x2, y2)
                    if b not in seen:
                        seen.add(b)
                        out.append(b)
    return ProposalSet(frame, out, "grid")


DEFAULT_SCALES = (20, 28, 40, 56, 80, 112, 160)
DEFAULT_ASPECTS = (1 / 3, 0.5, 1.0, 2.0)
REFERENCE_HEIGHT = 240


def default_proposals(width: int, height: int, frame: str = "", stride_div: int = 3) -> ProposalSet:
    """Grid used on synthetic frames.

    Scales are given for a 240-row frame and resized with the frame height;
    each stride is ``scale // stride_div``.
    """
    f = height / REFERENCE_HEIGHT
    scales = [max(4, int(round(s * f))) for s in DEFAULT_SCALES]
    strides = [max(2, s // stride_div) for s in scales]
    return grid_proposals(width, height, scales, strides, DEFAULT_ASPECTS, frame, anchor="corner")


def write_proposals(path: str | Path, sets: Iterable[ProposalSet]) -> None:
    with open(path, "w") as fh:
        for ps in sets:
            fh.write(json.dumps({"frame": ps.frame, "boxes": [b.as_list() for b in ps.boxes]}) + "\n")


def read_proposals(path: str | Path) -> list[ProposalSet]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                boxes = [BoundingBox(*map(int, b)) for b in rec["boxes"]]
                out.append(ProposalSet(str(rec["frame"]), boxes, "file"))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise FormatError(f"{path}:{lineno}: bad proposal record ({e})") from None
    return out


def run_fusion_experiment(config=None, jobs: int = 1) -> dict:
    """Full fusion study; returns per-class rows plus both summary tables.

    The work lives in :mod:`geofuse.experiment`; this is the entry point next
    to the metrics it reports.
    """
    from .experiment import ExperimentConfig, run_fusion_experiment as run, table1, table2

    cfg = config if config is not None else ExperimentConfig()
    rows = run(cfg, jobs=jobs)
    return {"rows": rows, "table1": table1(rows), "table2": table2(rows)}
