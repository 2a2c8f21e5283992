"""Toy-scale fusion study: synthetic scenes -> patch CNNs -> SVMs -> box AP.

One *cell* is an (ablation, fusion point) pair trained with one seed. Cells
are independent, so they can run in worker processes; results do not depend
on the number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .detect import (
    DEFAULT_ASPECTS,
    BoundingBox,
    Detection,
    average_precision,
    boxes_array,
    grid_proposals,
    iou_matrix,
    nms,
)
from .fusionnet import ABLATIONS, FUSION_POINTS, Network, NetworkConfig, TrainConfig, batched, train
from .geocentric import DeriveConfig, derive_all
from .reduce import fit_pca, project
from .svm import SvmConfig, score, train_svm
from .synth import CLASSES, LabeledFrame, crop_patches, frame_channels, generate_scene, make_patch_dataset

TABLE1_ROWS = ABLATIONS
TABLE2_COLS = ("final", "fc2", "fc1", "pool2", "input")


@dataclass(frozen=True)
class ExperimentConfig:
    width: int = 160
    height: int = 120
    n_train: int = 40
    n_test: int = 10
    data_seed: int = 1000
    depth_sigma: float = 0.002
    color_sigma: float = 4.0
    streams: tuple[str, ...] = ("D", "H", "A")
    patch: int = 32
    per_class: int = 100
    conv1: int = 8
    conv2: int = 16
    fc1: int = 64
    lr: float = 1e-3
    epochs: int = 10
    lr_step: int = 7
    batch_size: int = 32
    clip_norm: float | None = 10.0
    warm_start: bool = False
    match_dim: bool = True
    svm_C: float = 0.001
    svm_B: float = 10.0
    svm_w1: float = 2.0
    feature_norm: float = 20.0
    neg_per_frame: int = 80
    scales: tuple[int, ...] = (14, 20, 28, 40, 56, 80)
    stride_div: int = 2
    aspects: tuple[float, ...] = DEFAULT_ASPECTS
    nms_threshold: float = 0.3
    iou_threshold: float = 0.5
    ap_mode: str = "step"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    ablations: tuple[str, ...] = ABLATIONS
    fusion_points: tuple[str, ...] = FUSION_POINTS
    dtype: str = "float32"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        for k in ("streams", "scales", "aspects", "seeds", "ablations", "fusion_points"):
            if k in d:
                d[k] = tuple(d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def cells(self) -> list[tuple[str, str]]:
        """Cells needed for both tables: input/final for every ablation, all points for full."""
        out = []
        for ab in self.ablations:
            pts = self.fusion_points if ab == "full" else [p for p in ("input", "final") if p in self.fusion_points]
            out.extend((ab, p) for p in pts)
        return out


# --------------------------------------------------------------------- data


@dataclass
class ExperimentData:
    train_frames: list[LabeledFrame]
    test_frames: list[LabeledFrame]
    proposals: list[np.ndarray]
    """Per test frame, (n, 4) proposal boxes."""


def make_frames(cfg: ExperimentConfig, seeds: Sequence[int]) -> list[LabeledFrame]:
    frames = []
    for s in seeds:
        sc = generate_scene(
            s, width=cfg.width, height=cfg.height, depth_sigma=cfg.depth_sigma, color_sigma=cfg.color_sigma
        )
        ps = derive_all(sc.rgb, sc.depth, sc.intrinsics, DeriveConfig(seed=s))
        frames.append(LabeledFrame(f"scene{s:05d}", ps.byte_streams(), list(sc.gt_boxes)))
    return frames


def build_data(cfg: ExperimentConfig) -> ExperimentData:
    base = cfg.data_seed
    train_frames = make_frames(cfg, range(base, base + cfg.n_train))
    test_frames = make_frames(cfg, range(base + cfg.n_train, base + cfg.n_train + cfg.n_test))
    grid = grid_proposals(
        cfg.width, cfg.height, cfg.scales, [max(2, s // cfg.stride_div) for s in cfg.scales], cfg.aspects,
        anchor="corner",
    )
    arr = boxes_array(grid.boxes)
    return ExperimentData(train_frames, test_frames, [arr] * len(test_frames))


# -------------------------------------------------------------------- cells


def _svm_training_boxes(frame: LabeledFrame, grid: np.ndarray, n_neg: int, rng) -> np.ndarray:
    """All gt boxes plus random grid windows off every gt box (IoU < 0.3)."""
    gt = boxes_array(b for _, b in frame.gt)
    cand = grid
    if len(gt):
        cand = grid[iou_matrix(grid, gt).max(axis=1) < 0.3]
    pick = cand[np.sort(rng.choice(len(cand), size=min(n_neg, len(cand)), replace=False))]
    return np.vstack([gt, pick])


def _class_sets(frames, boxes_per_frame, feats_per_frame, n_classes):
    """Per class: positives are that class's gt boxes, negatives overlap it < 30%."""
    sets = {}
    for c in range(1, n_classes + 1):
        xs, ys = [], []
        for fr, boxes, f in zip(frames, boxes_per_frame, feats_per_frame):
            gt_c = boxes_array(b for k, b in fr.gt if k == c)
            n_gt = len(fr.gt)
            is_gt_c = np.zeros(len(boxes), dtype=bool)
            is_gt_c[:n_gt] = [k == c for k, _ in fr.gt]
            if len(gt_c):
                ov = iou_matrix(boxes, gt_c).max(axis=1)
            else:
                ov = np.zeros(len(boxes))
            neg = (ov < 0.3) & ~is_gt_c
            xs.append(f[is_gt_c])
            ys.append(np.ones(is_gt_c.sum(), dtype=np.int64))
            xs.append(f[neg])
            ys.append(-np.ones(neg.sum(), dtype=np.int64))
        sets[c] = (np.vstack(xs), np.concatenate(ys))
    return sets


def _feature_fn(net: Network) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: batched(lambda b: net.extract_features(b, "fc1"), x, 128).astype(np.float64)


def run_cell(cfg: ExperimentConfig, data: ExperimentData, ablation: str, fusion: str, seed: int,
             init: Network | None = None) -> tuple[list[dict], Network]:
    """Train one cell and evaluate it; returns per-class AP rows."""
    S = len(cfg.streams)
    dtype = np.dtype(cfg.dtype)
    ds = make_patch_dataset(data.train_frames, cfg.streams, cfg.patch, cfg.per_class, seed=seed)
    ncfg = NetworkConfig(
        streams=S, in_channels=1, fusion=fusion, ablation=ablation, patch=cfg.patch,
        classes=len(CLASSES) + 1, conv1=cfg.conv1, conv2=cfg.conv2, fc1=cfg.fc1, seed=seed,
    )
    tcfg = TrainConfig(
        lr=cfg.lr, lr_step=cfg.lr_step, epochs=cfg.epochs, batch_size=cfg.batch_size, seed=seed,
        clip_norm=cfg.clip_norm,
    )
    net, _ = train(ncfg, *ds.train, tcfg, dtype=dtype, init=init)
    feat = _feature_fn(net)

    rng = np.random.default_rng(seed)
    grid = data.proposals[0]
    train_boxes = [_svm_training_boxes(fr, grid, cfg.neg_per_frame, rng) for fr in data.train_frames]
    train_feats = [
        feat(crop_patches(frame_channels(fr, cfg.streams), b, cfg.patch))
        for fr, b in zip(data.train_frames, train_boxes)
    ]
    reducer = None
    if cfg.match_dim and train_feats[0].shape[1] > cfg.fc1:
        reducer = fit_pca(np.vstack(train_feats), cfg.fc1)
        train_feats = [project(reducer, f) for f in train_feats]
    allf = np.vstack(train_feats)
    norm = float(np.mean(np.linalg.norm(allf, axis=1)))
    scale = cfg.feature_norm / norm if norm > 0 else 1.0
    train_feats = [f * scale for f in train_feats]

    scfg = SvmConfig(C=cfg.svm_C, B=cfg.svm_B, w1=cfg.svm_w1, seed=seed)
    sets = _class_sets(data.train_frames, train_boxes, train_feats, len(CLASSES))
    models = {c: train_svm(x, y, scfg) for c, (x, y) in sets.items()}

    dets: dict[int, list[tuple[str, Detection]]] = {c: [] for c in models}
    gts: dict[int, dict[str, list[BoundingBox]]] = {c: {} for c in models}
    for fr, props in zip(data.test_frames, data.proposals):
        f = feat(crop_patches(frame_channels(fr, cfg.streams), props, cfg.patch))
        if reducer is not None:
            f = project(reducer, f)
        f = f * scale
        boxes = [BoundingBox(*map(int, b)) for b in props]
        for c, m in models.items():
            s = score(m, f)
            kept = nms([Detection(b, c, float(v)) for b, v in zip(boxes, s)], cfg.nms_threshold)
            dets[c].extend((fr.name, d) for d in kept)
            gts[c][fr.name] = [b for k, b in fr.gt if k == c]
    rows = []
    for c in models:
        ap = average_precision(dets[c], gts[c], cfg.iou_threshold, cfg.ap_mode)
        rows.append({"ablation": ablation, "fusion_point": fusion, "seed": seed, "class": CLASSES[c - 1], "AP": ap})
    return rows, net


def _run_seed(args) -> list[dict]:
    cfg, data, seed, cells = args
    rows: list[dict] = []
    final_nets: dict[str, Network] = {}
    order = sorted(cells, key=lambda c: c[1] != "final")  # final first so warm starts can reuse it
    for ab, fp in order:
        init = None
        if cfg.warm_start and fp in ("pool2", "fc1", "fc2"):
            if ab not in final_nets:
                _, final_nets[ab] = run_cell(cfg, data, ab, "final", seed)
            init = final_nets[ab]
        r, net = run_cell(cfg, data, ab, fp, seed, init)
        if fp == "final":
            final_nets[ab] = net
        rows.extend(r)
    return rows


def run_fusion_experiment(
    cfg: ExperimentConfig,
    jobs: int = 1,
    data: ExperimentData | None = None,
    progress: Callable[[str], None] | None = None,
) -> list[dict]:
    """Per-class AP rows for every cell and seed, in a fixed order."""
    if data is None:
        data = build_data(cfg)
    cells = cfg.cells()
    work = [(cfg, data, s, cells) for s in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            per_seed = list(ex.map(_run_seed, work))
    else:
        per_seed = []
        for w in work:
            per_seed.append(_run_seed(w))
            if progress:
                progress(f"seed {w[2]} done")
    rows = [r for rs in per_seed for r in rs]
    key = {c: i for i, c in enumerate(cells)}
    rows.sort(key=lambda r: (key[(r["ablation"], r["fusion_point"])], r["seed"], r["class"]))
    return rows


# ------------------------------------------------------------------- tables


def cell_map(rows: list[dict]) -> dict[tuple[str, str], dict[int, float]]:
    """Mean AP over classes (NaN classes skipped) per cell and seed, in percent."""
    acc: dict[tuple[str, str], dict[int, list[float]]] = {}
    for r in rows:
        acc.setdefault((r["ablation"], r["fusion_point"]), {}).setdefault(r["seed"], []).append(r["AP"])
    return {
        cell: {s: 100.0 * float(np.nanmean(v)) for s, v in per.items()} for cell, per in acc.items()
    }


def summarize(rows: list[dict]) -> list[dict]:
    out = []
    for (ab, fp), per in cell_map(rows).items():
        v = np.array([per[s] for s in sorted(per)])
        out.append(
            {
                "ablation": ab,
                "fusion_point": fp,
                "n_seeds": len(v),
                "mean": float(v.mean()),
                "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
                "median": float(np.median(v)),
            }
        )
    return out


def table1(rows: list[dict], stat: str = "mean") -> list[dict]:
    """Rows full/convpool/conv/convrelu with input, final and gap = final - input."""
    summ = {(s["ablation"], s["fusion_point"]): s[stat] for s in summarize(rows)}
    out = []
    for ab in TABLE1_ROWS:
        if (ab, "input") in summ and (ab, "final") in summ:
            i, f = summ[(ab, "input")], summ[(ab, "final")]
            out.append({"architecture": ab, "input": i, "final": f, "gap": f - i})
    return out


def table2(rows: list[dict], stat: str = "mean") -> dict:
    summ = {(s["ablation"], s["fusion_point"]): s[stat] for s in summarize(rows)}
    return {c: summ.get(("full", c), float("nan")) for c in TABLE2_COLS}


def _fmt(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def write_csv(path: str | Path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def write_results(out: str | Path, rows: list[dict]) -> dict[str, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "results": out / "results.csv",
        "summary": out / "summary.csv",
        "table1": out / "table1.csv",
        "table2": out / "table2.csv",
    }
    write_csv(paths["results"], rows, ("ablation", "fusion_point", "seed", "class", "AP"))
    write_csv(paths["summary"], summarize(rows), ("ablation", "fusion_point", "n_seeds", "mean", "std", "median"))
    write_csv(paths["table1"], table1(rows), ("architecture", "input", "final", "gap"))
    write_csv(paths["table2"], [table2(rows)], TABLE2_COLS)
    return paths


def directional_checks(rows: list[dict]) -> dict[str, bool | float]:
    """Medians over seeds: final >= input for full; conv has the smallest |gap|."""
    t1 = {r["architecture"]: r for r in table1(rows, "median")}
    gaps = {ab: abs(r["gap"]) for ab, r in t1.items()}
    out: dict[str, bool | float] = {}
    if "full" in t1:
        out["full_final_ge_input"] = bool(t1["full"]["final"] >= t1["full"]["input"])
    if "conv" in gaps and len(gaps) == len(TABLE1_ROWS):
        out["conv_smallest_gap"] = bool(all(gaps["conv"] <= g for ab, g in gaps.items()))
    out.update({f"gap_{ab}": t1[ab]["gap"] for ab in t1})
    return out


# ------------------------------------------------- stream-separation study


STREAM_COLUMNS = {
    "I": ((("R", "G", "B"), ("D", "H", "A")), False),
    "II": ((("R", "G", "B"), ("D",), ("H",), ("A",)), False),
    "III": ((("R", "G", "B"), ("D",), ("H",), ("A",)), True),
    "IV": ((("R",), ("G",), ("B",), ("D", "H", "A")), False),
    "V": ((("R", "G", "B"), ("D",), ("H",), ("A",), ("C",)), False),
}


def run_stream_experiment(cfg: ExperimentConfig, data: ExperimentData | None = None) -> list[dict]:
    """Independent nets per stream group; features concatenated for the SVM.

    Column III reduces the concatenated single-property features back to one
    group's width with PCA before concatenating with the color features.
    """
    if data is None:
        data = build_data(cfg)
    rows = []
    for col, (groups, reduce_) in STREAM_COLUMNS.items():
        for seed in cfg.seeds:
            rows.extend(_stream_column(cfg, data, col, groups, reduce_, seed))
    return rows


def _stream_column(cfg, data, col, groups, reduce_, seed):
    dtype = np.dtype(cfg.dtype)
    nets = []
    for g in groups:
        ds = make_patch_dataset(data.train_frames, g, cfg.patch, cfg.per_class, seed=seed)
        ncfg = NetworkConfig(
            streams=1, in_channels=len(g), fusion="final", ablation="full", patch=cfg.patch,
            classes=len(CLASSES) + 1, conv1=cfg.conv1, conv2=cfg.conv2, fc1=cfg.fc1, seed=seed,
        )
        tcfg = TrainConfig(
            lr=cfg.lr, lr_step=cfg.lr_step, epochs=cfg.epochs, batch_size=cfg.batch_size, seed=seed,
            clip_norm=cfg.clip_norm,
        )
        nets.append(train(ncfg, *ds.train, tcfg, dtype=dtype)[0])

    single = [i for i, g in enumerate(groups) if len(g) == 1 and g[0] in "DHA"]

    def feats(fr, boxes):
        parts = [_feature_fn(n)(crop_patches(frame_channels(fr, g), boxes, cfg.patch)) for n, g in zip(nets, groups)]
        return parts

    rng = np.random.default_rng(seed)
    grid = data.proposals[0]
    tb = [_svm_training_boxes(fr, grid, cfg.neg_per_frame, rng) for fr in data.train_frames]
    tparts = [feats(fr, b) for fr, b in zip(data.train_frames, tb)]
    reducer = None
    if reduce_:
        reducer = fit_pca(np.vstack([np.hstack([p[i] for i in single]) for p in tparts]), cfg.fc1)

    def join(parts):
        if reducer is None:
            return np.hstack(parts)
        rest = [p for i, p in enumerate(parts) if i not in single]
        return np.hstack(rest + [project(reducer, np.hstack([parts[i] for i in single]))])

    tf = [join(p) for p in tparts]
    scale = cfg.feature_norm / float(np.mean(np.linalg.norm(np.vstack(tf), axis=1)))
    tf = [f * scale for f in tf]
    scfg = SvmConfig(C=cfg.svm_C, B=cfg.svm_B, w1=cfg.svm_w1, seed=seed)
    models = {c: train_svm(x, y, scfg) for c, (x, y) in _class_sets(data.train_frames, tb, tf, len(CLASSES)).items()}
    dets = {c: [] for c in models}
    gts = {c: {} for c in models}
    for fr, props in zip(data.test_frames, data.proposals):
        f = join(feats(fr, props)) * scale
        boxes = [BoundingBox(*map(int, b)) for b in props]
        for c, m in models.items():
            s = score(m, f)
            kept = nms([Detection(b, c, float(v)) for b, v in zip(boxes, s)], cfg.nms_threshold)
            dets[c].extend((fr.name, d) for d in kept)
            gts[c][fr.name] = [b for k, b in fr.gt if k == c]
    return [
        {"column": col, "seed": seed, "class": CLASSES[c - 1],
         "AP": average_precision(dets[c], gts[c], cfg.iou_threshold, cfg.ap_mode)}
        for c in models
    ]


def table3(rows: list[dict]) -> list[dict]:
    acc: dict[str, dict[int, list[float]]] = {}
    for r in rows:
        acc.setdefault(r["column"], {}).setdefault(r["seed"], []).append(r["AP"])
    out = []
    for col in STREAM_COLUMNS:
        if col in acc:
            v = [100.0 * float(np.nanmean(x)) for x in acc[col].values()]
            out.append({"column": col, "mean": float(np.mean(v)), "median": float(np.median(v))})
    return out
