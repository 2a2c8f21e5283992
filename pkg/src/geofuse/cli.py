"""Command-line entry point: ``geofuse <subcommand> ...``.

Every subcommand writes only under ``--out`` and leaves a ``manifest.json``
there. ``geofuse rerun --manifest M --out DIR`` repeats a run from it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .detect import BoundingBox, Detection, average_precision, boxes_array, iou_matrix, match_detections, nms
from .errors import DataError, NumericError
from .experiment import (
    ExperimentConfig,
    _svm_training_boxes,
    directional_checks,
    run_fusion_experiment,
    write_results,
)
from .fusionnet import Network, NetworkConfig, TrainConfig, batched, train
from .geocentric import DeriveConfig, derive_all
from .geometry import CameraIntrinsics, unproject
from .gravity import angle_between_deg
from .imagery import load_bytes, load_color, load_depth, save_bytes, save_color, save_depth, save_property
from .imagery import ByteMap
from .reduce import PcaModel, fit_pca, project
from .svm import SvmConfig, SvmModel, score, train_svm
from .synth import CLASSES, LabeledFrame, SceneSpec, crop_patches, frame_channels, generate_scene, render

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------------ helpers


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{p}: invalid JSON ({e.msg})") from None
    if not isinstance(d, dict):
        raise DataError(f"{p}: config must be a JSON object")
    return d


def _merge(cfg: dict, args: argparse.Namespace, keys: list[str]) -> dict:
    """Flags given on the command line override config values."""
    out = dict(cfg)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _write_manifest(out: Path, command: str, argv: list[str], config: dict, seeds: list[int], inputs: dict) -> None:
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "config_sha256": _digest(config),
        "seeds": seeds,
        "inputs": inputs,
        "versions": {"geofuse": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def _frame_dirs(root: Path) -> list[Path]:
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise DataError(f"no frame directories in {root}")
    return dirs


def _read_boxes(path: Path) -> list[tuple[int, BoundingBox]]:
    d = json.loads(_need(path, "box file").read_text())
    return [(int(b["class_id"]), BoundingBox(*b["box"])) for b in d["boxes"]]


def _load_frames(root: Path) -> list[LabeledFrame]:
    """Frames written by ``derive``: one directory of byte maps per frame."""
    frames = []
    for d in _frame_dirs(_need(root, "map directory")):
        streams = {p.stem: load_bytes(p).values for p in sorted(d.glob("*.pgm")) if len(p.stem) == 1}
        if not streams:
            raise DataError(f"no byte maps in {d}")
        frames.append(LabeledFrame(d.name, streams, _read_boxes(d / "boxes.json")))
    return frames


def _write_rows(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


# ------------------------------------------------------------ gen-synthetic


def cmd_gen_synthetic(args) -> dict:
    spec = _load_config(args.spec)
    n = args.n
    out = _out_dir(args.out)
    fixed = "objects" in spec or "room" in spec
    base_seed = int(spec.get("seed", 0)) if fixed else int(spec.pop("seed", 0))
    seeds = [base_seed + i for i in range(n)]
    for i, s in enumerate(seeds):
        if fixed:
            scene = render(SceneSpec.from_dict({**spec, "seed": s}))
        else:
            scene = generate_scene(s, **spec)
        d = out / f"frame{i:04d}"
        d.mkdir(exist_ok=True)
        save_color(d / "rgb.ppm", scene.rgb)
        save_depth(d / "depth.pgm", scene.depth)
        scene.intrinsics.to_json(d / "intrinsics.json")
        (d / "gt.json").write_text(json.dumps(scene.ground_truth_dict(), indent=1) + "\n")
        save_property(d / "gt_height.pmap", scene.gt_heights)
    return {"config": {"spec": spec, "n": n}, "seeds": seeds, "inputs": {"spec": args.spec}}


# ------------------------------------------------------------------- derive


def _selftest_frame(ps, depth, k, gt: dict | None, gravity_tol: float, ground_percentile=None) -> dict:
    """Analytic identities each map must satisfy, plus gravity error if known."""
    m = ps.maps
    v = depth.valid
    g = ps.gravity.g
    res = {}
    res["D_reciprocal"] = bool(np.allclose(m["D"].values[v] * depth.values[v], 1.0, rtol=1e-12))
    pts = unproject(depth, k).points[v]
    h = -(pts @ g)
    if ground_percentile is None:
        res["H_gravity_axis"] = bool(np.allclose(m["H"].values[v], h - h.min(), atol=1e-9))
    nrm = ps.normals
    nv = nrm.valid
    ang = np.degrees(np.arccos(np.clip(nrm.normals[nv] @ g, -1, 1)))
    a = m["A"].values[nv]
    res["A_range"] = bool(np.all((a >= 0) & (a <= 180)))
    res["A_normals"] = bool(np.allclose(a, ang, atol=1e-6))
    if gt is not None:
        err = angle_between_deg(g, np.array(gt["gravity"]))
        res["gravity_error_deg"] = err
        res["gravity_ok"] = bool(err <= gravity_tol)
    return res


def _selftest_noise_free() -> dict:
    """Height and angle maps against rendered ground truth on a noise-free room."""
    base = generate_scene(7, width=160, height=120)
    sc = render(replace(base.spec, depth_sigma=0.0, quantize=False))
    cfg = DeriveConfig(schedule=((45, 3), (15, 3), (5, 3), (2, 3)), gravity_max_curvature=3e-4)
    ps = derive_all(sc.rgb, sc.depth, sc.intrinsics, cfg)
    inner = sc.interior_mask(4) & ps.normals.valid
    g = sc.gt_gravity
    ang_gt = np.degrees(np.arccos(np.clip(sc.gt_normals.normals @ g, -1, 1)))
    h_err = np.abs(ps.maps["H"].values - sc.gt_heights.values)[inner]
    a_err = np.abs(ps.maps["A"].values - ang_gt)[inner]
    return {
        "height_max_err_m": float(h_err.max()),
        "angle_max_err_deg": float(a_err.max()),
        "height_ok": bool(h_err.max() < 1e-3),
        "angle_ok": bool(a_err.max() < 1.0),
    }


def cmd_derive(args) -> dict:
    cfg = DeriveConfig.from_dict(_merge(_load_config(args.config), args, ["window", "seed"]))
    out = _out_dir(args.out)
    jobs = []
    if args.input:
        for d in _frame_dirs(_need(args.input, "input directory")):
            jobs.append((d.name, d / "rgb.ppm", d / "depth.pgm", d / "intrinsics.json", d / "contour.png", d / "gt.json"))
    elif args.rgb and args.depth and args.intrinsics:
        contour = Path(args.contour) if args.contour else Path("/nonexistent")
        jobs.append(("frame", Path(args.rgb), Path(args.depth), Path(args.intrinsics), contour, Path("/nonexistent")))
    else:
        raise UsageError("derive needs --in DIR or all of --rgb, --depth, --intrinsics")
    checks = []
    for name, rgb_p, depth_p, k_p, contour_p, gt_p in jobs:
        k = CameraIntrinsics.from_json(k_p)
        rgb = load_color(_need(rgb_p, "color image"))
        depth = load_depth(_need(depth_p, "depth image"))
        ps = derive_all(rgb, depth, k, cfg, contour=contour_p if contour_p.exists() else None)
        d = out / name
        d.mkdir(exist_ok=True)
        for key, m in ps.maps.items():
            save_property(d / f"{key}.pmap", m)
        for key, b in ps.byte_streams().items():
            save_bytes(d / f"{key}.pgm", ByteMap(b))
        gt = json.loads(gt_p.read_text()) if gt_p.exists() else None
        boxes = gt["boxes"] if gt else []
        (d / "boxes.json").write_text(json.dumps({"boxes": boxes}) + "\n")
        ps.gravity.dump(d / "gravity.json")
        if args.self_test:
            checks.append({"frame": name, **_selftest_frame(ps, depth, k, gt, args.gravity_tol, cfg.ground_percentile)})
    if args.self_test:
        checks.append({"frame": "noise-free-oracle", **_selftest_noise_free()})
        keys = sorted({k for c in checks for k in c if k != "frame"})
        rows = [{"frame": c["frame"], **{k: c.get(k, "") for k in keys}} for c in checks]
        _write_rows(out / "selftest.csv", rows, ["frame", *keys])
        failed = [(c["frame"], k) for c in checks for k, v in c.items() if v is False]
        if failed:
            raise NumericError(f"self-test failed: {failed[0][1]} on {failed[0][0]} ({len(failed)} checks)")
    return {"config": {**asdict(cfg), "self_test": bool(args.self_test)}, "seeds": [cfg.seed],
            "inputs": {"in": args.input, "rgb": args.rgb, "depth": args.depth, "intrinsics": args.intrinsics}}


# -------------------------------------------------------------- train-fusion


def cmd_train_fusion(args) -> dict:
    from .synth import make_patch_dataset

    conf = _merge(_load_config(args.config), args, ["fusion", "ablation", "epochs", "lr", "seed", "per_class"])
    streams = tuple(conf.pop("streams", args.streams.split(",") if args.streams else ("D", "H", "A")))
    per_class = int(conf.pop("per_class", 150))
    net_keys = {f.name for f in fields(NetworkConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = set(conf) - net_keys - train_keys
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    seed = int(conf.get("seed", 0))
    ncfg = NetworkConfig(**{k: v for k, v in conf.items() if k in net_keys},
                         streams=len(streams), classes=len(CLASSES) + 1)
    tcfg = TrainConfig(**{k: v for k, v in conf.items() if k in train_keys and k != "seed"}, seed=seed)
    frames = _load_frames(Path(args.data))
    ds = make_patch_dataset(frames, streams, ncfg.patch, per_class, seed=seed)
    out = _out_dir(args.out)
    net, state = train(ncfg, *ds.train, tcfg, val=ds.val,
                       progress=lambda r: print(f"epoch {r['epoch']} loss {r['loss']:.4f}", flush=True))
    net.save(out / "net.fnet")
    state.write_csv(out / "trace.csv")
    config = {"network": ncfg.to_dict(), "train": asdict(tcfg), "streams": list(streams), "per_class": per_class}
    return {"config": config, "seeds": [seed], "inputs": {"data": args.data}}


# ---------------------------------------------------------- extract-features


def _grid(frame: LabeledFrame, cfg: ExperimentConfig) -> np.ndarray:
    from .detect import grid_proposals

    h, w = frame.shape
    g = grid_proposals(w, h, cfg.scales, [max(2, s // cfg.stride_div) for s in cfg.scales], cfg.aspects,
                       anchor="corner")
    return boxes_array(g.boxes)


def cmd_extract_features(args) -> dict:
    net = Network.load(_need(args.net, "network file"))
    streams = tuple(args.streams.split(","))
    if len(streams) * net.cfg.in_channels != net.cfg.streams * net.cfg.in_channels:
        raise UsageError(f"network expects {net.cfg.streams} streams, got {len(streams)}")
    frames = _load_frames(Path(args.data))
    ecfg = ExperimentConfig()
    rng = np.random.default_rng(args.seed)
    feats, boxes, frame_idx, gt_mask, gt_cls = [], [], [], [], []
    for i, fr in enumerate(frames):
        grid = _grid(fr, ecfg)
        # training mode: gt boxes first, then sampled background windows
        b = _svm_training_boxes(fr, grid, ecfg.neg_per_frame, rng) if args.mode == "train" else grid
        f = batched(lambda x: net.extract_features(x, args.layer), crop_patches(frame_channels(fr, streams), b, net.cfg.patch), 128)
        n_gt = len(fr.gt) if args.mode == "train" else 0
        feats.append(f.astype(np.float64))
        boxes.append(b)
        frame_idx.append(np.full(len(b), i))
        gt_mask.append(np.arange(len(b)) < n_gt)
        gt_cls.append(np.array([c for c, _ in fr.gt][:n_gt] + [0] * (len(b) - n_gt)))
    gt_all = [(i, c, *b.as_list()) for i, fr in enumerate(frames) for c, b in fr.gt]
    out = _out_dir(args.out)
    np.savez(
        out / "features.npz",
        features=np.vstack(feats),
        boxes=np.vstack(boxes),
        frame=np.concatenate(frame_idx),
        is_gt=np.concatenate(gt_mask),
        gt_class=np.concatenate(gt_cls),
        gt=np.array(gt_all, dtype=np.int64).reshape(-1, 6),
        frame_names=np.array([fr.name for fr in frames]),
    )
    return {"config": {"layer": args.layer, "mode": args.mode, "streams": list(streams)},
            "seeds": [args.seed], "inputs": {"net": args.net, "data": args.data}}


def _load_features(path: str) -> dict:
    try:
        with np.load(_need(path, "feature file")) as z:
            return {k: z[k] for k in z.files}
    except (ValueError, OSError) as e:
        raise DataError(f"{path}: unreadable feature file ({e})") from None


# ----------------------------------------------------------------- train-svm


def cmd_train_svm(args) -> dict:
    conf = _merge(_load_config(args.config), args, ["C", "B", "w1", "seed", "pca", "feature_norm"])
    pca_k = int(conf.pop("pca", 0))
    feature_norm = float(conf.pop("feature_norm", 20.0))
    scfg = SvmConfig.from_dict(conf)
    z = _load_features(args.features)
    x = z["features"]
    out = _out_dir(args.out)
    if pca_k:
        model = fit_pca(x, pca_k)
        model.save(out / "pca.pca")
        x = project(model, x)
    scale = feature_norm / float(np.mean(np.linalg.norm(x, axis=1)))
    x = x * scale
    (out / "scale.json").write_text(json.dumps({"scale": scale}) + "\n")
    gt = z["gt"]
    for c in range(1, len(CLASSES) + 1):
        pos = z["is_gt"] & (z["gt_class"] == c)
        ov = np.zeros(len(x))
        for fi in np.unique(z["frame"]):
            rows = z["frame"] == fi
            gtc = gt[(gt[:, 0] == fi) & (gt[:, 1] == c), 2:]
            if len(gtc):
                ov[rows] = iou_matrix(z["boxes"][rows], gtc).max(axis=1)
        neg = (ov < 0.3) & ~pos
        if not pos.any():
            raise DataError(f"{args.features}: no positives for class {CLASSES[c - 1]}")
        y = np.concatenate([np.ones(pos.sum()), -np.ones(neg.sum())])
        m = train_svm(np.vstack([x[pos], x[neg]]), y, scfg)
        m.save(out / f"{CLASSES[c - 1]}.svm")
    return {"config": {**asdict(scfg), "pca": pca_k, "feature_norm": feature_norm},
            "seeds": [scfg.seed], "inputs": {"features": args.features}}


# --------------------------------------------------------------- eval-detect


def cmd_eval_detect(args) -> dict:
    z = _load_features(args.features)
    mdir = _need(args.models, "model directory")
    x = z["features"]
    if (mdir / "pca.pca").exists():
        x = project(PcaModel.load(mdir / "pca.pca"), x)
    x = x * json.loads(_need(mdir / "scale.json", "scale file").read_text())["scale"]
    names = [str(n) for n in z["frame_names"]]
    gt = z["gt"]
    out = _out_dir(args.out)
    ap_rows, pr_rows, det_rows = [], [], []
    for c, cname in enumerate(CLASSES, start=1):
        model = SvmModel.load(_need(mdir / f"{cname}.svm", "SVM model"))
        s = score(model, x)
        dets, gts = [], {}
        for fi, name in enumerate(names):
            rows = np.flatnonzero(z["frame"] == fi)
            cand = [Detection(BoundingBox(*map(int, z["boxes"][r])), c, float(s[r])) for r in rows]
            for d in nms(cand, args.nms):
                dets.append((name, d))
                det_rows.append({"frame": name, "class": cname, "score": d.score, **dict(zip(("x1", "y1", "x2", "y2"), d.box.as_list()))})
            gts[name] = [BoundingBox(*map(int, g[2:])) for g in gt if g[0] == fi and g[1] == c]
        ap = average_precision(dets, gts, args.iou, args.ap_mode)
        ap_rows.append({"class": cname, "AP": ap})
        _, tp = match_detections(dets, gts, args.iou)
        n_gt = sum(len(v) for v in gts.values())
        ctp = np.cumsum(tp)
        for i in range(len(tp)):
            pr_rows.append({"class": cname, "rank": i + 1, "precision": float(ctp[i] / (i + 1)),
                            "recall": float(ctp[i] / n_gt) if n_gt else float("nan")})
    _write_rows(out / "ap.csv", ap_rows, ["class", "AP"])
    _write_rows(out / "pr.csv", pr_rows, ["class", "rank", "precision", "recall"])
    _write_rows(out / "detections.csv", det_rows, ["frame", "class", "score", "x1", "y1", "x2", "y2"])
    return {"config": {"nms": args.nms, "iou": args.iou, "ap_mode": args.ap_mode}, "seeds": [],
            "inputs": {"features": args.features, "models": args.models}}


# -------------------------------------------------------------- fusion-sweep


def cmd_fusion_sweep(args) -> dict:
    conf = _merge(_load_config(args.config), args, ["seeds", "epochs"])
    try:
        cfg = ExperimentConfig.from_dict(conf)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None
    if not cfg.seeds:
        raise UsageError("seeds must be non-empty")
    out = _out_dir(args.out)
    rows = run_fusion_experiment(cfg, jobs=args.jobs, progress=lambda m: print(m, flush=True))
    write_results(out, rows)
    checks = directional_checks(rows)
    (out / "checks.json").write_text(json.dumps(checks, indent=2, sort_keys=True) + "\n")
    return {"config": cfg.to_dict(), "seeds": list(cfg.seeds), "inputs": {"config": args.config}}


# ---------------------------------------------------------------------- plot


def cmd_plot(args) -> dict:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    src = _need(args.results, "results directory")
    out = _out_dir(args.out)
    made = []
    pr = src / "pr.csv"
    if pr.exists():
        with open(pr) as fh:
            rows = list(csv.DictReader(fh))
        fig, ax = plt.subplots(figsize=(5, 4))
        for cname in CLASSES:
            r = [x for x in rows if x["class"] == cname]
            ax.plot([float(x["recall"]) for x in r], [float(x["precision"]) for x in r], label=cname)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.legend()
        fig.savefig(out / "pr_curves.png", dpi=100)
        plt.close(fig)
        made.append("pr_curves.png")
    t1 = src / "table1.csv"
    if t1.exists():
        with open(t1) as fh:
            rows = list(csv.DictReader(fh))
        m = np.array([[float(r["input"]), float(r["final"])] for r in rows])
        fig, ax = plt.subplots(figsize=(4, 4))
        im = ax.imshow(m, cmap="viridis")
        ax.set_xticks([0, 1], ["input", "final"])
        ax.set_yticks(range(len(rows)), [r["architecture"] for r in rows])
        for (i, j), v in np.ndenumerate(m):
            ax.text(j, i, f"{v:.1f}", ha="center", va="center", color="w")
        fig.colorbar(im, ax=ax, label="mAP (%)")
        fig.savefig(out / "table1_heatmap.png", dpi=100, bbox_inches="tight")
        plt.close(fig)
        made.append("table1_heatmap.png")
    if not made:
        raise DataError(f"nothing to plot in {src} (need pr.csv or table1.csv)")
    return {"config": {"plots": made}, "seeds": [], "inputs": {"results": args.results}}


# --------------------------------------------------------------------- rerun


def cmd_rerun(args) -> dict:
    m = json.loads(_need(args.manifest, "manifest").read_text())
    argv = list(m["argv"]) + ["--out", args.out]
    return _dispatch(argv)


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geofuse", description="Geocentric-map fusion pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-synthetic", help="render synthetic RGB-D frames")
    s.add_argument("--spec", help="scene JSON: a full scene or random-scene parameters")
    s.add_argument("--n", type=int, default=1)
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("derive", help="compute D, H, A and contour maps")
    s.add_argument("--in", dest="input", help="directory of frame directories")
    s.add_argument("--rgb")
    s.add_argument("--depth")
    s.add_argument("--intrinsics")
    s.add_argument("--contour")
    s.add_argument("--config")
    s.add_argument("--window", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--self-test", action="store_true")
    s.add_argument("--gravity-tol", type=float, default=2.0, help="degrees, self-test only")
    s.set_defaults(func=cmd_derive)

    s = sub.add_parser("train-fusion", help="train a multi-stream patch network")
    s.add_argument("--data", required=True, help="output directory of derive")
    s.add_argument("--config")
    s.add_argument("--streams", help="comma separated, e.g. D,H,A")
    s.add_argument("--fusion")
    s.add_argument("--ablation")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--per-class", dest="per_class", type=int)
    s.set_defaults(func=cmd_train_fusion)

    s = sub.add_parser("extract-features", help="network features for proposal windows")
    s.add_argument("--net", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--streams", default="D,H,A")
    s.add_argument("--layer", default="fc1")
    s.add_argument("--mode", choices=("train", "test"), default="test")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_extract_features)

    s = sub.add_parser("train-svm", help="one-vs-rest SVMs on extracted features")
    s.add_argument("--features", required=True)
    s.add_argument("--config")
    s.add_argument("--C", type=float)
    s.add_argument("--B", type=float)
    s.add_argument("--w1", type=float)
    s.add_argument("--pca", type=int)
    s.add_argument("--feature-norm", dest="feature_norm", type=float)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train_svm)

    s = sub.add_parser("eval-detect", help="score, suppress and compute AP")
    s.add_argument("--features", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--nms", type=float, default=0.3)
    s.add_argument("--iou", type=float, default=0.5)
    s.add_argument("--ap-mode", dest="ap_mode", default="step", choices=("step", "voc", "11point"))
    s.set_defaults(func=cmd_eval_detect)

    s = sub.add_parser("fusion-sweep", help="fusion-point and ablation study")
    s.add_argument("--config")
    s.add_argument("--seeds", type=lambda v: [int(x) for x in v.split(",")])
    s.add_argument("--epochs", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_fusion_sweep)

    s = sub.add_parser("plot", help="PR curves and table heatmap")
    s.add_argument("--results", required=True)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("rerun", help="repeat a run recorded in a manifest")
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_rerun)

    for name, sp in sub.choices.items():
        sp.add_argument("--out", required=True, help="output directory")
    return p


def _dispatch(argv: list[str]) -> dict:
    args = build_parser().parse_args(argv)
    info = args.func(args)
    if args.command != "rerun":
        # argv without --out, so a rerun can point it elsewhere
        rest, skip = [], False
        for a in argv:
            if skip:
                skip = False
            elif a == "--out":
                skip = True
            elif not a.startswith("--out="):
                rest.append(a)
        _write_manifest(Path(args.out), args.command, rest, info["config"], info["seeds"], info["inputs"])
    return info


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        _dispatch(argv)
    except UsageError as e:
        print(f"geofuse: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"geofuse: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as e:
        print(f"geofuse: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
