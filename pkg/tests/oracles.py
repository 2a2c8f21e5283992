"""Independent reference computations used by several test modules."""

import numpy as np


def sphere_grid(step_deg: float = 1.0) -> np.ndarray:
    """Unit vectors on a latitude/longitude grid covering the upper hemisphere.

    The band objective is even in g, so one hemisphere suffices.
    """
    th = np.radians(np.arange(0.0, 90.0 + 1e-9, step_deg))
    ph = np.radians(np.arange(0.0, 360.0, step_deg))
    t, p = np.meshgrid(th, ph, indexing="ij")
    return np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1).reshape(-1, 3)


def band_objective_many(aligned, orthogonal, gs):
    ca = aligned @ gs.T
    co = orthogonal @ gs.T
    return np.sum(1.0 - ca**2, axis=0) + np.sum(co**2, axis=0)


def grid_gap_bound(aligned, orthogonal, step_deg: float = 1.0) -> float:
    """Largest objective change between the optimum and its nearest grid node.

    Each term's derivative along the sphere is at most |sin(2 theta)| <= 1,
    and any point is within step*sqrt(2)/2 radians of a grid node.
    """
    return (len(aligned) + len(orthogonal)) * np.radians(step_deg) * np.sqrt(2) / 2


def rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def greedy_nms_bruteforce(boxes, scores, thr):
    """Greedy rule written out literally on Python lists."""

    def iou(a, b):
        iw = min(a[2], b[2]) - max(a[0], b[0]) + 1
        ih = min(a[3], b[3]) - max(a[1], b[1]) + 1
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        area = lambda x: (x[2] - x[0] + 1) * (x[3] - x[1] + 1)
        return inter / (area(a) + area(b) - inter)

    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    keep = []
    for i in order:
        if all(iou(boxes[i], boxes[k]) <= thr for k in keep):
            keep.append(i)
    return keep


def ap_bruteforce(tp_flags, n_gt):
    """Un-interpolated AP: mean over gt of precision at the rank it was found."""
    hits, total = 0, 0.0
    for rank, t in enumerate(tp_flags, 1):
        if t:
            hits += 1
            total += hits / rank
    return total / n_gt


def svm_dual_projected_gradient(x, y, C, B, w1, iters=200000):
    """Accelerated projected gradient on the box-constrained SVM dual.

    Shares nothing with the coordinate-descent solver beyond the problem
    statement; returns the primal weight vector over (x, B).
    """
    xa = np.hstack([x, np.full((len(x), 1), B)])
    yx = y[:, None] * xa
    Q = yx @ yx.T
    U = C * np.where(y > 0, w1, 1.0)
    L = np.linalg.eigvalsh(Q).max()
    a = np.zeros(len(y))
    z = a.copy()
    t = 1.0
    for _ in range(iters):
        a_new = np.clip(z - (Q @ z - 1.0) / L, 0.0, U)
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        z = a_new + (t - 1) / t_new * (a_new - a)
        if np.max(np.abs(a_new - a)) < 1e-15:
            a = a_new
            break
        a, t = a_new, t_new
    return yx.T @ a


def svm_primal(w, x, y, C, B, w1):
    xa = np.hstack([x, np.full((len(x), 1), B)])
    c = np.where(y > 0, w1, 1.0)
    return 0.5 * w @ w + C * np.sum(c * np.maximum(0.0, 1.0 - y * (xa @ w)))


def greedy_match_bruteforce(dets, gts, thr=0.5):
    """TP flags in score order for (frame, [x1,y1,x2,y2], score) detections.

    Each detection takes its highest-overlap gt box in the frame (first on
    ties); it counts only if that box clears the threshold and is unused.
    """

    def iou(a, b):
        cells = lambda x: {(i, j) for i in range(x[0], x[2] + 1) for j in range(x[1], x[3] + 1)}
        ca, cb = cells(a), cells(b)
        return len(ca & cb) / len(ca | cb)

    order = sorted(range(len(dets)), key=lambda i: (-dets[i][2], i))
    used = set()
    flags = []
    for i in order:
        frame, box, _ = dets[i]
        cand = gts.get(frame, [])
        if not cand:
            flags.append(False)
            continue
        ovs = [iou(box, g) for g in cand]
        j = ovs.index(max(ovs))
        hit = ovs[j] >= thr and (frame, j) not in used
        if hit:
            used.add((frame, j))
        flags.append(hit)
    return flags
