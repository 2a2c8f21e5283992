"""Weighted L1-hinge linear SVM trained by dual coordinate descent.

Minimizes ``0.5 |w|^2 + C sum_i c_i max(0, 1 - y_i w.x~_i)`` where ``x~``
appends a constant bias feature ``B`` and ``c_i`` is ``w1`` for positives.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

SVM_MAGIC = b"SVM1"


@dataclass(frozen=True)
class SvmConfig:
    C: float = 0.001
    B: float = 10.0
    w1: float = 2.0
    tol: float = 1e-4
    max_iter: int = 10000
    seed: int = 0

    def __post_init__(self):
        if not (self.C > 0 and self.B >= 0 and self.w1 > 0):
            raise ValueError(f"need C > 0, B >= 0, w1 > 0; got {self}")

    @classmethod
    def from_dict(cls, d: dict) -> "SvmConfig":
        return cls(**d)


@dataclass
class SvmModel:
    w: np.ndarray
    """Weights over the d features followed by the bias-feature weight."""
    config: SvmConfig
    iterations: int = 0
    objective: float = float("nan")
    dual_trace: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def d(self) -> int:
        return self.w.size - 1

    def save(self, path: str | Path) -> None:
        header = json.dumps(
            {"d": self.d, **asdict(self.config), "iterations": self.iterations, "objective": self.objective}
        ).encode()
        with open(path, "wb") as fh:
            fh.write(SVM_MAGIC + struct.pack("<I", len(header)) + header)
            fh.write(self.w.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "SvmModel":
        data = Path(path).read_bytes()
        if data[:4] != SVM_MAGIC:
            raise FormatError(f"{path}: not an SVM model file")
        (hlen,) = struct.unpack_from("<I", data, 4)
        try:
            h = json.loads(data[8 : 8 + hlen])
            d = int(h.pop("d"))
            it, obj = h.pop("iterations"), h.pop("objective")
            cfg = SvmConfig(**h)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{path}: bad SVM header ({e})") from None
        w = np.frombuffer(data[8 + hlen :], "<f8")
        if w.size != d + 1:
            raise FormatError(f"{path}: expected {d + 1} weights, found {w.size}")
        return cls(w.copy(), cfg, it, obj)


def augment(x: np.ndarray, B: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.hstack([x, np.full((x.shape[0], 1), B)])


def primal_objective(w: np.ndarray, x: np.ndarray, y: np.ndarray, cfg: SvmConfig) -> float:
    """Objective over raw features ``x`` (bias feature appended here)."""
    xa = augment(x, cfg.B)
    c = np.where(y > 0, cfg.w1, 1.0)
    return float(0.5 * w @ w + cfg.C * np.sum(c * np.maximum(0.0, 1.0 - y * (xa @ w))))


def _check(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or len(x) != len(y):
        raise DataError(f"features {x.shape} and labels {y.shape} do not pair up")
    if not np.all(np.isfinite(x)):
        raise DataError("features contain non-finite values")
    if not np.all(np.isin(y, (-1, 1))):
        raise DataError("labels must be +1 or -1")
    if not (np.any(y == 1) and np.any(y == -1)):
        raise DataError("both classes must be present")
    return x, y.astype(np.float64)


def train_svm(x: np.ndarray, y: np.ndarray, config: SvmConfig = SvmConfig()) -> SvmModel:
    """Dual coordinate descent with a seeded random coordinate order per pass.

    Stops once the duality gap falls below ``tol`` times the primal objective.
    ``dual_trace`` records the (minimization-form) dual objective after every
    pass; it never increases.
    """
    x, y = _check(x, y)
    xa = augment(x, config.B)
    n = len(y)
    upper = config.C * np.where(y > 0, config.w1, 1.0)
    qii = np.einsum("ij,ij->i", xa, xa)
    alpha = np.zeros(n)
    w = np.zeros(xa.shape[1])
    rng = np.random.default_rng(config.seed)
    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        for i in rng.permutation(n):
            if qii[i] <= 0:
                continue
            g = y[i] * (xa[i] @ w) - 1.0
            a_new = min(max(alpha[i] - g / qii[i], 0.0), upper[i])
            delta = a_new - alpha[i]
            if delta != 0.0:
                w += delta * y[i] * xa[i]
                alpha[i] = a_new
        dual = 0.5 * w @ w - alpha.sum()
        trace.append(float(dual))
        primal = 0.5 * w @ w + np.sum(upper * np.maximum(0.0, 1.0 - y * (xa @ w)))
        if primal + dual <= config.tol * max(abs(primal), 1e-300):
            converged = True
            break
    return SvmModel(w, config, it, float(primal), trace, converged)


def score(model: SvmModel, x: np.ndarray) -> np.ndarray:
    """Decision values ``w . (x, B)`` for a vector or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.d:
        raise DataError(f"feature dimension {x.shape[1]} does not match model ({model.d})")
    s = x @ model.w[:-1] + model.config.B * model.w[-1]
    return s[0] if single else s


def train_one_vs_rest(
    sets: dict[int, tuple[np.ndarray, np.ndarray]], config: SvmConfig = SvmConfig()
) -> dict[int, SvmModel]:
    """One binary model per class from per-class (features, +/-1 labels) sets."""
    return {c: train_svm(x, y, config) for c, (x, y) in sorted(sets.items())}


def score_all(models: dict[int, SvmModel], x: np.ndarray) -> dict[int, np.ndarray]:
    return {c: score(m, x) for c, m in models.items()}
