"""Iterative gravity-direction estimation from surface normals.

Each step splits the normals into an aligned band (nearly parallel or
anti-parallel to the current gravity guess) and an orthogonal band (nearly
perpendicular), then picks the unit vector that is most parallel to the
first band and most perpendicular to the second:

    min_g  sum_aligned sin^2(n, g) + sum_orth cos^2(n, g)

With sin^2 = 1 - (n.g)^2 and cos^2 = (n.g)^2 this is |aligned| + g^T M g for
M = sum_orth n n^T - sum_aligned n n^T, minimized by the eigenvector of the
smallest eigenvalue of M.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import NormalMap

Y_AXIS = np.array([0.0, 1.0, 0.0])
DEFAULT_SCHEDULE: tuple[tuple[float, int], ...] = ((45.0, 3), (15.0, 3))


@dataclass(frozen=True)
class NormalPartition:
    aligned: np.ndarray
    orthogonal: np.ndarray

    def __len__(self) -> int:
        return len(self.aligned) + len(self.orthogonal)


@dataclass(frozen=True)
class StepRecord:
    threshold: float
    n_aligned: int
    n_orthogonal: int
    objective: float
    g: tuple[float, float, float]
    non_unique: bool = False


@dataclass(frozen=True)
class GravityEstimate:
    g: np.ndarray
    iterations: list[StepRecord] = field(default_factory=list)

    @property
    def non_unique(self) -> bool:
        return any(r.non_unique for r in self.iterations)

    def to_dict(self) -> dict:
        return {"g": [float(x) for x in self.g], "iterations": [asdict(r) for r in self.iterations]}

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(3)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise ValueError("gravity vector must be non-zero and finite")
    return v / n


def _as_normals(normals) -> np.ndarray:
    if isinstance(normals, NormalMap):
        return normals.valid_normals()
    return np.asarray(normals, dtype=np.float64).reshape(-1, 3)


def angles_deg(normals: np.ndarray, g: np.ndarray) -> np.ndarray:
    return np.degrees(np.arccos(np.clip(normals @ g, -1.0, 1.0)))


def partition_normals(normals, g, d: float) -> NormalPartition:
    """Split normals into the aligned and orthogonal bands of half-width ``d`` degrees."""
    if not 0 < d < 45 + 1e-12:
        raise ValueError(f"threshold must lie in (0, 45] degrees, got {d}")
    n = _as_normals(normals)
    theta = angles_deg(n, _unit(g))
    aligned = (theta < d) | (theta > 180.0 - d)
    orth = (theta > 90.0 - d) & (theta < 90.0 + d)
    return NormalPartition(n[aligned], n[orth])


def gravity_objective(p: NormalPartition, g) -> float:
    g = _unit(g)
    ca = p.aligned @ g
    co = p.orthogonal @ g
    return float(np.sum(1.0 - ca * ca) + np.sum(co * co))


def scatter_matrix(p: NormalPartition) -> np.ndarray:
    return p.orthogonal.T @ p.orthogonal - p.aligned.T @ p.aligned


def solve_gravity_step(p: NormalPartition, g_prev, tie_tol: float = 1e-9) -> tuple[np.ndarray, bool]:
    """Minimize the band objective over unit vectors.

    Returns ``(g, non_unique)``. When the two smallest eigenvalues of the
    scatter matrix are within ``tie_tol`` (relative to max(1, |M|)) the
    minimizer is not unique and ``g_prev`` is returned unchanged.
    """
    if len(p) == 0:
        raise ValueError("both normal sets are empty")
    g_prev = _unit(g_prev)
    evals, evecs = np.linalg.eigh(scatter_matrix(p))
    if evals[1] - evals[0] <= tie_tol * max(1.0, float(np.max(np.abs(evals)))):
        return g_prev, True
    g = evecs[:, 0]
    if g @ g_prev < 0:
        g = -g
    return g / np.linalg.norm(g), False


def estimate_gravity(
    normals,
    schedule: Sequence[tuple[float, int]] = DEFAULT_SCHEDULE,
    g0=Y_AXIS,
    max_normals: int = 20000,
    seed: int = 0,
) -> GravityEstimate:
    """Coarse-to-fine gravity estimate starting from ``g0`` (camera Y axis)."""
    if len(schedule) == 0:
        raise ValueError("schedule must be non-empty")
    n = _as_normals(normals)
    if len(n) > max_normals:
        rng = np.random.default_rng(seed)
        n = n[np.sort(rng.choice(len(n), size=max_normals, replace=False))]
    g = _unit(g0)
    trace = []
    for d, steps in schedule:
        for _ in range(int(steps)):
            part = partition_normals(n, g, float(d))
            if len(part) == 0:
                trace.append(StepRecord(float(d), 0, 0, 0.0, tuple(map(float, g))))
                continue
            g, flag = solve_gravity_step(part, g)
            trace.append(
                StepRecord(
                    float(d),
                    len(part.aligned),
                    len(part.orthogonal),
                    gravity_objective(part, g),
                    tuple(map(float, g)),
                    flag,
                )
            )
    return GravityEstimate(g, trace)


def angle_between_deg(a, b) -> float:
    """Angle between two directions in degrees."""
    a, b = _unit(a), _unit(b)
    return float(np.degrees(np.arccos(np.clip(a @ b, -1.0, 1.0))))
