"""Principal component projection of feature matrices."""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

PCA_MAGIC = b"PCA1"
GRAM_SWITCH = 4096


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray
    """(k, d), orthonormal rows."""
    fractions: np.ndarray
    eigenvalues: np.ndarray

    @property
    def d(self) -> int:
        return self.basis.shape[1]

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    def save(self, path: str | Path) -> None:
        header = json.dumps(
            {
                "d": self.d,
                "k": self.k,
                "fractions": [float(f) for f in self.fractions],
                "eigenvalues": [float(e) for e in self.eigenvalues],
            }
        ).encode()
        with open(path, "wb") as fh:
            fh.write(PCA_MAGIC + struct.pack("<I", len(header)) + header)
            fh.write(self.mean.astype("<f8").tobytes())
            fh.write(self.basis.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "PcaModel":
        data = Path(path).read_bytes()
        if data[:4] != PCA_MAGIC:
            raise FormatError(f"{path}: not a PCA model file")
        (hlen,) = struct.unpack_from("<I", data, 4)
        try:
            h = json.loads(data[8 : 8 + hlen])
            d, k = int(h["d"]), int(h["k"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{path}: bad PCA header ({e})") from None
        body = np.frombuffer(data[8 + hlen :], "<f8")
        if body.size != d + k * d:
            raise FormatError(f"{path}: expected {d + k * d} values, found {body.size}")
        return cls(body[:d].copy(), body[d:].reshape(k, d).copy(), np.array(h["fractions"]), np.array(h["eigenvalues"]))


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(basis), axis=1)
    s = np.sign(basis[np.arange(len(basis)), idx])
    s[s == 0] = 1.0
    return basis * s[:, None]


def fit_pca(features: np.ndarray, k: int) -> PcaModel:
    """Top-k principal directions of the centered rows of ``features``."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"features must be a matrix, got shape {x.shape}")
    n, d = x.shape
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"k={k} outside [1, {min(n - 1, d)}]")
    if not np.all(np.isfinite(x)):
        raise DataError("features contain non-finite values")
    mean = x.mean(axis=0)
    xc = x - mean
    if d <= GRAM_SWITCH:
        evals, evecs = np.linalg.eigh(xc.T @ xc / (n - 1))
        order = np.argsort(evals)[::-1]
        evals = np.maximum(evals[order], 0.0)
        basis = evecs[:, order[:k]].T
    else:
        gvals, gvecs = np.linalg.eigh(xc @ xc.T / (n - 1))
        order = np.argsort(gvals)[::-1]
        evals = np.maximum(gvals[order], 0.0)
        u = gvecs[:, order[:k]]
        basis = (xc.T @ u).T
        basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    total = evals.sum()
    fractions = evals[:k] / total if total > 0 else np.zeros(k)
    if total > 0 and k > 1 and np.cumsum(fractions)[-2] >= 1.0 - 1e-12:
        warnings.warn("data rank is below k; trailing components carry no variance", RuntimeWarning)
    return PcaModel(mean, _fix_signs(basis), fractions, evals[:k].copy())


def project(model: PcaModel, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d:
        raise DataError(f"feature dimension {x.shape[-1]} does not match model ({model.d})")
    return (x - model.mean) @ model.basis.T


def reconstruct(model: PcaModel, z: np.ndarray) -> np.ndarray:
    return np.asarray(z) @ model.basis + model.mean
