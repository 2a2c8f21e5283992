"""Small multi-stream convolutional network with a movable fusion point.

A single stream is

    conv1 - relu - pool - conv2 - relu - pool - fc1 - relu - fc2

with the ablations dropping ReLUs (``convpool``), pools (``convrelu``) or
both (``conv``). Streams run in separate branches up to the fusion point,
where branch outputs are concatenated along the channel/feature axis and a
shared trunk takes over:

    input  - the streams enter conv1 as extra channels
    pool2  - branches stop after the first conv block; conv2 block is shared
    fc1    - branches stop after the conv tower; fc1 is the first fused layer
    fc2    - branches stop after fc1; fc2 (the classifier) is fused
    final  - no trunk; every stream is a complete net with its own head, and
             the concatenated fc1 features go to an external classifier

Losses are summed (not averaged) over the batch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, NumericError

FUSION_POINTS = ("input", "pool2", "fc1", "fc2", "final")
ABLATIONS = ("full", "convpool", "conv", "convrelu")
LAYER_GROUPS = ("conv1", "conv2", "fc1", "fc2")
FNET_MAGIC = b"FNET"


@dataclass(frozen=True)
class NetworkConfig:
    streams: int = 3
    in_channels: int = 1
    fusion: str = "final"
    ablation: str = "full"
    patch: int = 32
    classes: int = 4
    conv1: int = 8
    conv2: int = 16
    fc1: int = 64
    kernel: int = 5
    padding: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.fusion not in FUSION_POINTS:
            raise ValueError(f"unknown fusion point {self.fusion!r}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if self.streams < 1 or self.in_channels < 1 or self.classes < 2:
            raise ValueError("streams, in_channels >= 1 and classes >= 2 required")
        if self.flat_size() <= 0:
            raise ValueError(f"patch {self.patch} too small for this architecture")

    @property
    def relu(self) -> bool:
        return self.ablation in ("full", "convrelu")

    @property
    def pool(self) -> bool:
        return self.ablation in ("full", "convpool")

    def spatial_sizes(self) -> tuple[int, int]:
        """Side length after the first and second conv blocks."""
        s = self.patch
        out = []
        for _ in range(2):
            s = s + 2 * self.padding - self.kernel + 1
            if self.pool:
                s //= 2
            out.append(s)
        return out[0], out[1]

    def flat_size(self) -> int:
        s = self.patch
        for _ in range(2):
            s = s + 2 * self.padding - self.kernel + 1
            if s <= 0:
                return 0
            if self.pool:
                s //= 2
        return self.conv2 * s * s

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


def param_counts(cfg: NetworkConfig) -> dict[str, int]:
    """Closed-form parameter counts: per-branch, all branches, trunk and total."""
    k2 = cfg.kernel * cfg.kernel
    S = cfg.streams

    def conv(cin, cout):
        return cout * cin * k2 + cout

    def fc(nin, nout):
        return nout * nin + nout

    flat = cfg.flat_size()
    c1 = conv(cfg.in_channels, cfg.conv1)
    c2 = conv(cfg.conv1, cfg.conv2)
    f1 = fc(flat, cfg.fc1)
    f2 = fc(cfg.fc1, cfg.classes)
    if cfg.fusion == "input":
        branch, trunk = 0, conv(S * cfg.in_channels, cfg.conv1) + c2 + f1 + f2
    elif cfg.fusion == "pool2":
        branch, trunk = c1, conv(S * cfg.conv1, cfg.conv2) + f1 + f2
    elif cfg.fusion == "fc1":
        branch, trunk = c1 + c2, fc(S * flat, cfg.fc1) + f2
    elif cfg.fusion == "fc2":
        branch, trunk = c1 + c2 + f1, fc(S * cfg.fc1, cfg.classes)
    else:
        branch, trunk = c1 + c2 + f1 + f2, 0
    return {"branch": branch, "branches": S * branch, "trunk": trunk, "total": S * branch + trunk}


# --------------------------------------------------------------------- layers


class Layer:
    group: str = ""
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv(Layer):
    """Stride-1 convolution via im2col."""

    def __init__(self, cin, cout, k, padding, rng, dtype, group, gain=2.0):
        super().__init__()
        bound = np.sqrt(3.0 * gain / (cin * k * k))
        self.params["W"] = rng.uniform(-bound, bound, (cout, cin, k, k)).astype(dtype)
        self.params["b"] = np.zeros(cout, dtype=dtype)
        self.k, self.pad, self.group = k, padding, group
        # the network input needs no gradient
        self.is_input = group == "conv1"

    def forward(self, x):
        if self.pad:
            x = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad), (self.pad, self.pad)))
        n, c, h, w = x.shape
        k = self.k
        ho, wo = h - k + 1, w - k + 1
        xt = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        win = sliding_window_view(xt, (k, k), axis=(1, 2))  # n ho wo c k k
        cols = win.reshape(n * ho * wo, c * k * k)
        W = self.params["W"]
        out = cols @ W.reshape(W.shape[0], -1).T + self.params["b"]
        self.cache = (cols, x.shape)
        return out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2)

    def backward(self, dout):
        cols, xshape = self.cache
        n, c, h, w = xshape
        k = self.k
        W = self.params["W"]
        f = W.shape[0]
        ho, wo = h - k + 1, w - k + 1
        d = dout.transpose(0, 2, 3, 1).reshape(-1, f)
        self.grads["W"] = (d.T @ cols).reshape(W.shape)
        self.grads["b"] = d.sum(axis=0)
        if self.is_input:
            return None
        dcols = (d @ W.reshape(f, -1)).reshape(n, ho, wo, c, k, k)
        dx = np.zeros(xshape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if self.pad:
            p = self.pad
            dx = dx[:, :, p:-p, p:-p]
        return dx


class Relu(Layer):
    def __init__(self, group):
        super().__init__()
        self.group = group

    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, dout):
        return np.where(self.mask, dout, 0.0).astype(dout.dtype, copy=False)


class MaxPool(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""

    def __init__(self, group):
        super().__init__()
        self.group = group

    def forward(self, x):
        n, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        xr = x[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2)
        xr = xr.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
        idx = np.argmax(xr, axis=-1)
        self.cache = (idx, x.shape)
        return np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        idx, xshape = self.cache
        n, c, h, w = xshape
        ho, wo = h // 2, w // 2
        d = np.zeros((n, c, ho, wo, 4), dtype=dout.dtype)
        np.put_along_axis(d, idx[..., None], dout[..., None], axis=-1)
        d = d.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        dx = np.zeros(xshape, dtype=dout.dtype)
        dx[:, :, : 2 * ho, : 2 * wo] = d
        return dx


class Flatten(Layer):
    def __init__(self, group):
        super().__init__()
        self.group = group

    def forward(self, x):
        self.shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self.shape)


class Dense(Layer):
    def __init__(self, nin, nout, rng, dtype, group, gain=2.0):
        super().__init__()
        bound = np.sqrt(3.0 * gain / nin)
        self.params["W"] = rng.uniform(-bound, bound, (nin, nout)).astype(dtype)
        self.params["b"] = np.zeros(nout, dtype=dtype)
        self.group = group

    def forward(self, x):
        self.x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self.x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


class Sequential:
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x, taps: dict | None = None, prefix: str = ""):
        for i, layer in enumerate(self.layers):
            x = layer.forward(x)
            nxt = self.layers[i + 1].group if i + 1 < len(self.layers) else None
            if taps is not None and layer.group and nxt != layer.group:
                taps.setdefault(layer.group, []).append(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
            if dout is None:
                break
        return dout

    def param_layers(self):
        return [layer for layer in self.layers if layer.params]

    def groups(self) -> set[str]:
        return {layer.group for layer in self.layers}


# -------------------------------------------------------------------- network


def _stream_layers(cfg: NetworkConfig, cin: int, rng, dtype, start: str, stop: str | None, fused_in: int = 1):
    """Layers of groups ``start`` .. up to but excluding ``stop``.

    ``fused_in`` multiplies the input width of the first layer (concatenated
    branch outputs feeding a fused layer).
    """
    order = list(LAYER_GROUPS)
    groups = order[order.index(start) : order.index(stop) if stop else None]
    layers: list[Layer] = []
    # He scaling in front of a ReLU, variance-preserving scaling otherwise
    gain = 2.0 if cfg.relu else 1.0
    for gi, g in enumerate(groups):
        mult = fused_in if gi == 0 else 1
        if g == "conv1":
            layers.append(Conv(cin * mult, cfg.conv1, cfg.kernel, cfg.padding, rng, dtype, g, gain))
        elif g == "conv2":
            layers.append(Conv(cfg.conv1 * mult, cfg.conv2, cfg.kernel, cfg.padding, rng, dtype, g, gain))
        elif g == "fc1":
            layers.append(Flatten(g))
            layers.append(Dense(cfg.flat_size() * mult, cfg.fc1, rng, dtype, g, gain))
        else:
            layers.append(Dense(cfg.fc1 * mult, cfg.classes, rng, dtype, g, 1.0))
        if g != "fc2":
            if cfg.relu:
                layers.append(Relu(g))
            if cfg.pool and g in ("conv1", "conv2"):
                layers.append(MaxPool(g))
    return layers


_FIRST_FUSED = {"input": "conv1", "pool2": "conv2", "fc1": "fc1", "fc2": "fc2", "final": None}


def softmax_xent(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    n = len(y)
    loss = float(-np.sum(np.log(np.maximum(p[np.arange(n), y], 1e-300))))
    d = p.copy()
    d[np.arange(n), y] -= 1.0
    return loss, d


def preprocess(x: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Byte patches -> zero-centered floats in [-0.5, 0.5]."""
    x = np.asarray(x)
    if x.dtype == np.uint8:
        return (x.astype(dtype) / 255.0 - 0.5).astype(dtype, copy=False)
    return x.astype(dtype, copy=False)


class Network:
    """Branches before the fusion point, shared trunk after it."""

    def __init__(self, cfg: NetworkConfig, dtype=np.float64):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(cfg.seed)
        first = _FIRST_FUSED[cfg.fusion]
        S, cin = cfg.streams, cfg.in_channels
        if cfg.fusion == "input":
            self.branches = []
        else:
            self.branches = [
                Sequential(_stream_layers(cfg, cin, rng, self.dtype, "conv1", first)) for _ in range(S)
            ]
        if first is None:
            self.trunk = None
        else:
            self.trunk = Sequential(
                _stream_layers(cfg, cin, rng, self.dtype, first, None, fused_in=S)
            )

    # parameter bookkeeping ------------------------------------------------

    def parameters(self) -> list[tuple[str, Layer, str]]:
        """(path, layer, key) in declaration order: branches first, then trunk."""
        out = []
        for s, br in enumerate(self.branches):
            for layer in br.param_layers():
                for key in ("W", "b"):
                    out.append((f"branch{s}.{layer.group}.{key}", layer, key))
        if self.trunk is not None:
            for layer in self.trunk.param_layers():
                for key in ("W", "b"):
                    out.append((f"trunk.{layer.group}.{key}", layer, key))
        return out

    def param_counts(self) -> dict[str, int]:
        branch = [sum(l.params[k].size for l in br.param_layers() for k in l.params) for br in self.branches]
        trunk = 0 if self.trunk is None else sum(
            l.params[k].size for l in self.trunk.param_layers() for k in l.params
        )
        return {
            "branch": branch[0] if branch else 0,
            "branches": sum(branch),
            "trunk": trunk,
            "total": sum(branch) + trunk,
        }

    def get_flat(self) -> np.ndarray:
        return np.concatenate([layer.params[k].ravel() for _, layer, k in self.parameters()])

    # forward / backward ---------------------------------------------------

    def _split(self, x: np.ndarray) -> list[np.ndarray]:
        c = self.cfg.in_channels
        return [x[:, s * c : (s + 1) * c] for s in range(self.cfg.streams)]

    def _check(self, x: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        want = (cfg.streams * cfg.in_channels, cfg.patch, cfg.patch)
        if x.ndim != 4 or tuple(x.shape[1:]) != want:
            raise ValueError(f"input shape {x.shape[1:]} does not match config {want}")
        return preprocess(x, self.dtype)

    def _run(self, x: np.ndarray, taps: dict | None = None):
        """Returns trunk output (or per-branch outputs for final fusion)."""
        x = self._check(x)
        if not self.branches:
            return self.trunk.forward(x, taps)
        outs = [br.forward(xs, taps) for br, xs in zip(self.branches, self._split(x))]
        if self.trunk is None:
            return outs
        self._branch_widths = [o.shape[1] for o in outs]
        return self.trunk.forward(np.concatenate(outs, axis=1), taps)

    def logits(self, x: np.ndarray):
        """Class scores; a list of per-stream scores for final fusion."""
        return self._run(x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class scores, or concatenated per-stream fc1 features for final fusion."""
        if self.cfg.fusion == "final":
            return self.extract_features(x, "fc1")
        return self._run(x)

    def extract_features(self, x: np.ndarray, layer: str = "fc1") -> np.ndarray:
        """Activations at the end of ``layer`` (after its ReLU when present).

        Layers that live in the branches are concatenated in stream order.
        """
        if layer not in LAYER_GROUPS:
            raise KeyError(f"unknown layer {layer!r}")
        taps: dict[str, list[np.ndarray]] = {}
        self._run(x, taps)
        got = taps[layer]
        flat = [g.reshape(g.shape[0], -1) for g in got]
        in_trunk = self.trunk is not None and layer in self.trunk.groups()
        return flat[-1] if in_trunk else np.concatenate(flat, axis=1)

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> float:
        """Forward + backward; gradients are left in each layer's ``grads``."""
        y = np.asarray(y, dtype=np.int64)
        out = self._run(x)
        if self.trunk is None:
            self.last_pred = self._predict_from(out)
            total = 0.0
            for br, logits in zip(self.branches, out):
                loss, d = softmax_xent(logits, y)
                br.backward(d.astype(self.dtype, copy=False))
                total += loss
            return total
        self.last_pred = self._predict_from(out)
        loss, d = softmax_xent(out, y)
        d = self.trunk.backward(d.astype(self.dtype, copy=False))
        if self.branches:
            splits = np.cumsum(self._branch_widths)[:-1]
            for br, ds in zip(self.branches, np.split(d, splits, axis=1)):
                br.backward(ds)
        return loss

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        y = np.asarray(y, dtype=np.int64)
        out = self._run(x)
        if self.trunk is None:
            return sum(softmax_xent(o, y)[0] for o in out)
        return softmax_xent(out, y)[0]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self._predict_from(self._run(x))

    def _predict_from(self, out) -> np.ndarray:
        if self.trunk is None:
            # independent heads: average the per-stream softmax probabilities
            probs = []
            for o in out:
                e = np.exp(o - o.max(axis=1, keepdims=True))
                probs.append(e / e.sum(axis=1, keepdims=True))
            return np.argmax(np.mean(probs, axis=0), axis=1)
        return np.argmax(out, axis=1)

    def copy_branches_from(self, other: "Network") -> None:
        """Warm start: copy matching branch parameters from a trained net."""
        if len(other.branches) != len(self.branches):
            raise ValueError("stream counts differ")
        for mine, theirs in zip(self.branches, other.branches):
            for a, b in zip(mine.param_layers(), theirs.param_layers()):
                if a.group != b.group:
                    break
                for k in a.params:
                    if a.params[k].shape != b.params[k].shape:
                        raise ValueError(f"shape mismatch in {a.group}.{k}")
                    a.params[k] = b.params[k].astype(self.dtype).copy()

    # serialization --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        header = json.dumps({"config": self.cfg.to_dict(), "dtype": "float64"}).encode()
        with open(path, "wb") as fh:
            fh.write(FNET_MAGIC + struct.pack("<I", len(header)) + header)
            for _, layer, k in self.parameters():
                fh.write(layer.params[k].astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path, dtype=np.float64) -> "Network":
        data = Path(path).read_bytes()
        if data[:4] != FNET_MAGIC:
            raise FormatError(f"{path}: not an FNET file")
        (hlen,) = struct.unpack_from("<I", data, 4)
        try:
            header = json.loads(data[8 : 8 + hlen])
            cfg = NetworkConfig.from_dict(header["config"])
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise FormatError(f"{path}: bad FNET header ({e})") from None
        net = cls(cfg, dtype)
        pos = 8 + hlen
        for _, layer, k in net.parameters():
            n = layer.params[k].size
            chunk = data[pos : pos + 8 * n]
            if len(chunk) < 8 * n:
                raise FormatError(f"{path}: truncated parameters")
            layer.params[k] = np.frombuffer(chunk, "<f8").reshape(layer.params[k].shape).astype(dtype)
            pos += 8 * n
        return net


# ------------------------------------------------------------------ training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    lr_step: int = 20
    lr_factor: float = 0.1
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    weight_decay: float = 0.0
    clip_norm: float | None = None
    """Rescale the whole gradient when its norm exceeds this (per batch)."""

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainState:
    config: TrainConfig
    trace: list[dict] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        lines = ["epoch,loss,train_acc,val_acc"]
        for r in self.trace:
            va = "" if r["val_acc"] is None else repr(r["val_acc"])
            lines.append(f"{r['epoch']},{r['loss']!r},{r['train_acc']!r},{va}")
        Path(path).write_text("\n".join(lines) + "\n")


def train(
    cfg: NetworkConfig,
    x: np.ndarray,
    y: np.ndarray,
    tcfg: TrainConfig = TrainConfig(),
    val: tuple[np.ndarray, np.ndarray] | None = None,
    dtype=np.float64,
    init: Network | None = None,
    progress: Callable[[dict], None] | None = None,
) -> tuple[Network, TrainState]:
    """Mini-batch SGD with momentum and a step learning-rate schedule.

    ``train_acc`` in the trace is the running accuracy over the epoch's
    batches, measured before each update.
    """
    if x.shape[1] != cfg.streams * cfg.in_channels:
        raise ValueError(
            f"dataset has {x.shape[1]} channels, config expects {cfg.streams * cfg.in_channels}"
        )
    net = Network(cfg, dtype)
    if init is not None:
        net.copy_branches_from(init)
    params = net.parameters()
    velocity = [np.zeros_like(layer.params[k]) for _, layer, k in params]
    rng = np.random.default_rng(tcfg.seed)
    state = TrainState(tcfg)
    n = len(y)
    for epoch in range(tcfg.epochs):
        lr = tcfg.lr * tcfg.lr_factor ** (epoch // tcfg.lr_step) if tcfg.lr_step > 0 else tcfg.lr
        order = rng.permutation(n)
        total = 0.0
        correct = 0
        for start in range(0, n, tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            loss = net.loss_and_grads(x[idx], y[idx])
            if not np.isfinite(loss):
                raise NumericError(f"training diverged at epoch {epoch}: loss={loss}")
            total += loss
            correct += int(np.sum(net.last_pred == y[idx]))
            shrink = 1.0
            if tcfg.clip_norm is not None:
                gn = np.sqrt(sum(float(np.sum(layer.grads[k].astype(np.float64) ** 2)) for _, layer, k in params))
                if gn > tcfg.clip_norm:
                    shrink = tcfg.clip_norm / gn
            for v, (_, layer, k) in zip(velocity, params):
                g = layer.grads[k] if shrink == 1.0 else layer.grads[k] * shrink
                if tcfg.weight_decay:
                    g = g + tcfg.weight_decay * layer.params[k]
                v *= tcfg.momentum
                v -= lr * g
                layer.params[k] += v
        if not np.all(np.isfinite(net.get_flat())):
            raise NumericError(f"training diverged at epoch {epoch}: non-finite parameters")
        rec = {
            "epoch": epoch,
            "loss": total / n,
            "train_acc": correct / n,
            "val_acc": accuracy(net, *val) if val is not None else None,
        }
        state.trace.append(rec)
        if progress is not None:
            progress(rec)
    return net, state


def batched(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, batch: int = 256) -> np.ndarray:
    if len(x) == 0:
        return fn(x[:1])[:0]
    return np.concatenate([fn(x[i : i + batch]) for i in range(0, len(x), batch)])


def accuracy(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    pred = batched(net.predict, x)
    return float(np.mean(pred == y))


def numeric_gradient(net: Network, x: np.ndarray, y: np.ndarray, eps: float = 1e-6) -> list[np.ndarray]:
    """Central finite differences of the summed loss for every parameter."""
    out = []
    for _, layer, k in net.parameters():
        p = layer.params[k]
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            lp = net.loss(x, y)
            flat[i] = old - eps
            lm = net.loss(x, y)
            flat[i] = old
            gf[i] = (lp - lm) / (2 * eps)
        out.append(g)
    return out


def analytic_gradient(net: Network, x: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    net.loss_and_grads(x, y)
    return [layer.grads[k].copy() for _, layer, k in net.parameters()]


def stream_permutation(cfg: NetworkConfig, perm: Sequence[int]) -> np.ndarray:
    """Channel index order that reorders streams by ``perm``."""
    c = cfg.in_channels
    return np.concatenate([np.arange(p * c, (p + 1) * c) for p in perm])


def input_equivalent(net: Network) -> Network:
    """Input-fusion net whose fc1 features equal those of a final-fusion ``net``.

    Every layer width is multiplied by the stream count and the weights are
    block diagonal, so each stream keeps its own channels all the way up. The
    head sums the per-stream logits.
    """
    cfg = net.cfg
    if cfg.fusion != "final":
        raise ValueError("source network must use final fusion")
    S = cfg.streams
    wide = replace(cfg, fusion="input", conv1=S * cfg.conv1, conv2=S * cfg.conv2, fc1=S * cfg.fc1)
    out = Network(wide, net.dtype)
    for layer in out.trunk.param_layers():
        src = [next(l for l in br.param_layers() if l.group == layer.group) for br in net.branches]
        W = np.zeros_like(layer.params["W"])
        if isinstance(layer, Conv):
            co, ci = src[0].params["W"].shape[:2]
            for s, l in enumerate(src):
                W[s * co : (s + 1) * co, s * ci : (s + 1) * ci] = l.params["W"]
            b = np.concatenate([l.params["b"] for l in src])
        elif layer.group == "fc1":
            ni, no = src[0].params["W"].shape
            for s, l in enumerate(src):
                W[s * ni : (s + 1) * ni, s * no : (s + 1) * no] = l.params["W"]
            b = np.concatenate([l.params["b"] for l in src])
        else:
            W = np.concatenate([l.params["W"] for l in src], axis=0)
            b = np.sum([l.params["b"] for l in src], axis=0)
        layer.params["W"], layer.params["b"] = W.astype(net.dtype), b.astype(net.dtype)
    return out
