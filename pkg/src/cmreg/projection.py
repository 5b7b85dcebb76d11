"""Learned metric projection: an MLP regressing a pose to its nearest manifold pose.

Plain NumPy, float64, manual backprop and Adam.
"""
from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pose import as_array, compose_arrays, wrap_degrees

MAGIC = b"CMRGMLP\x00"
MODEL_VERSION = 1
DEFAULT_OFFSETS = (1.0, 1.0, 1.0, 2.0, 2.0, 2.0)


@dataclass(frozen=True)
class MlpArchitecture:
    hidden: tuple = (64, 64, 64, 64)
    input_dim: int = 6
    output_dim: int = 6
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) <= 0:
            raise ValueError("hidden layer widths must be a non-empty list of positive ints")
        if self.activation != "relu":
            raise ValueError("only the rectifier activation is supported")

    @property
    def widths(self) -> tuple:
        return (self.input_dim,) + self.hidden + (self.output_dim,)

    @classmethod
    def wide(cls) -> "MlpArchitecture":
        return cls((4096, 4096, 4096, 4096))


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, params, cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            p -= c.lr * (m / b1t) / (np.sqrt(v / b2t) + c.eps)


@dataclass
class ProjectionModel:
    arch: MlpArchitecture
    weights: list
    biases: list
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_mean: np.ndarray
    out_scale: np.ndarray
    meta: dict = field(default_factory=dict)
    residual: bool = True  # network regresses target - input rather than the target itself

    def __post_init__(self):
        w = self.arch.widths
        if len(self.weights) != len(w) - 1 or len(self.biases) != len(w) - 1:
            raise ValueError("layer count does not match the architecture")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (w[i], w[i + 1]) or b.shape != (w[i + 1],):
                raise ValueError(f"layer {i}: weight shape {W.shape} does not match the architecture")
        for name in ("in_scale", "out_scale"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError("normalization scales must be strictly positive")

    @property
    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    # ------------------------------------------------------ normalization
    def normalize_in(self, X):
        X = np.asarray(X, dtype=float).copy()
        X[..., 3:] = wrap_degrees(X[..., 3:])
        return (X - self.in_mean) / self.in_scale

    def normalize_out(self, Y):
        return (np.asarray(Y, dtype=float) - self.out_mean) / self.out_scale

    def denormalize_out(self, Yn):
        return np.asarray(Yn, dtype=float) * self.out_scale + self.out_mean

    # ------------------------------------------------------------ forward
    def forward(self, Xn):
        h = Xn
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def project(self, queries) -> np.ndarray:
        """Predicted manifold pose for each query, in mm/deg."""
        Q = np.asarray(queries, dtype=float)
        single = Q.ndim == 1
        Q = Q.reshape(-1, 6)
        Y = self.denormalize_out(self.forward(self.normalize_in(Q)))
        if self.residual:
            Y = Y + Q
        Y[:, 3:] = wrap_degrees(Y[:, 3:])
        return Y[0] if single else Y


def init_model(arch: MlpArchitecture, seed, in_mean=None, in_scale=None,
               out_mean=None, out_scale=None, residual: bool = True) -> ProjectionModel:
    """He-style uniform fan-in initialization; zero biases."""
    rng = np.random.default_rng(seed)
    w = arch.widths
    Ws, bs = [], []
    for i in range(len(w) - 1):
        lim = math.sqrt(6.0 / w[i])
        Ws.append(rng.uniform(-lim, lim, size=(w[i], w[i + 1])))
        bs.append(np.zeros(w[i + 1]))
    z_in, o_in = np.zeros(arch.input_dim), np.ones(arch.input_dim)
    z_out, o_out = np.zeros(arch.output_dim), np.ones(arch.output_dim)
    return ProjectionModel(arch, Ws, bs,
                           z_in if in_mean is None else np.asarray(in_mean, float),
                           o_in if in_scale is None else np.asarray(in_scale, float),
                           z_out if out_mean is None else np.asarray(out_mean, float),
                           o_out if out_scale is None else np.asarray(out_scale, float),
                           residual=residual)


def loss_and_grads(model: ProjectionModel, Xn, Yn):
    """Mean squared error over all output elements and its exact gradients."""
    acts = [Xn]
    pre = []
    h = Xn
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    diff = h - Yn
    n = diff.size
    loss = float(np.sum(diff * diff) / n)
    g = 2.0 * diff / n
    gW = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(last, -1, -1):
        if i < last:
            g = g * (pre[i] > 0.0)
        gW[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = g @ model.weights[i].T
    grads = []
    for a, b in zip(gW, gb):
        grads += [a, b]
    return loss, grads


# ------------------------------------------------------------ training data

@dataclass
class TrainingSet:
    inputs: np.ndarray
    targets: np.ndarray
    source_index: np.ndarray

    def __len__(self):
        return len(self.inputs)

    def split(self, n_holdout: int) -> tuple["TrainingSet", "TrainingSet"]:
        k = len(self) - n_holdout
        return (TrainingSet(self.inputs[:k], self.targets[:k], self.source_index[:k]),
                TrainingSet(self.inputs[k:], self.targets[k:], self.source_index[k:]))


def make_training_set(manifold, offset_bounds=DEFAULT_OFFSETS, n: int = 20_000,
                      seed=0) -> TrainingSet:
    """Manifold poses right-composed with a bounded uniform offset, labelled by exact NN."""
    bounds = np.broadcast_to(np.asarray(offset_bounds, dtype=float), (6,))
    if np.any(bounds < 0):
        raise ValueError("offset bounds must be non-negative")
    if n == 0:
        z = np.zeros((0, 6))
        return TrainingSet(z, z.copy(), np.zeros(0, dtype=np.int64))
    if len(manifold) == 0:
        raise ValueError("manifold is empty")
    rng = np.random.default_rng(seed)
    src = rng.integers(0, len(manifold), size=n)
    offsets = rng.uniform(-1.0, 1.0, size=(n, 6)) * bounds
    base = manifold.poses[src]
    if np.all(bounds == 0):
        X = base.copy()
    else:
        X = compose_arrays(base, offsets)
    Y = manifold.project(X)
    return TrainingSet(X, Y, src)


DIVERGENCE_FACTOR = 1e6


class TrainingDiverged(RuntimeError):
    pass


def _scale(x):
    s = np.std(x, axis=0)
    return np.where(s > 1e-12, s, 1.0)


def train_targets(X, Y, residual: bool) -> np.ndarray:
    """What the network regresses: the NN pose, or its shortest-arc offset from the input."""
    if not residual:
        return np.asarray(Y, dtype=float)
    D = np.asarray(Y, dtype=float) - X
    D[:, 3:] = wrap_degrees(D[:, 3:])
    return D


def train(pairs: TrainingSet, arch: MlpArchitecture = MlpArchitecture(),
          adam: AdamConfig = AdamConfig(), epochs: int = 200, batch: int = 256,
          seed=0, log=None, residual: bool = True,
          final_lr_fraction: float = 1.0) -> ProjectionModel:
    """Minimise the normalized MSE between network output and NN target.

    With ``residual`` the output layer predicts the correction from the query
    to its NN, so project() returns query + correction. ``final_lr_fraction``
    < 1 decays the learning rate geometrically to that fraction of ``adam.lr``
    over the run. Deterministic for a fixed seed: the initialization and every
    epoch's batch order come from ``default_rng(seed)``.
    """
    if len(pairs) == 0:
        raise ValueError("no training pairs")
    X = np.asarray(pairs.inputs, dtype=float).copy()
    X[:, 3:] = wrap_degrees(X[:, 3:])
    if not 0 < final_lr_fraction <= 1:
        raise ValueError("final_lr_fraction must lie in (0, 1]")
    Y = train_targets(X, pairs.targets, residual)
    model = init_model(arch, seed, X.mean(axis=0), _scale(X), Y.mean(axis=0), _scale(Y),
                       residual=residual)
    Xn = model.normalize_in(X)
    Yn = model.normalize_out(Y)
    opt = Adam(model.params, adam)
    rng = np.random.default_rng([seed, 1])
    curve = []
    first = None
    for ep in range(epochs):
        if final_lr_fraction < 1 and epochs > 1:
            lr = adam.lr * final_lr_fraction ** (ep / (epochs - 1))
            opt.cfg = dataclasses.replace(adam, lr=lr)
        order = rng.permutation(len(Xn))
        total = 0.0
        for s in range(0, len(order), batch):
            idx = order[s:s + batch]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grads(model, Xn[idx], Yn[idx])
            first = loss if first is None else first
            # targets are normalized, so a loss this far above the start is a blow-up
            if not math.isfinite(loss) or loss > DIVERGENCE_FACTOR * max(first, 1.0):
                raise TrainingDiverged(f"training diverged at epoch {ep} (lr={opt.cfg.lr:g})")
            opt.step(model.params, grads)
            total += loss * len(idx)
        curve.append(total / len(Xn))
        if log is not None:
            log(ep, curve[-1])
    model.meta = {"seed": seed if isinstance(seed, int) else str(seed), "epochs": epochs,
                  "batch": batch, "lr": adam.lr, "final_lr_fraction": final_lr_fraction,
                  "residual": residual, "n_pairs": len(Xn),
                  "final_loss": curve[-1] if curve else None, "loss_curve": curve}
    return model


# ------------------------------------------------------------------- files

def save_model(model: ProjectionModel, path) -> None:
    """Magic, version, architecture, normalization, then weights (all little-endian)."""
    w = model.arch.widths
    flags = 1 if model.residual else 0
    buf = [MAGIC, struct.pack("<III", MODEL_VERSION, len(w) - 1, flags),
           struct.pack(f"<{len(w)}I", *w)]
    for v in (model.in_mean, model.in_scale, model.out_mean, model.out_scale):
        buf.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    for W, b in zip(model.weights, model.biases):
        buf.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        buf.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    meta = json.dumps(model.meta, sort_keys=True).encode()
    buf.append(struct.pack("<I", len(meta)))
    buf.append(meta)
    Path(path).write_bytes(b"".join(buf))


def load_model(path) -> ProjectionModel:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError(f"{path}: truncated model file")
        out = data[pos:pos + n]
        pos += n
        return out

    if take(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path}: not a projection model file")
    (version,) = struct.unpack("<I", take(4))
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    n_layers, flags = struct.unpack("<II", take(8))
    if flags & ~1:
        raise ValueError(f"{path}: unknown model flags {flags:#x}")
    if not 1 <= n_layers <= 64:
        raise ValueError(f"{path}: implausible layer count {n_layers}")
    widths = struct.unpack(f"<{n_layers + 1}I", take(4 * (n_layers + 1)))
    arch = MlpArchitecture(tuple(widths[1:-1]), widths[0], widths[-1])

    def vec(n):
        return np.frombuffer(take(8 * n), dtype="<f8").astype(float)

    norms = [vec(widths[0]), vec(widths[0]), vec(widths[-1]), vec(widths[-1])]
    Ws, bs = [], []
    for i in range(n_layers):
        Ws.append(vec(widths[i] * widths[i + 1]).reshape(widths[i], widths[i + 1]))
        bs.append(vec(widths[i + 1]))
    (mlen,) = struct.unpack("<I", take(4))
    meta = json.loads(take(mlen).decode()) if mlen else {}
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after model data")
    return ProjectionModel(arch, Ws, bs, *norms, meta=meta, residual=bool(flags & 1))


@dataclass(frozen=True)
class TrainConfig:
    """Training-run defaults used by the CLI and the acceptance suite.

    Offset bounds default to ``offset_multiple`` times the manifold's median
    spacing (translation dims from the mm spacing, angles from the deg
    spacing), so the task difficulty tracks the manifold density.
    """

    pairs: int = 20_000
    holdout: int = 1_000
    epochs: int = 60
    batch: int = 256
    lr: float = 1e-3
    final_lr_fraction: float = 0.05
    offset_multiple: float = 5.0
    offsets: tuple = ()
    hidden: tuple = (64, 64, 64, 64)
    residual: bool = True
    seed: int = 0

    def offset_bounds(self, manifold) -> tuple:
        if self.offsets:
            return tuple(float(v) for v in self.offsets)
        t, r = manifold.spacing()
        return (self.offset_multiple * t,) * 3 + (self.offset_multiple * r,) * 3


def fit_projection(manifold, cfg: TrainConfig = TrainConfig(), log=None):
    """Sample pairs, hold some out, train; returns (model, held-out TrainingSet)."""
    bounds = cfg.offset_bounds(manifold)
    data = make_training_set(manifold, bounds, cfg.pairs + cfg.holdout, seed=[cfg.seed, 7])
    tr, ho = data.split(cfg.holdout)
    model = train(tr, MlpArchitecture(cfg.hidden), AdamConfig(lr=cfg.lr), cfg.epochs, cfg.batch,
                  cfg.seed, log, cfg.residual, cfg.final_lr_fraction)
    model.meta["offset_bounds"] = list(bounds)
    return model, ho


def architecture_from_name(name: str) -> MlpArchitecture:
    """``desk`` (4x64), ``wide`` (4x4096) or comma-separated hidden widths."""
    if name in ("desk", "default"):
        return MlpArchitecture()
    if name == "wide":
        return MlpArchitecture.wide()
    return MlpArchitecture(tuple(int(v) for v in name.split(",")))


__all__ = ["MlpArchitecture", "AdamConfig", "Adam", "ProjectionModel", "TrainingSet",
           "make_training_set", "train", "train_targets", "save_model", "load_model", "init_model",
           "loss_and_grads", "architecture_from_name", "TrainConfig", "fit_projection"]
