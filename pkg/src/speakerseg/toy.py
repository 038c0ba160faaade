"""Small frame-context MLP trained with the permutation-invariant loss.

The model maps a window of ``2 * context + 1`` feature frames to ``k_max``
speaker probabilities::

    affine -> leaky ReLU -> affine -> leaky ReLU -> affine -> sigmoid

Gradients are derived by hand; the Hungarian permutation of each chunk is held
fixed while differentiating.
"""

from __future__ import annotations

import functools
import io
import logging
import struct
import zlib
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .annotation import DEFAULT_STEP, Annotation, BinaryFrames, FrameGrid, discretize
from .augment import LabeledChunk, sample_training_batch
from .pit import Activations, bce, permute, pit_loss
from .synth import SynthConfig, generate_reference, speaker_label

log = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")
CHECKPOINT_MAGIC = b"SPKSEGT1"


@dataclass(eq=False)
class ToyModel:
    context: int
    feat_dim: int
    hidden: tuple[int, int]
    k_max: int
    params: dict[str, np.ndarray]

    @property
    def input_dim(self) -> int:
        return (2 * self.context + 1) * self.feat_dim

    def copy(self) -> "ToyModel":
        return replace(self, params={k: v.copy() for k, v in self.params.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def init_model(feat_dim: int, context: int = 2, hidden=(32, 32), k_max: int = 4, seed: int = 0) -> ToyModel:
    rng = np.random.default_rng(seed)
    d_in = (2 * context + 1) * feat_dim
    sizes = [d_in, hidden[0], hidden[1], k_max]
    params = {}
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        params[f"W{layer}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params[f"b{layer}"] = np.zeros(fan_out)
    return ToyModel(context, feat_dim, (int(hidden[0]), int(hidden[1])), k_max, params)


# ---------------------------------------------------------------- features


@functools.lru_cache(maxsize=4096)
def _embedding(label: str, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, zlib.crc32(label.encode())])
    v = rng.normal(size=dim)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def speaker_embedding(label: str, dim: int, seed: int = 0) -> np.ndarray:
    """Fixed random unit vector for ``label``."""
    return _embedding(label, dim, seed).copy()



def features_from_frames(frames: BinaryFrames, embed_dim: int, noise: float, rng,
                         embedding_seed: int = 0) -> np.ndarray:
    emb = np.stack([_embedding(lbl, embed_dim, embedding_seed) for lbl in frames.labels]) \
        if frames.num_speakers else np.zeros((0, embed_dim))
    feats = frames.data.astype(np.float64) @ emb
    if noise > 0:
        feats = feats + rng.normal(0.0, noise, size=feats.shape)
    return feats


def synth_features(ref: Annotation, grid: FrameGrid, embed_dim: int, noise: float = 0.0,
                   seed: int = 0, embedding_seed: int = 0) -> np.ndarray:
    """T x F features: sum of the active speakers' embeddings plus Gaussian noise."""
    return features_from_frames(discretize(ref, grid), embed_dim, noise,
                                np.random.default_rng(seed), embedding_seed)


def frame_windows(features: np.ndarray, context: int) -> np.ndarray:
    """Stack each frame with ``context`` neighbours per side (zero padded at the edges)."""
    feats = np.asarray(features, dtype=np.float64)
    t, f = feats.shape
    padded = np.vstack([np.zeros((context, f)), feats, np.zeros((context, f))])
    return np.hstack([padded[i:i + t] for i in range(2 * context + 1)])


# ---------------------------------------------------------------- model


def _check_finite(model: ToyModel) -> None:
    for name, value in model.params.items():
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"parameter {name} is not finite")


def _leaky(z):
    return np.maximum(z, LEAKY_SLOPE * z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward_cache(model: ToyModel, x: np.ndarray):
    p = model.params
    z1 = x @ p["W1"] + p["b1"]
    h1 = _leaky(z1)
    z2 = h1 @ p["W2"] + p["b2"]
    h2 = _leaky(z2)
    z3 = h2 @ p["W3"] + p["b3"]
    return _sigmoid(z3), (x, z1, h1, z2, h2)


def forward(model: ToyModel, windows: np.ndarray) -> np.ndarray:
    """Speaker probabilities for each row of ``windows`` (N x input_dim) -> N x k_max."""
    _check_finite(model)
    x = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise ValueError(f"expected windows of width {model.input_dim}, got {x.shape[1]}")
    return _forward_cache(model, x)[0]


def predict(model: ToyModel, features: np.ndarray, grid: FrameGrid) -> Activations:
    probs = forward(model, frame_windows(features, model.context))
    return Activations(grid, probs, tuple(f"slot{k}" for k in range(model.k_max)))


def pad_targets(y: np.ndarray, k_max: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[1] > k_max:
        raise ValueError(f"{y.shape[1]} speakers exceed k_max={k_max}")
    return np.hstack([y, np.zeros((y.shape[0], k_max - y.shape[1]))])


def batch_loss(model: ToyModel, windows: Sequence[np.ndarray], targets: Sequence[np.ndarray], perms) -> float:
    """Mean permuted BCE over every cell of every chunk, permutations fixed."""
    total, cells = 0.0, 0
    for x, y, perm in zip(windows, targets, perms):
        probs = forward(model, x)
        total += bce(permute(y, perm), probs) * probs.size
        cells += probs.size
    return total / cells


def loss_and_gradients(model: ToyModel, windows: Sequence[np.ndarray], targets: Sequence[np.ndarray],
                       perms=None):
    """Permuted BCE of a batch of chunks and its exact parameter gradients.

    When ``perms`` is None each chunk's permutation is chosen by the
    permutation-invariant loss on the current outputs and then held fixed.
    Returns ``(loss, grads, perms)``.
    """
    if len(windows) != len(targets) or (perms is not None and len(perms) != len(windows)):
        raise ValueError("windows, targets and permutations must have equal length")
    _check_finite(model)
    x = np.vstack(windows)
    probs, (x, z1, h1, z2, h2) = _forward_cache(model, x)
    if not np.all(np.isfinite(probs)):
        raise FloatingPointError("model output is not finite")
    bounds = np.cumsum([0] + [len(w) for w in windows])
    if perms is None:
        perms = [pit_loss(t, probs[a:b])[1] for t, a, b in zip(targets, bounds[:-1], bounds[1:])]
    y = np.vstack([permute(np.asarray(t, dtype=np.float64), perm) for t, perm in zip(targets, perms)])
    if y.shape != probs.shape:
        raise ValueError(f"targets of shape {y.shape} do not match outputs {probs.shape}")
    loss = bce(y, probs)
    p = model.params
    dz3 = (probs - y) / probs.size
    grads = {"W3": h2.T @ dz3, "b3": dz3.sum(axis=0)}
    dz2 = dz3 @ p["W3"].T
    dz2[z2 <= 0] *= LEAKY_SLOPE
    grads["W2"] = h1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dz1 = dz2 @ p["W2"].T
    dz1[z1 <= 0] *= LEAKY_SLOPE
    grads["W1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads, list(perms)


def backward(model: ToyModel, windows: Sequence[np.ndarray], targets: Sequence[np.ndarray], perms) -> dict[str, np.ndarray]:
    """Exact gradients of :func:`batch_loss` with respect to every parameter."""
    return loss_and_gradients(model, windows, targets, perms)[1]


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    t = state.t + 1
    new_params, m, v = {}, {}, {}
    for k in params:
        m[k] = beta1 * state.m[k] + (1 - beta1) * grads[k]
        v[k] = beta2 * state.v[k] + (1 - beta2) * grads[k] ** 2
        m_hat = m[k] / (1 - beta1 ** t)
        v_hat = v[k] / (1 - beta2 ** t)
        new_params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v, t)


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    plateau_threshold: float = 1e-4
    max_epochs: int = 50
    steps_per_epoch: int = 5
    chunk_duration: float = 5.0
    chunk_hop: float = 1.0
    mix_prob: float = 0.0
    k_max: int = 4
    context: int = 2
    hidden: tuple[int, int] = (32, 32)
    embed_dim: int = 16
    feature_noise: float = 0.1
    embedding_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.batch_size < 1 or self.steps_per_epoch < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, steps_per_epoch and max_epochs must be >= 1")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    dev_loss: float
    lr: float


@dataclass
class TrainResult:
    model: ToyModel
    log: list[EpochLog]
    best_epoch: int
    aborted: bool = False

    def log_tsv(self) -> str:
        lines = ["epoch\ttrain_loss\tdev_loss\tlr"]
        lines += [f"{e.epoch}\t{e.train_loss:.10f}\t{e.dev_loss:.10f}\t{e.lr:.10g}" for e in self.log]
        return "\n".join(lines) + "\n"


def chunk_corpus(frames: BinaryFrames, duration: float, hop: float) -> list[LabeledChunk]:
    """Label-only chunks cropped every ``hop`` seconds."""
    step = frames.grid.step
    length = int(round(duration / step))
    stride = max(1, int(round(hop / step)))
    total = frames.grid.num_frames
    starts = list(range(0, max(total - length, 0) + 1, stride))
    return [LabeledChunk(frames.crop(s, min(length, total))) for s in starts]


@dataclass
class DevSet:
    """Fixed dev windows/targets, one entry per chunk."""

    windows: list[np.ndarray]
    targets: list[np.ndarray]


def make_dev_set(frames: BinaryFrames, cfg: TrainConfig, seed: int) -> DevSet:
    rng = np.random.default_rng(seed)
    windows, targets = [], []
    for chunk in chunk_corpus(frames, cfg.chunk_duration, cfg.chunk_duration):
        feats = features_from_frames(chunk.labels, cfg.embed_dim, cfg.feature_noise, rng, cfg.embedding_seed)
        windows.append(frame_windows(feats, cfg.context))
        targets.append(pad_targets(chunk.labels.data, cfg.k_max))
    return DevSet(windows, targets)


def dev_loss(model: ToyModel, dev: DevSet) -> float:
    total, cells = 0.0, 0
    for x, y in zip(dev.windows, dev.targets):
        probs = forward(model, x)
        if not np.all(np.isfinite(probs)):
            raise FloatingPointError("model output is not finite")
        total += pit_loss(y, probs)[0] * probs.size
        cells += probs.size
    return total / cells


def dev_frame_accuracy(model: ToyModel, dev: DevSet, threshold: float = 0.5) -> float:
    """Fraction of frames whose whole speaker vector is right under each chunk's best permutation."""
    correct = frames = 0
    for x, y in zip(dev.windows, dev.targets):
        probs = forward(model, x)
        _, perm = pit_loss(y, probs)
        hard = probs >= threshold
        ok = np.all(hard == (permute(y, perm) > 0.5), axis=1)
        correct += int(ok.sum())
        frames += ok.size
    return correct / frames


def train(train_frames: BinaryFrames, dev_frames: BinaryFrames, cfg: TrainConfig = TrainConfig(),
          init: ToyModel | None = None) -> TrainResult:
    """Train with Adam, halve the learning rate on dev plateaus, keep the best dev checkpoint."""
    rng = np.random.default_rng(cfg.seed)
    corpus = chunk_corpus(train_frames, cfg.chunk_duration, cfg.chunk_hop)
    dev = make_dev_set(dev_frames, cfg, cfg.seed + 1)
    model = init.copy() if init is not None else init_model(
        cfg.embed_dim, cfg.context, cfg.hidden, cfg.k_max, cfg.seed)
    state = AdamState.zeros_like(model.params)
    lr = cfg.lr

    best = model.copy()
    best_dev = dev_loss(model, dev)
    best_epoch = 0
    plateau_ref = best_dev
    stale = 0
    history: list[EpochLog] = []
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for _ in range(cfg.steps_per_epoch):
            chunks = sample_training_batch(corpus, cfg.batch_size, cfg.mix_prob, rng, k_max=cfg.k_max)
            windows, targets = [], []
            for chunk in chunks:
                feats = features_from_frames(chunk.labels, cfg.embed_dim, cfg.feature_noise, rng, cfg.embedding_seed)
                windows.append(frame_windows(feats, cfg.context))
                targets.append(pad_targets(chunk.labels.data, cfg.k_max))
            try:
                loss, grads, _ = loss_and_gradients(model, windows, targets)
            except FloatingPointError:
                loss = np.nan
            if not np.isfinite(loss):
                log.warning("non-finite training loss at epoch %d; keeping best checkpoint", epoch)
                return TrainResult(best, history, best_epoch, aborted=True)
            params, state = adam_step(model.params, grads, state, lr)
            model = replace(model, params=params)
            losses.append(loss)
        try:
            current = dev_loss(model, dev)
        except FloatingPointError:
            current = np.nan
        if not np.isfinite(current):
            log.warning("non-finite dev loss at epoch %d; keeping best checkpoint", epoch)
            return TrainResult(best, history, best_epoch, aborted=True)
        history.append(EpochLog(epoch, float(np.mean(losses)), current, lr))
        log.info("epoch %d train %.5f dev %.5f lr %.2e", epoch, np.mean(losses), current, lr)
        if current < best_dev:
            best, best_dev, best_epoch = model.copy(), current, epoch
        if current < plateau_ref - cfg.plateau_threshold:
            plateau_ref = current
            stale = 0
        else:
            stale += 1
            if stale >= cfg.plateau_patience:
                lr *= cfg.plateau_factor
                stale = 0
    return TrainResult(best, history, best_epoch)


def make_toy_data(num_speakers: int = 2, train_duration: float = 600.0, dev_duration: float = 120.0,
                  seed: int = 0, on_rate: float = 0.3, off_rate: float = 0.5,
                  step: float = DEFAULT_STEP) -> tuple[BinaryFrames, BinaryFrames]:
    """Disjoint synthetic train/dev references on a shared speaker set."""
    labels = [speaker_label(k) for k in range(num_speakers)]
    out = []
    for duration, s in ((train_duration, seed), (dev_duration, seed + 1000)):
        cfg = SynthConfig(num_speakers, duration, on_rate, off_rate, seed=s, step=step)
        out.append(discretize(generate_reference(cfg, uri=f"toy{s}"), cfg.grid, labels))
    return out[0], out[1]


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: ToyModel) -> bytes:
    """Magic, five little-endian int64 dims, then float64 parameters in C order."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<5q", model.context, model.feat_dim, model.hidden[0], model.hidden[1], model.k_max))
    for name in PARAM_NAMES:
        buf.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())
    return buf.getvalue()


def load_checkpoint(data: bytes) -> ToyModel:
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a toy model checkpoint (bad magic)")
    context, feat_dim, h1, h2, k_max = struct.unpack("<5q", data[8:48])
    d_in = (2 * context + 1) * feat_dim
    shapes = {"W1": (d_in, h1), "b1": (h1,), "W2": (h1, h2), "b2": (h2,), "W3": (h2, k_max), "b3": (k_max,)}
    offset = 48
    params = {}
    for name in PARAM_NAMES:
        count = int(np.prod(shapes[name]))
        chunk = data[offset:offset + 8 * count]
        if len(chunk) != 8 * count:
            raise ValueError("truncated checkpoint")
        params[name] = np.frombuffer(chunk, dtype="<f8").reshape(shapes[name]).copy()
        offset += 8 * count
    if offset != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return ToyModel(context, feat_dim, (h1, h2), k_max, params)
