"""Training, evaluation, checkpointing and per-sample timing."""

from __future__ import annotations

import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import engine
from .engine import BatchNormState, ConvLayerState, LinearState, ShapeError
from .metrics import ConfusionMatrix, confusion_matrix
from .netspec import NetSpec, spec_hash
from .reference import LCID_RESIZE_PREPROCESSING_MS, TABLE4_HR

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"HRCN"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 4
    lr: float = 1e-4
    epochs: int = 20
    seed: int = 0
    precision: str = "f32"
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or not self.lr >= 0:
            raise ValueError("batch_size and epochs must be >= 1 and lr >= 0")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


def set_mode(states, mode: str) -> None:
    for s in states:
        if isinstance(s, BatchNormState):
            s.mode = mode


def _check_input(spec: NetSpec, x: np.ndarray) -> None:
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(spec.input_shape):
        raise ShapeError(f"expected N x {'x'.join(map(str, spec.input_shape))} input, got {x.shape}")


def forward_logits(states, spec: NetSpec, x: np.ndarray, keep_cache: bool = False):
    """Run every layer except the trailing softmax; returns (logits, caches)."""
    _check_input(spec, x)
    caches = []
    h = x
    owned = False  # whether ``h`` is a temporary we may overwrite
    for layer, state in zip(spec.layers, states):
        kind = layer.kind
        cache = None
        if kind == "conv":
            h, cache = engine.conv2d_valid_forward(h, state, keep_cache)
            owned = True
        elif kind == "maxpool":
            h, cache = engine.maxpool2d_forward(h, layer.kernel, layer.stride, keep_cache)
            owned = True
        elif kind == "relu":
            h, cache = engine.relu_forward(h, keep_cache, inplace=owned and not keep_cache)
            owned = True
        elif kind == "batchnorm":
            h, cache = engine.batchnorm2d_forward(h, state, keep_cache, inplace=owned and not keep_cache)
            owned = True
        elif kind == "adaptive_avg_pool":
            h, cache = engine.adaptive_avg_pool2d_forward(h, layer.target_h, layer.target_w, keep_cache)
            owned = True
        elif kind == "flatten":
            cache = h.shape
            h = h.reshape(h.shape[0], -1)
        elif kind == "linear":
            h, cache = engine.linear_forward(h, state, keep_cache)
            owned = True
        elif kind == "softmax":
            continue
        caches.append((kind, cache))
    return h, caches


def backward(states, spec: NetSpec, caches, dlogits: np.ndarray) -> np.ndarray:
    grad = dlogits
    for kind, cache in reversed(caches):
        if kind == "conv":
            grad = engine.conv2d_valid_backward(grad, cache)
        elif kind == "maxpool":
            grad = engine.maxpool2d_backward(grad, cache)
        elif kind == "relu":
            grad = engine.relu_backward(grad, cache)
        elif kind == "batchnorm":
            grad = engine.batchnorm2d_backward(grad, cache)
        elif kind == "adaptive_avg_pool":
            grad = engine.adaptive_avg_pool2d_backward(grad, cache)
        elif kind == "flatten":
            grad = grad.reshape(cache)
        elif kind == "linear":
            grad = engine.linear_backward(grad, cache)
    return grad


def forward_pass(states, spec: NetSpec, batch: np.ndarray) -> np.ndarray:
    """Eval-mode class probabilities, N x 2."""
    set_mode(states, "eval")
    logits, _ = forward_logits(states, spec, batch, keep_cache=False)
    return engine.softmax(logits)


def parameters(states):
    params, grads = [], []
    for s in states:
        if s is not None:
            params.extend(s.params())
            grads.extend(s.grads())
    return params, grads


@dataclass
class EpochLog:
    epoch: int
    loss: float
    train_acc: float


@dataclass
class TrainLog:
    config: TrainConfig
    epochs: list[EpochLog] = field(default_factory=list)

    def header(self) -> str:
        c = self.config
        return (f"# batch_size={c.batch_size} lr={c.lr} epochs={c.epochs} seed={c.seed} "
                f"precision={c.precision} shuffle={c.shuffle} last_batch=kept optimizer=sgd")

    def to_text(self) -> str:
        lines = [self.header(), "epoch,loss,train_acc"]
        lines += [f"{e.epoch},{e.loss:.6f},{e.train_acc:.6f}" for e in self.epochs]
        return "\n".join(lines) + "\n"


def train(spec: NetSpec, states, images: np.ndarray, labels: np.ndarray, config: TrainConfig,
          on_epoch: Callable[[EpochLog], None] | None = None) -> TrainLog:
    """Mini-batch SGD on cross-entropy; ``states`` are updated in place."""
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("training set is empty")
    if len(images) != len(labels):
        raise ValueError("images and labels differ in length")
    if images.ndim == 3:
        images = images[:, None]
    _check_input(spec, images[:1])
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 (galaxy) or 1 (nsc)")
    dtype = config.dtype
    for s in states:
        if s is not None:
            for p in s.params():
                if p.dtype != dtype:
                    raise TypeError(f"parameters are {p.dtype}, config expects {np.dtype(dtype)}")
    rng = np.random.default_rng(config.seed)
    params, grads = parameters(states)
    for g in grads:
        g[...] = 0
    log_ = TrainLog(config)
    n = len(images)
    for epoch in range(1, config.epochs + 1):
        set_mode(states, "train")
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        total_loss = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            x = images[idx].astype(dtype, copy=False)
            y = labels[idx]
            logits, caches = forward_logits(states, spec, x, keep_cache=True)
            loss, dlogits = engine.cross_entropy(logits, y)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            backward(states, spec, caches, dlogits)
            engine.sgd_step(params, grads, config.lr)
            total_loss += loss * len(idx)
            correct += int(np.sum(predict_from_scores(logits) == y))
        entry = EpochLog(epoch, total_loss / n, correct / n)
        log_.epochs.append(entry)
        log.info("epoch %d loss %.6f acc %.4f", epoch, entry.loss, entry.train_acc)
        if on_epoch:
            on_epoch(entry)
    set_mode(states, "eval")
    return log_


def predict_from_scores(scores: np.ndarray) -> np.ndarray:
    """Argmax over classes; exact ties resolve to class 0 (galaxy)."""
    return np.argmax(scores, axis=1)


@dataclass
class Evaluation:
    predictions: np.ndarray
    probabilities: np.ndarray
    confusion: ConfusionMatrix


def evaluate(states, spec: NetSpec, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 4) -> Evaluation:
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[:, None]
    dtype = next(p.dtype for s in states if s is not None for p in s.params())
    probs = [forward_pass(states, spec, images[i:i + batch_size].astype(dtype, copy=False))
             for i in range(0, len(images), batch_size)]
    probabilities = np.concatenate(probs) if probs else np.zeros((0, 2))
    predictions = predict_from_scores(probabilities)
    return Evaluation(predictions, probabilities, confusion_matrix(predictions, labels))


# ---------------------------------------------------------------- checkpoints


def _tensors(state) -> list[np.ndarray]:
    if isinstance(state, BatchNormState):
        if state.running_mean is None:
            raise CheckpointError("batchnorm running statistics are not initialized")
        return [state.gamma, state.beta, state.running_mean, state.running_var]
    return state.params()


def save_checkpoint(states, spec: NetSpec, path) -> None:
    """Write the little-endian float32 checkpoint format."""
    out = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), spec_hash(spec)]
    for i, state in enumerate(states):
        if state is None:
            continue
        tensors = _tensors(state)
        out.append(struct.pack("<II", i, len(tensors)))
        for t in tensors:
            out.append(struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
            out.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _expected_shapes(state) -> list[tuple[int, ...]]:
    return [t.shape for t in (_template_tensors(state))]


def _template_tensors(state):
    if isinstance(state, BatchNormState):
        return [state.gamma, state.beta, state.gamma, state.gamma]
    return state.params()


def load_checkpoint(path, spec: NetSpec) -> list:
    from .netspec import init_params

    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if r.take(32, "spec hash") != spec_hash(spec):
        raise CheckpointError("checkpoint was written for a different network spec")
    states = init_params(spec, seed=0)
    pending = {i for i, s in enumerate(states) if s is not None}
    while r.pos < len(data):
        index = r.u32("layer index")
        if index not in pending:
            raise CheckpointError(f"unexpected or repeated layer index {index}")
        what = f"layer {index} ({spec.layers[index].kind})"
        count = r.u32(f"{what} tensor count")
        expected = _expected_shapes(states[index])
        if count != len(expected):
            raise CheckpointError(f"{what}: expected {len(expected)} tensors, found {count}")
        tensors = []
        for j, shape in enumerate(expected):
            rank = r.u32(f"{what} tensor {j} rank")
            dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{what} tensor {j} shape"))
            if tuple(dims) != tuple(shape):
                raise CheckpointError(f"{what} tensor {j}: shape {dims} != expected {shape}")
            size = int(np.prod(dims)) * 4
            raw = r.take(size, f"{what} tensor {j} data")
            tensors.append(np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32))
        _assign(states[index], tensors)
        pending.discard(index)
    if pending:
        first = min(pending)
        raise CheckpointError(
            f"checkpoint truncated: missing layer {first} ({spec.layers[first].kind})")
    return states


def _assign(state, tensors) -> None:
    if isinstance(state, BatchNormState):
        state.gamma, state.beta, state.running_mean, state.running_var = tensors
    elif isinstance(state, (ConvLayerState, LinearState)):
        state.weights, state.bias = tensors
    state.__dict__.update({k: None for k in state.__dict__ if k.startswith("grad_")})


# ---------------------------------------------------------------- timing


@dataclass
class TimingReport:
    preprocessing_ms_per_sample: float
    classification_ms_per_sample: float
    sample_count: int
    repetitions: int
    clock: str = "time.perf_counter (monotonic)"

    @property
    def total_ms_per_sample(self) -> float:
        return self.preprocessing_ms_per_sample + self.classification_ms_per_sample

    def as_dict(self) -> dict:
        return {
            "preprocessing_ms_per_sample": self.preprocessing_ms_per_sample,
            "classification_ms_per_sample": self.classification_ms_per_sample,
            "total_ms_per_sample": self.total_ms_per_sample,
            "sample_count": self.sample_count,
            "repetitions": self.repetitions,
            "clock": self.clock,
            "reference": {
                "note": "hardware-dependent published timings, display only",
                "preprocessing_ms_lcid": TABLE4_HR["preprocessing_ms"],
                "preprocessing_ms_lcid_resize": LCID_RESIZE_PREPROCESSING_MS,
                "classification_ms": TABLE4_HR["classification_ms"],
                "total_ms": TABLE4_HR["total_ms"],
            },
        }

    def render(self) -> str:
        ref = TABLE4_HR
        rows = [
            f"{'':34s}{'Preprocessing':>15s}{'Classification':>16s}{'Total':>10s}   (ms/sample)",
            f"{'measured':34s}{self.preprocessing_ms_per_sample:>15.1f}"
            f"{self.classification_ms_per_sample:>16.1f}{self.total_ms_per_sample:>10.1f}",
            f"{'published HR-CelestialNet (LCID)*':34s}{ref['preprocessing_ms']:>15.1f}"
            f"{ref['classification_ms']:>16.1f}{ref['total_ms']:>10.1f}",
            "* hardware-dependent reference values, shown for comparison only",
        ]
        return "\n".join(rows)


def bench_timing(preprocess: Callable, classify: Callable, samples: Sequence,
                 repetitions: int = 1, warmup: int = 1) -> TimingReport:
    """Average per-sample wall time of ``preprocess`` and of ``classify`` on its output."""
    if not samples:
        raise ValueError("no samples to time")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    for sample in list(samples)[:warmup]:
        classify(preprocess(sample))
    pre_total = cls_total = 0.0
    for _ in range(repetitions):
        for sample in samples:
            t0 = time.perf_counter()
            prepared = preprocess(sample)
            t1 = time.perf_counter()
            classify(prepared)
            t2 = time.perf_counter()
            pre_total += t1 - t0
            cls_total += t2 - t1
    n = len(samples) * repetitions
    return TimingReport(1000 * pre_total / n, 1000 * cls_total / n, len(samples), repetitions)
