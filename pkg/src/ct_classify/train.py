"""Training loop, Adam/SGD updates, checkpoint container, and evaluation.

The loop is plain mini-batch gradient descent on categorical cross-entropy:
images are rescaled by 1/255, shuffled each epoch by a seeded generator, and
per-epoch train loss/accuracy are accumulated on the fly from the same
forward passes that drive the updates (no second pass over the train split),
while validation metrics come from a full pass after each epoch.

Checkpoints are a self-describing container: magic string, format version,
a JSON layer-spec table, then raw little-endian float32 parameter blobs in
layer order. Loading rebuilds the architecture from the table alone, so a
checkpoint is readable without knowing the model configuration.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest
from .imaging import load_grayscale, resize_bilinear
from .metrics import ConfusionMatrix, MetricsReport, aggregate, confusion_matrix
from .nn import INPUT_SHAPE, Model, model_from_specs

PROB_FLOOR = 1e-12

CHECKPOINT_MAGIC = b"CTCKPT\x00"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Raised when checkpoint bytes do not match the container format."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    seed: int = 0
    rescale: float = 1.0 / 255.0
    strict: bool = True  # abort on unreadable images instead of skip+warn
    class_weighting: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # 0 is allowed so a no-op run can verify parameters stay untouched
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1/beta2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class TrainHistory:
    """Per-epoch curves; index i describes epoch i+1."""

    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("epoch", "train_loss", "train_acc", "val_loss", "val_acc"))
        for i in range(len(self)):
            writer.writerow((i + 1, f"{self.train_loss[i]:.6f}",
                             f"{self.train_acc[i]:.6f}", f"{self.val_loss[i]:.6f}",
                             f"{self.val_acc[i]:.6f}"))
        return buf.getvalue()


def cross_entropy(probs: np.ndarray, targets, weights: np.ndarray | None = None) -> float:
    """Mean negative log-likelihood with a 1e-12 probability floor.

    Accepts one probability row with an integer target, or a (N, K) batch
    with an (N,) target vector. Optional per-sample weights scale each term.
    """
    probs = np.asarray(probs)
    if probs.ndim == 1:
        probs = probs[None, :]
        targets = np.asarray([targets])
    else:
        targets = np.asarray(targets)
    n, k = probs.shape
    if targets.shape != (n,) or ((targets < 0) | (targets >= k)).any():
        raise ValueError(f"targets must be {n} class indices in [0, {k})")
    picked = np.maximum(probs[np.arange(n), targets], PROB_FLOOR)
    losses = -np.log(picked)
    if weights is not None:
        losses = losses * weights
    return float(losses.mean())


def softmax_cross_entropy_grad(probs: np.ndarray, targets: np.ndarray,
                               weights: np.ndarray | None = None) -> np.ndarray:
    """Gradient of mean cross-entropy w.r.t. the logits under a softmax head."""
    n, k = probs.shape
    grad = probs.copy()
    grad[np.arange(n), targets] -= 1.0
    if weights is not None:
        grad *= weights[:, None]
    return grad / n


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optimizer(model: Model, config: TrainConfig) -> AdamState:
    state = AdamState()
    if config.optimizer == "adam":
        for name, p in model.parameters():
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
    return state


def optimizer_step(model: Model, state: AdamState, config: TrainConfig) -> None:
    """Apply one update in place; rejects non-finite gradients by layer name."""
    params = model.parameters()
    grads = dict(model.gradients())
    for name, _ in params:
        if not np.isfinite(grads[name]).all():
            raise FloatingPointError(f"non-finite gradient in {name}")
    lr = config.learning_rate
    if config.optimizer == "sgd":
        for name, p in params:
            p -= (lr * grads[name]).astype(p.dtype, copy=False)
        return
    state.t += 1
    bc1 = 1.0 - config.beta1 ** state.t
    bc2 = 1.0 - config.beta2 ** state.t
    for name, p in params:
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - config.beta1) * (g - m)
        v += (1.0 - config.beta2) * (g * g - v)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)
        p -= update.astype(p.dtype, copy=False)


def load_split_arrays(manifest: DatasetManifest, root,
                      size: tuple[int, int] = INPUT_SHAPE[:2],
                      strict: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Load a manifest's images as a uint8 stack plus integer labels.

    Images that are not already ``size`` are bilinearly resized. Unreadable
    files abort when strict, otherwise they are skipped with a warning.
    """
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    root = Path(root)
    images, labels = [], []
    for record in manifest.records:
        try:
            img = load_grayscale(root / record.path)
        except (OSError, ValueError) as exc:
            if strict:
                raise
            warnings.warn(f"skipping unreadable image {record.path}: {exc}")
            continue
        if (img.height, img.width) != size:
            img = resize_bilinear(img, size[0], size[1])
        images.append(img.pixels)
        labels.append(manifest.label_index(record.label))
    if not images:
        raise ValueError("no readable images in manifest")
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def _as_input(images_u8: np.ndarray, rescale: float) -> np.ndarray:
    return (images_u8.astype(np.float32) * np.float32(rescale))[..., None]


def predict_proba(model: Model, images_u8: np.ndarray, rescale: float = 1.0 / 255.0,
                  batch_size: int = 32) -> np.ndarray:
    """Forward a uint8 image stack in batches; returns (N, K) probabilities."""
    chunks = []
    for start in range(0, len(images_u8), batch_size):
        x = _as_input(images_u8[start:start + batch_size], rescale)
        chunks.append(model.forward(x))
    return np.concatenate(chunks, axis=0)


def evaluate_arrays(model: Model, images_u8: np.ndarray, labels: np.ndarray,
                    class_names: tuple[str, ...], rescale: float = 1.0 / 255.0,
                    batch_size: int = 32) -> tuple[ConfusionMatrix, MetricsReport, float]:
    probs = predict_proba(model, images_u8, rescale, batch_size)
    loss = cross_entropy(probs, labels)
    cm = confusion_matrix(labels, probs.argmax(axis=1), class_names)
    return cm, aggregate(cm), loss


def evaluate(model: Model, manifest: DatasetManifest, root,
             rescale: float = 1.0 / 255.0, batch_size: int = 32,
             strict: bool = True) -> tuple[ConfusionMatrix, MetricsReport, float]:
    """Argmax-evaluate every manifest record in order."""
    images, labels = load_split_arrays(manifest, root, strict=strict)
    return evaluate_arrays(model, images, labels, manifest.class_names,
                           rescale, batch_size)


def _class_weights(labels: np.ndarray, num_classes: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    weights = np.where(counts > 0, labels.size / (num_classes * np.maximum(counts, 1)), 0.0)
    return weights


def train(model: Model, train_manifest: DatasetManifest, val_manifest: DatasetManifest,
          config: TrainConfig, root, curves_path=None,
          checkpoint_path=None) -> tuple[Model, TrainHistory]:
    """Fit the model in place and return it with its per-epoch history.

    Train loss/accuracy are accumulated from the training batches themselves
    (pre-update forward passes); validation is a separate full pass per epoch.
    Optionally writes the curves CSV and a final checkpoint.
    """
    train_images, train_labels = load_split_arrays(train_manifest, root,
                                                   strict=config.strict)
    val_images, val_labels = load_split_arrays(val_manifest, root,
                                               strict=config.strict)
    n = len(train_images)
    num_classes = len(train_manifest.class_names)
    per_class = (_class_weights(train_labels, num_classes)
                 if config.class_weighting else None)

    state = init_optimizer(model, config)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()

    for _ in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = _as_input(train_images[idx], config.rescale)
            y = train_labels[idx]
            probs = model.forward(x)
            w = per_class[y] if per_class is not None else None
            loss_sum += cross_entropy(probs, y, w) * len(idx)
            correct += int((probs.argmax(axis=1) == y).sum())
            model.backward(softmax_cross_entropy_grad(probs, y, w).astype(x.dtype),
                           from_logits=True)
            optimizer_step(model, state, config)
        val_probs = predict_proba(model, val_images, config.rescale, config.batch_size)
        history.train_loss.append(loss_sum / n)
        history.train_acc.append(correct / n)
        history.val_loss.append(cross_entropy(val_probs, val_labels))
        history.val_acc.append(float((val_probs.argmax(axis=1) == val_labels).mean()))

    if curves_path is not None:
        Path(curves_path).write_text(history.to_csv(), encoding="utf-8")
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return model, history


def save_checkpoint(model: Model, path) -> None:
    """Write magic, version, the JSON layer table, then float32 LE blobs."""
    table = json.dumps(model.spec_table(), sort_keys=True,
                       separators=(",", ":")).encode("utf-8")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(table))
    blob += table
    for _, p in model.parameters():
        blob += np.ascontiguousarray(p, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path, dtype=np.float32) -> Model:
    """Rebuild a model from checkpoint bytes; any malformed layout raises."""
    data = Path(path).read_bytes()
    offset = len(CHECKPOINT_MAGIC)
    if len(data) < offset + 8:
        raise CheckpointFormatError("checkpoint truncated before header end")
    if data[:offset] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic: not a checkpoint file")
    (version,) = struct.unpack_from("<I", data, offset)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (table_len,) = struct.unpack_from("<I", data, offset + 4)
    offset += 8
    if len(data) < offset + table_len:
        raise CheckpointFormatError("checkpoint truncated inside layer table")
    try:
        specs = json.loads(data[offset:offset + table_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable layer table: {exc}") from exc
    offset += table_len
    model = model_from_specs(specs, dtype=dtype)
    for name, p in model.parameters():
        nbytes = p.size * 4
        if len(data) < offset + nbytes:
            raise CheckpointFormatError(f"checkpoint truncated inside {name}")
        flat = np.frombuffer(data, dtype="<f4", count=p.size, offset=offset)
        p[...] = flat.reshape(p.shape).astype(dtype)
        offset += nbytes
    if offset != len(data):
        raise CheckpointFormatError("trailing bytes after final parameter blob")
    return model
