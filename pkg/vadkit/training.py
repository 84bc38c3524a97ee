"""
VadKit Training

Image-level targets from 10 ms frame labels, the seeded Adam training loop
and accuracy/posterior helpers.
"""

import csv
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from vadkit.exceptions import AlignmentError, ArgumentError, ConfigError, DivergedTrainingError, ShapeError
from vadkit.features import IMAGE_FRAMES, ImageSequence, NormStats, compute_norm_stats
from vadkit.logger import setup_logger
from vadkit.model import SPEECH_CLASS, build_model, loss_and_grads, predict_proba
from vadkit.nn_core import AdamState, adam_step

logger = setup_logger(__name__)

PREDICT_BATCH = 64


@dataclass
class TrainingExample:
    images: ImageSequence
    targets: np.ndarray

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.int64).reshape(-1)
        if len(self.targets) != len(self.images):
            raise ShapeError(
                f"{len(self.targets)} targets for {len(self.images)} images")

    def __len__(self):
        return len(self.targets)


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; seed must be a non-negative integer (it seeds NumPy SeedSequence)"""
    batch_size: int = 16
    seq_len: int = 8
    epochs: int = 30
    learning_rate: float = 1e-3
    seed: int = 0
    dropout_rate: float = 0.1

    def __post_init__(self):
        for name in ('batch_size', 'seq_len', 'epochs'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ConfigError(f"learning_rate must be finite and non-negative, got {self.learning_rate}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if int(self.seed) < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    train_acc: List[float] = field(default_factory=list)
    val_acc: List[float] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.train_loss)


def image_targets(seq, frames):
    """Majority speech vote over each image's underlying frames; ties count as speech"""
    stride = IMAGE_FRAMES * seq.hop_images
    n_images = len(seq)
    covered = (n_images - 1) * stride + IMAGE_FRAMES if n_images else 0
    n_frames = len(frames)
    if abs(n_frames - covered) > IMAGE_FRAMES:
        raise AlignmentError(
            f"{n_frames} label frames do not match {n_images} images covering {covered} frames")

    speech = np.concatenate([[0], np.cumsum(frames.speech_mask, dtype=np.int64)])
    starts = np.arange(n_images) * stride
    stops = np.minimum(starts + IMAGE_FRAMES, n_frames)
    starts = np.minimum(starts, n_frames)
    available = stops - starts
    votes = speech[stops] - speech[starts]
    return ((available > 0) & (2 * votes >= available)).astype(np.int64)


def make_examples(seq, frames, seq_len) -> List[TrainingExample]:
    """Non-overlapping runs of seq_len images with their targets; the trailing partial run is dropped"""
    if seq_len < 1:
        raise ArgumentError(f"seq_len must be positive, got {seq_len}")
    targets = image_targets(seq, frames)
    examples = []
    for k in range(len(seq) // seq_len):
        lo, hi = k * seq_len, (k + 1) * seq_len
        examples.append(TrainingExample(seq.slice(lo, hi), targets[lo:hi]))
    return examples


def _stack(examples):
    images = np.stack([np.asarray(ex.images.pixels) for ex in examples])
    targets = np.stack([ex.targets for ex in examples])
    return images, targets


def _chunks(examples, size):
    """Consecutive runs of at most size examples with equal length"""
    chunk = []
    for ex in examples:
        if chunk and (len(chunk) == size or len(ex) != len(chunk[0])):
            yield chunk
            chunk = []
        chunk.append(ex)
    if chunk:
        yield chunk


def predict_posteriors(params, examples):
    """Inference p_speech per image, one array per example"""
    out = []
    for chunk in _chunks(examples, PREDICT_BATCH):
        images, _ = _stack(chunk)
        probs = predict_proba(params, images)[..., SPEECH_CLASS]
        out.extend(np.asarray(p, dtype=np.float64) for p in probs)
    return out


def accuracy(params, examples):
    """Fraction of images whose thresholded posterior (p > 0.5) matches the target"""
    if not examples:
        raise ArgumentError("Cannot compute accuracy over no examples")
    correct = total = 0
    for ex, p in zip(examples, predict_posteriors(params, examples)):
        correct += int(np.count_nonzero((p > 0.5).astype(np.int64) == ex.targets))
        total += len(ex)
    return correct / total


def _training_norm(examples):
    stats = compute_norm_stats([ex.images for ex in examples])
    std = np.where(stats.std > 0, stats.std, 1.0)
    return NormStats(mean=stats.mean.astype(np.float32), std=std.astype(np.float32))


def train(examples, model_config, tc, val_examples=None, dtype=np.float32):
    """Seeded Adam training -> (params of the best validation epoch, history)"""
    if not examples:
        raise ArgumentError("Training needs at least one example")
    lengths = {len(ex) for ex in examples}
    if len(lengths) != 1:
        raise ShapeError(f"Training examples have mixed lengths {sorted(lengths)}")

    config = replace(model_config, dropout_rate=tc.dropout_rate)
    params = build_model(config, tc.seed, dtype=dtype)
    params.norm = _training_norm(examples)
    images, targets = _stack(examples)
    images = images.astype(dtype, copy=False)

    rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 1]))
    adam = AdamState(lr=tc.learning_rate)
    history = TrainHistory()
    best, best_val = params, -math.inf
    n = len(examples)

    logger.info(f"Training on {n} sequences of {lengths.pop()} images for {tc.epochs} epochs")
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for batch, start in enumerate(range(0, n, tc.batch_size)):
            idx = order[start:start + tc.batch_size]
            loss, grads, _ = loss_and_grads(params, images[idx], targets[idx], rng, training=True)
            if not math.isfinite(loss):
                raise DivergedTrainingError(epoch, batch, loss)
            tensors, adam = adam_step(params.tensors, grads, adam)
            params = params.with_tensors(tensors)
            loss_sum += loss * len(idx)

        history.train_loss.append(loss_sum / n)
        history.train_acc.append(accuracy(params, examples))
        val = accuracy(params, val_examples) if val_examples else math.nan
        history.val_acc.append(val)
        logger.info(f"Epoch {epoch + 1}/{tc.epochs}: loss={history.train_loss[-1]:.4f} "
                    f"train_acc={history.train_acc[-1]:.4f} val_acc={val:.4f}")

        if not val_examples:
            best, history.best_epoch = params, epoch
        elif val > best_val:
            best, best_val, history.best_epoch = params, val, epoch

    return best, history


def save_history(history, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['epoch', 'train_loss', 'train_acc', 'val_acc'])
        for epoch, row in enumerate(zip(history.train_loss, history.train_acc, history.val_acc)):
            writer.writerow([epoch, *(repr(float(v)) for v in row)])
