"""Joint reconstruction / ID-classification training."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numgrad as ng
from .dsp import ClipTooShortError, FeatureClip
from .model import (
    IDCTransAE,
    ModelConfig,
    ModelConfigError,
    loss_classification,
    loss_reconstruction,
    loss_total,
    one_hot,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-4
    alpha: float = 0.3
    classifier_period: int = 10
    seed: int = 0
    standardize: bool = True
    # windows drawn per epoch from the shuffled pool; 0 uses every window
    samples_per_epoch: int = 3072

    def __post_init__(self):
        if self.classifier_period < 1:
            raise ValueError(f"classifier_period must be >= 1, got {self.classifier_period}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


def is_joint_epoch(epoch: int, period: int) -> bool:
    """Epochs are 1-based; every ``period``-th one trains the classifier too."""
    return epoch % period == 0


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, frames: np.ndarray) -> "Normalizer":
        frames = np.asarray(frames, dtype=np.float64)
        std = frames.std(axis=0)
        return cls(frames.mean(axis=0), np.where(std > 1e-8, std, 1.0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


class WindowSet:
    """All centre-frame windows of a list of clips, gathered lazily.

    Frames of every clip are stacked once; a window is addressed by the
    global row of its first frame, so batches are built by fancy indexing
    instead of materialising every window up front.
    """

    def __init__(self, clips: Sequence[FeatureClip], labels: Sequence[int], n: int = 5, stride: int = 1):
        if not clips:
            raise ValueError("empty training set")
        if len(labels) != len(clips):
            raise ValueError(f"{len(clips)} clips but {len(labels)} labels")
        self.n = n
        self.keep = np.array([k for k in range(n) if k != n // 2])
        starts, owners, offset = [], [], 0
        for i, clip in enumerate(clips):
            if clip.frames < n:
                raise ClipTooShortError(f"clip {i}: {clip.frames} frames < window of {n}")
            local = np.arange(0, clip.frames - n + 1, stride)
            starts.append(offset + local)
            owners.append(np.full(len(local), i))
            offset += clip.frames
        # float32 storage; batches are promoted to float64 on gather
        self.logmel = np.concatenate([c.logmel for c in clips]).astype(np.float32)
        self.phase = np.concatenate([c.phase for c in clips]).astype(np.float32)
        self.starts = np.concatenate(starts)
        self.owner = np.concatenate(owners)
        self.clip_labels = np.asarray(labels, dtype=np.int64)
        self.labels = self.clip_labels[self.owner]

    def __len__(self) -> int:
        return len(self.starts)

    def batch(self, rows: np.ndarray, norm: Normalizer):
        s = self.starts[rows]
        ctx = s[:, None] + self.keep[None, :]
        return (
            norm(self.logmel[ctx]),
            self.phase[ctx].astype(np.float64),
            norm(self.logmel[s + self.n // 2]),
            self.labels[rows],
        )


@dataclass
class EpochRecord:
    epoch: int
    mode: str
    loss_r: float
    loss_c: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mode", "loss_r", "loss_c", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, r.mode, repr(r.loss_r), repr(r.loss_c), f"{r.seconds:.3f}"])


@dataclass
class TrainResult:
    model: IDCTransAE
    log: TrainLog
    normalizer: Normalizer


def _step(model, params, state, x, phase, target, onehot, alpha, joint) -> tuple[float, float]:
    model.zero_grad()
    with ng.Tape() as tape:
        pred, probs = model.forward(x, phase, with_classifier=joint)
        loss_r = loss_reconstruction(pred, target)
        if joint:
            loss_c = loss_classification(onehot, probs)
            loss = loss_total(loss_r, loss_c, alpha)
        else:
            loss_c, loss = None, loss_r
    tape.backward(loss)
    for group, st in zip(params, state):
        ng.adam_step(group, {k: p.grad for k, p in group.items()}, st)
    return loss_r.item(), (loss_c.item() if loss_c is not None else float("nan"))


def fit(
    windows: WindowSet,
    config: TrainConfig,
    model_config: ModelConfig,
    callback=None,
) -> TrainResult:
    """Train a fresh model on normal-only windows.

    Epoch ``e`` (1-based) minimises the joint loss when
    ``e % classifier_period == 0`` and the reconstruction loss alone
    otherwise. On reconstruction-only epochs the classifier is not run and
    its parameters and optimiser moments are untouched. With ``alpha == 0``
    the classifier is never trained.
    """
    if len(windows) == 0:
        raise ValueError("empty training set")
    k = model_config.num_ids
    if config.alpha > 0 and k < 2:
        raise ModelConfigError("the ID classifier needs at least 2 ids when alpha > 0")
    if windows.labels.max() >= k or windows.labels.min() < 0:
        raise ValueError(f"window labels outside vocabulary of {k} ids")
    if model_config.alpha != config.alpha:
        model_config = ModelConfig(**{**model_config.__dict__, "alpha": config.alpha})

    rng = np.random.default_rng(config.seed)
    model = IDCTransAE(model_config, seed=config.seed).train()
    norm = (
        Normalizer.fit(windows.logmel)
        if config.standardize
        else Normalizer.identity(model_config.n_mels)
    )
    ae_params, clf_params = model.autoencoder_params(), model.classifier_params()
    ae_state = ng.AdamState(lr=config.lr)
    clf_state = ng.AdamState(lr=config.lr)

    train_log = TrainLog()
    per_epoch = len(windows) if config.samples_per_epoch <= 0 else min(config.samples_per_epoch, len(windows))
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        joint = config.alpha > 0 and is_joint_epoch(epoch, config.classifier_period)
        if joint:
            params, states = (ae_params, clf_params), (ae_state, clf_state)
        else:
            params, states = (ae_params,), (ae_state,)
        order = rng.permutation(len(windows))[:per_epoch]
        sum_r = sum_c = 0.0
        for lo in range(0, per_epoch, config.batch_size):
            rows = order[lo : lo + config.batch_size]
            x, phase, target, labels = windows.batch(rows, norm)
            lr_, lc_ = _step(
                model, params, states, x, phase, target, one_hot(labels, k), config.alpha, joint
            )
            sum_r += lr_ * len(rows)
            sum_c += lc_ * len(rows)
        rec = EpochRecord(
            epoch,
            "joint" if joint else "recon-only",
            sum_r / per_epoch,
            sum_c / per_epoch,
            time.perf_counter() - t0,
        )
        train_log.records.append(rec)
        log.info("epoch %d %s loss_r=%.4f loss_c=%.4f", epoch, rec.mode, rec.loss_r, rec.loss_c)
        if callback is not None:
            callback(model, rec)
    return TrainResult(model.eval(), train_log, norm)


@dataclass
class EpochMetrics:
    loss_r: float
    loss_c: float
    accuracy: float


def evaluate_epoch(
    model: IDCTransAE, windows: WindowSet, norm: Normalizer, batch_size: int = 1024
) -> EpochMetrics:
    """Mean losses and window-level ID accuracy in eval mode; no parameter changes."""
    was_training = model.training
    model.eval()
    k = model.config.num_ids
    sum_r = sum_c = 0.0
    correct = 0
    try:
        for lo in range(0, len(windows), batch_size):
            rows = np.arange(lo, min(lo + batch_size, len(windows)))
            x, phase, target, labels = windows.batch(rows, norm)
            pred, probs = model.forward(x, phase)
            sum_r += loss_reconstruction(pred, target).item() * len(rows)
            sum_c += loss_classification(one_hot(labels, k), probs).item() * len(rows)
            correct += int((probs.values.argmax(axis=-1) == labels).sum())
    finally:
        model.training = was_training
    n = len(windows)
    return EpochMetrics(sum_r / n, sum_c / n, correct / n)
