"""Clip-level anomaly scores from per-window centre-frame errors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .dsp import FeatureClip, window_frames
from .model import IDCTransAE, loss_classification, one_hot
from .trainer import Normalizer

# Per-machine (r, beta) used when the run config does not override them.
TABLE1_R_BETA = {
    "Fan": (1.00, 0.84),
    "Pump": (1.00, 0.82),
    "Slider": (0.96, 0.80),
    "Valve": (0.92, 0.72),
    "ToyCar": (1.00, 0.62),
    "ToyConveyor": (1.00, 0.98),
}
SYNTH_R_BETA = (0.9, 0.0)


def default_r_beta(machine_type: str) -> tuple[float, float]:
    return TABLE1_R_BETA.get(machine_type, SYNTH_R_BETA)


@dataclass
class ErrorSequence:
    e: np.ndarray
    clip_id: str = ""
    machine_id: str = ""

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=np.float64)
        if self.e.ndim != 1 or self.e.size == 0:
            raise ValueError("error sequence must be a non-empty 1-D array")


@dataclass(frozen=True)
class ScoreConfig:
    r: float = 1.0
    beta: float = 0.0
    theta: float = math.inf

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"r must lie in [0, 1], got {self.r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


def _as_errors(e) -> np.ndarray:
    arr = e.e if isinstance(e, ErrorSequence) else np.asarray(e, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty error sequence")
    return arr


def score_mean(e) -> float:
    return float(np.mean(_as_errors(e)))


def score_max(e) -> float:
    return float(np.max(_as_errors(e)))


def score_gwrp(e, r: float) -> float:
    """Global weighted rank pooling.

    Errors are sorted in descending order and averaged with weights
    ``r**(i-1)``; ``r = 0`` reduces to the maximum (``0**0 == 1``) and
    ``r = 1`` to the mean.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"r must lie in [0, 1], got {r}")
    desc = np.sort(_as_errors(e))[::-1]
    # numpy evaluates 0.0**0 as 1, so r = 0 needs no special case
    w = np.float64(r) ** np.arange(desc.size, dtype=np.float64)
    return float(np.dot(w, desc) / w.sum())


def score_weighted(gwrp: float, loss_c: float, beta: float) -> float:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return (1.0 - beta) * gwrp + beta * loss_c


def decide(score: float, theta: float) -> int:
    """1 (anomaly) iff ``score > theta``; ties count as normal."""
    return int(score > theta)


@dataclass
class ClipOutputs:
    errors: ErrorSequence
    loss_c: float
    predicted_ids: np.ndarray


def _clip_windows(model: IDCTransAE, clip: FeatureClip, norm: Normalizer, n: int):
    w = window_frames(clip.logmel, clip.phase, n=n, stride=1)
    return norm(w.context), np.asarray(w.phase_context, dtype=np.float64), norm(w.center_target)


def run_clip(
    model: IDCTransAE,
    clip: FeatureClip,
    norm: Normalizer,
    true_id: int | None = None,
    n: int = 5,
    clip_id: str = "",
    machine_id: str = "",
) -> ClipOutputs:
    """One eval-mode forward pass over every stride-1 window of a clip.

    The per-window error is the mean squared difference over mel bins
    between the standardised true and predicted centre frames. The clip's
    classification loss is the mean cross-entropy over windows against
    ``true_id``.
    """
    if model.training:
        raise RuntimeError("score with a model in eval mode")
    x, phase, target = _clip_windows(model, clip, norm, n)
    pred, probs = model.forward(x, phase)
    e = ((target - pred.values) ** 2).mean(axis=-1)
    loss_c = float("nan")
    if true_id is not None:
        k = model.config.num_ids
        if not 0 <= true_id < k:
            raise KeyError(f"machine id index {true_id} outside vocabulary of {k}")
        loss_c = loss_classification(one_hot(np.full(len(e), true_id), k), probs).item()
    return ClipOutputs(ErrorSequence(e, clip_id, machine_id), loss_c, probs.values.argmax(axis=-1))


def segment_errors(model: IDCTransAE, clip: FeatureClip, norm: Normalizer, n: int = 5) -> ErrorSequence:
    return run_clip(model, clip, norm, n=n).errors


def clip_classification_loss(
    model: IDCTransAE, clip: FeatureClip, norm: Normalizer, true_id: int, n: int = 5
) -> float:
    return run_clip(model, clip, norm, true_id=true_id, n=n).loss_c


@dataclass
class ScoreRecord:
    clip_path: str
    machine_type: str
    machine_id: str
    label: str
    I: int
    score_mean: float
    score_max: float
    score_gwrp: float
    loss_c: float
    score_weighted: float


def make_record(
    out: ClipOutputs, cfg: ScoreConfig, clip_path: str, machine_type: str, machine_id: str, label: str
) -> ScoreRecord:
    g = score_gwrp(out.errors, cfg.r)
    return ScoreRecord(
        clip_path,
        machine_type,
        machine_id,
        label,
        len(out.errors.e),
        score_mean(out.errors),
        score_max(out.errors),
        g,
        out.loss_c,
        score_weighted(g, out.loss_c, cfg.beta),
    )


SCORE_COLUMNS = [f.name for f in fields(ScoreRecord)]


def write_scores(path: str | Path, records: list[ScoreRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, c) for c in SCORE_COLUMNS)])


def read_scores(path: str | Path) -> list[ScoreRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                ScoreRecord(
                    row["clip_path"],
                    row["machine_type"],
                    row["machine_id"],
                    row["label"],
                    int(row["I"]),
                    *(float(row[c]) for c in SCORE_COLUMNS[5:]),
                )
            )
    return out
