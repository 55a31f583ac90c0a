"""End-to-end commands: synth, featurize, train, score, eval.

Each function takes paths plus a :class:`RunConfig` and writes its outputs to
disk; the CLI is a thin argument parser over these.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio, dsp, metrics
from .config import RunConfig
from .dsp import ConfigError
from .model import IDCTransAE, read_sidecar, write_sidecar
from .numgrad import Checkpoint, load_checkpoint, save_checkpoint
from .scorer import ScoreRecord, make_record, read_scores, run_clip, write_scores
from .trainer import Normalizer, TrainLog, WindowSet, fit

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.asdp"
SIDECAR_NAME = "model.json"
TRAIN_LOG_NAME = "train_log.csv"


def default_cache_dir(corpus_root: str | Path) -> Path:
    return Path(corpus_root) / ".features"


def cmd_synth(config: RunConfig, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    paths = dataio.write_synth_corpus(config.synth, out)
    (out / f"{config.synth.machine_type}.synth.txt").write_text(config.synth.dump())
    return paths


def _scan(corpus_root: str | Path, machine_type: str | None = None, split: str | None = None):
    root = Path(corpus_root)
    if not root.is_dir():
        raise ConfigError(f"corpus root {root} does not exist")
    metas = dataio.scan_corpus(root)
    if machine_type is not None:
        metas = [m for m in metas if m.machine_type.lower() == machine_type.lower()]
    if split is not None:
        metas = [m for m in metas if m.split == split]
    return metas


def cmd_featurize(
    corpus_root: str | Path, config: RunConfig, cache_dir: str | Path | None = None, machine_type: str | None = None
) -> dataio.CacheReport:
    metas = _scan(corpus_root, machine_type)
    cache = Path(cache_dir) if cache_dir else default_cache_dir(corpus_root)
    return dataio.cache_features(metas, config.dsp(), cache)


def _load_features(metas, config: RunConfig, cache_dir) -> list[dsp.FeatureClip]:
    report = dataio.cache_features(metas, config.dsp(), cache_dir)
    return [dsp.read_features(report.entries[str(m.path)]) for m in metas]


@dataclass
class TrainOutputs:
    checkpoint: Path
    sidecar: Path
    log: TrainLog
    vocab: dict[str, int]


def cmd_train(
    corpus_root: str | Path,
    machine_type: str,
    config: RunConfig,
    out_dir: str | Path,
    cache_dir: str | Path | None = None,
    callback=None,
) -> TrainOutputs:
    """Train one model covering every machine ID of ``machine_type``."""
    metas = _scan(corpus_root, machine_type, "train")
    if not metas:
        raise ConfigError(f"no training clips for machine type {machine_type!r} under {corpus_root}")
    vocab = {mid: i for i, mid in enumerate(sorted({m.machine_id for m in metas}))}
    clips = _load_features(metas, config, cache_dir or default_cache_dir(corpus_root))
    windows = WindowSet(clips, [vocab[m.machine_id] for m in metas], n=config.frames)
    model_cfg = config.model_config(max(len(vocab), 2))
    result = fit(windows, config.train_config(), model_cfg, callback=callback)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Checkpoint(
        result.model.state_dict(),
        config.to_mapping(),
        result.normalizer.mean,
        result.normalizer.std,
    )
    save_checkpoint(out / CHECKPOINT_NAME, ckpt)
    write_sidecar(out / SIDECAR_NAME, result.model.config, vocab)
    result.log.write_csv(out / TRAIN_LOG_NAME)
    config.save(out / "config.txt")
    return TrainOutputs(out / CHECKPOINT_NAME, out / SIDECAR_NAME, result.log, vocab)


def load_model(checkpoint: str | Path) -> tuple[IDCTransAE, Normalizer, dict[str, int]]:
    checkpoint = Path(checkpoint)
    model_cfg, vocab = read_sidecar(checkpoint.with_name(SIDECAR_NAME))
    ckpt = load_checkpoint(checkpoint)
    model = IDCTransAE(model_cfg)
    model.load_state_dict(ckpt.tensors)
    if ckpt.norm_mean is None:
        norm = Normalizer.identity(model_cfg.n_mels)
    else:
        norm = Normalizer(ckpt.norm_mean, ckpt.norm_std)
    return model.eval(), norm, vocab


@dataclass
class ScoreOutputs:
    path: Path
    records: list[ScoreRecord]
    normal_accuracy: float  # window-level ID accuracy on normal test clips


def cmd_score(
    checkpoint: str | Path,
    corpus_root: str | Path,
    machine_type: str,
    config: RunConfig,
    out_path: str | Path,
    cache_dir: str | Path | None = None,
) -> ScoreOutputs:
    model, norm, vocab = load_model(checkpoint)
    metas = _scan(corpus_root, machine_type, "test")
    if not metas:
        raise ConfigError(f"no test clips for machine type {machine_type!r} under {corpus_root}")
    unknown = sorted({m.machine_id for m in metas} - set(vocab))
    if unknown:
        raise ConfigError(f"test clips use machine ids missing from the training vocabulary: {unknown}")
    clips = _load_features(metas, config, cache_dir or default_cache_dir(corpus_root))
    score_cfg = config.score_config(metas[0].machine_type)

    records = []
    correct = total = 0
    for meta, clip in zip(metas, clips):
        true_id = vocab[meta.machine_id]
        out = run_clip(model, clip, norm, true_id=true_id, n=config.frames)
        records.append(make_record(out, score_cfg, str(meta.path), meta.machine_type, meta.machine_id, meta.condition))
        if meta.condition == "normal":
            correct += int((out.predicted_ids == true_id).sum())
            total += len(out.predicted_ids)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_scores(out_path, records)
    return ScoreOutputs(out_path, records, correct / total if total else float("nan"))


def _labels(records: list[ScoreRecord]) -> np.ndarray:
    return np.array([r.label == "anomaly" for r in records])


@dataclass
class EvalOutputs:
    report: Path
    rows: list[tuple[str, str, str, float]]


def cmd_eval(scores_path: str | Path, config: RunConfig, out_dir: str | Path, plots: bool = True) -> EvalOutputs:
    """Write the AUC / pAUC / mAUC report plus ROC and histogram CSVs (and plots)."""
    records = read_scores(scores_path)
    if not records:
        raise ConfigError(f"{scores_path} holds no scores")
    column = config.score_column
    if column not in ("score_mean", "score_max", "score_gwrp", "loss_c", "score_weighted"):
        raise ConfigError(f"score_column {column!r} is not a score column")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for mtype in sorted({r.machine_type for r in records}):
        recs = [r for r in records if r.machine_type == mtype]
        by_id = {}
        for mid in sorted({r.machine_id for r in recs}):
            sub = [r for r in recs if r.machine_id == mid]
            s, y = np.array([getattr(r, column) for r in sub]), _labels(sub)
            by_id[mid] = (s, y)
            rows.append((mtype, mid, "AUC", metrics.auc(s, y)))
            rows.append((mtype, mid, "pAUC", metrics.pauc(s, y, config.p)))
        s, y = np.array([getattr(r, column) for r in recs]), _labels(recs)
        rows.append((mtype, "ALL", "AUC", metrics.auc(s, y)))
        rows.append((mtype, "ALL", "pAUC", metrics.pauc(s, y, config.p)))
        rows.append((mtype, "ALL", "mAUC", metrics.mauc(by_id)))

        fpr, tpr = metrics.roc_curve(s, y)
        with open(out / f"roc_{mtype}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr"])
            w.writerows((repr(float(a)), repr(float(b))) for a, b in zip(fpr, tpr))
        metrics.export_histogram(s, y, config.hist_bins, out / f"histogram_{mtype}.csv")
        if plots:
            _plot(out, mtype, fpr, tpr, s, y, config.hist_bins)

    report = out / "report.csv"
    with open(report, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["machine_type", "machine_id", "metric", "value"])
        w.writerows((a, b, c, repr(float(v))) for a, b, c, v in rows)
    return EvalOutputs(report, rows)


def _plot(out: Path, mtype: str, fpr, tpr, scores, labels, bins: int) -> None:
    # plotting is best-effort; the CSVs above are the artefacts of record
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib unavailable; skipping plots")
        return
    meta = {"Software": None}
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(fpr, tpr, drawstyle="default")
    ax.plot([0, 1], [0, 1], "--", color="grey", lw=0.8)
    ax.set_xlabel("FPR")
    ax.set_ylabel("TPR")
    ax.set_title(f"ROC: {mtype}")
    fig.tight_layout()
    fig.savefig(out / f"roc_{mtype}.png", metadata=meta)
    plt.close(fig)

    s = np.asarray(scores, dtype=float)
    span = s.max() - s.min()
    z = (s - s.min()) / span if span > 0 else np.zeros_like(s)
    fig, ax = plt.subplots(figsize=(5, 3))
    edges = np.linspace(0, 1, bins + 1)
    ax.hist(z[~labels], edges, alpha=0.6, label="normal")
    ax.hist(z[labels], edges, alpha=0.6, label="anomaly")
    ax.set_xlabel("normalised anomaly score")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / f"histogram_{mtype}.png", metadata=meta)
    plt.close(fig)
