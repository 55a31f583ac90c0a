"""Corpus ingestion: WAV I/O, DCASE-layout scanning, synthetic machines, feature cache."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import re
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import dsp

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000

MACHINE_TYPES = {
    "fan": "Fan",
    "pump": "Pump",
    "slider": "Slider",
    "valve": "Valve",
    "toycar": "ToyCar",
    "toyconveyor": "ToyConveyor",
}

_NAME_RE = re.compile(r"^(normal|anomaly)_(id_\d+)_(\d+)\.wav$")


class AudioFormatError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    machine_type: str = ""
    machine_id: str = ""
    condition: str = "unknown"


@dataclass(frozen=True)
class ClipMeta:
    path: Path
    machine_type: str
    machine_id: str
    condition: str
    split: str


def read_wav(path: str | Path) -> AudioClip:
    """Read a 16-bit PCM mono 16 kHz WAV file, scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
            if wf.getcomptype() != "NONE":
                raise AudioFormatError(f"{path}: compressed WAV ({wf.getcomptype()}) not supported")
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from exc
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono audio, found {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, found {8 * width}-bit samples")
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, found {rate} Hz (no resampling is done)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def parse_clip_name(name: str) -> tuple[str, str] | None:
    """``normal_id_02_00000042.wav`` -> ``("normal", "id_02")``; None if unparseable."""
    m = _NAME_RE.match(name)
    return (m.group(1), m.group(2)) if m else None


def scan_corpus(root: str | Path, skipped: list[str] | None = None) -> list[ClipMeta]:
    """Walk ``<root>/<machine_type>/{train,test}/*.wav``.

    Unparseable names, and anomalous clips under ``train/``, are left out
    and reported through ``skipped`` (and the log). Results are ordered by
    (machine directory, split, filename).
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus root {root} does not exist")
    out = []
    for type_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        machine_type = MACHINE_TYPES.get(type_dir.name.lower(), type_dir.name)
        for split in ("test", "train"):
            split_dir = type_dir / split
            if not split_dir.is_dir():
                continue
            for wav in sorted(split_dir.glob("*.wav")):
                parsed = parse_clip_name(wav.name)
                reason = None
                if parsed is None:
                    reason = "unparseable filename"
                elif split == "train" and parsed[0] != "normal":
                    reason = "anomalous clip in training split"
                if reason:
                    log.warning("skipping %s: %s", wav, reason)
                    if skipped is not None:
                        skipped.append(f"{wav}: {reason}")
                    continue
                out.append(ClipMeta(wav, machine_type, parsed[1], parsed[0], split))
    return out


# -- synthetic machines -----------------------------------------------------


@dataclass
class SynthSpec:
    machine_type: str = "synth"
    num_ids: int = 4
    clips_per_id: int = 60
    test_normal_per_id: int = 20
    test_anomaly_per_id: int = 20
    duration_s: float = 6.0
    base_f0: float = 110.0
    f0_step: float = 70.0
    harmonics: int = 6
    noise_floor: float = 0.005
    f0_jitter: float = 0.005
    anomaly_kind: str = "transient_burst"
    anomaly_duration_s: float = 0.5
    # burst RMS; low enough that detection does not saturate at AUC 1
    anomaly_gain: float = 0.0025
    seed: int = 0

    def __post_init__(self):
        min_dur = 1024 * (5 + 2) / SAMPLE_RATE
        if self.duration_s < min_dur:
            raise ValueError(f"duration_s must be >= {min_dur:.3f} s, got {self.duration_s}")
        if not 0 < self.anomaly_duration_s <= self.duration_s:
            raise ValueError("anomaly_duration_s must lie in (0, duration_s]")
        if self.anomaly_kind not in ("transient_burst", "detune"):
            raise ValueError(f"unknown anomaly_kind {self.anomaly_kind!r}")
        if self.num_ids < 1:
            raise ValueError("num_ids must be >= 1")

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "SynthSpec":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise KeyError(f"unknown synth key {key!r}")
            kwargs[key] = type(getattr(cls(), key))(raw)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "SynthSpec":
        values = {}
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                key, _, val = line.partition("=")
                values[key.strip()] = val.strip()
        return cls.from_mapping(values)

    def dump(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))


@dataclass
class IdProfile:
    f0: float
    amplitudes: np.ndarray = field(repr=False)
    noise_floor: float


def id_profiles(spec: SynthSpec) -> list[IdProfile]:
    """Per-machine tone recipes: distinct fundamentals and spectral tilts."""
    out = []
    h = np.arange(1, spec.harmonics + 1)
    for k in range(spec.num_ids):
        tilt = 0.6 + 0.25 * k
        out.append(IdProfile(spec.base_f0 + spec.f0_step * k, 0.1 * h ** (-tilt), spec.noise_floor))
    return out


_CONDITION_CODE = {"normal": 0, "anomaly": 1}


def _bandpass_noise(rng: np.random.Generator, n: int, lo: float, hi: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / (np.sqrt(np.mean(x**2)) + 1e-12)


def synth_clip(spec: SynthSpec, id_index: int, condition: str, seed: int) -> AudioClip:
    """Generate one clip of machine ``id_index``; bitwise deterministic in its arguments.

    Normal clips are a harmonic tone (random harmonic phases, small random
    detuning of the fundamental) plus Gaussian noise. ``transient_burst``
    anomalies add a band-limited noise burst of ``anomaly_duration_s`` at a
    uniformly random onset; ``detune`` raises the fundamental by 7 % from
    mid-clip on.
    """
    if not 0 <= id_index < spec.num_ids:
        raise ValueError(f"id_index {id_index} outside [0, {spec.num_ids})")
    if condition not in _CONDITION_CODE:
        raise ValueError(f"condition must be 'normal' or 'anomaly', got {condition!r}")
    rng = np.random.default_rng([spec.seed, id_index, _CONDITION_CODE[condition], seed])
    prof = id_profiles(spec)[id_index]
    n = int(round(spec.duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    f0 = prof.f0 * (1.0 + spec.f0_jitter * rng.uniform(-1.0, 1.0))
    phases = rng.uniform(0.0, 2 * np.pi, size=len(prof.amplitudes))

    f_inst = np.full(n, f0)
    if condition == "anomaly" and spec.anomaly_kind == "detune":
        f_inst[n // 2 :] *= 1.07
    base_phase = 2 * np.pi * np.cumsum(f_inst) / SAMPLE_RATE
    x = sum(a * np.sin(h * base_phase + p) for h, (a, p) in enumerate(zip(prof.amplitudes, phases), 1))
    x = x + prof.noise_floor * rng.standard_normal(n)

    if condition == "anomaly" and spec.anomaly_kind == "transient_burst":
        m = int(round(spec.anomaly_duration_s * SAMPLE_RATE))
        onset = int(rng.integers(0, n - m + 1))
        centre = rng.uniform(1500.0, 5000.0)
        burst = _bandpass_noise(rng, m, centre - 500.0, centre + 500.0)
        ramp = min(160, m // 2)
        env = np.ones(m)
        env[:ramp] = np.linspace(0.0, 1.0, ramp)
        env[m - ramp :] = np.linspace(1.0, 0.0, ramp)
        x[onset : onset + m] += spec.anomaly_gain * env * burst

    return AudioClip(x, SAMPLE_RATE, spec.machine_type, f"id_{id_index:02d}", condition)


def synth_corpus_plan(spec: SynthSpec) -> Iterable[tuple[str, int, str, int]]:
    """Yield ``(split, id_index, condition, clip_number)`` for the full corpus."""
    for k in range(spec.num_ids):
        for i in range(spec.clips_per_id):
            yield "train", k, "normal", i
        for i in range(spec.test_normal_per_id):
            yield "test", k, "normal", spec.clips_per_id + i
        for i in range(spec.test_anomaly_per_id):
            yield "test", k, "anomaly", i


def write_synth_corpus(spec: SynthSpec, out_dir: str | Path) -> list[Path]:
    root = Path(out_dir) / spec.machine_type
    written = []
    for split, k, condition, i in synth_corpus_plan(spec):
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        clip = synth_clip(spec, k, condition, i)
        path = d / f"{condition}_id_{k:02d}_{i:08d}.wav"
        write_wav(path, clip.samples)
        written.append(path)
    return written


# -- feature cache ----------------------------------------------------------


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = SAMPLE_RATE
    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 128
    f_min: float = 0.0
    f_max: float = 8000.0

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def filterbank(self) -> np.ndarray:
        return dsp.mel_filterbank(self.n_fft, self.n_mels, self.sample_rate, self.f_min, self.f_max)


MANIFEST_NAME = "manifest.csv"


@dataclass
class CacheReport:
    manifest: Path
    computed: int
    reused: int
    entries: dict[str, Path]


def _cache_name(meta: ClipMeta) -> str:
    return f"{meta.machine_type}/{meta.split}/{meta.path.stem}.asdf"


def read_manifest(cache_dir: str | Path) -> dict[str, tuple[Path, str]]:
    path = Path(cache_dir) / MANIFEST_NAME
    if not path.exists():
        return {}
    with open(path, newline="") as fh:
        return {row["clip_path"]: (Path(cache_dir) / row["cache_file"], row["config_hash"]) for row in csv.DictReader(fh)}


def cache_features(metas: list[ClipMeta], config: DspConfig, cache_dir: str | Path) -> CacheReport:
    """Featurise clips into ``cache_dir`` and write the manifest.

    A clip whose manifest row carries the current config hash and whose
    cache file exists is not recomputed.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    old = read_manifest(cache_dir)
    digest = config.digest()
    fb = config.filterbank()
    computed = reused = 0
    entries: dict[str, Path] = {}
    rows = []
    for meta in metas:
        key = str(meta.path)
        rel = _cache_name(meta)
        target = cache_dir / rel
        prev = old.get(key)
        if prev is not None and prev[1] == digest and prev[0].exists():
            reused += 1
        else:
            if prev is not None and prev[1] != digest:
                log.warning("feature config changed for %s; recomputing", key)
            clip = read_wav(meta.path)
            feats = dsp.featurize(clip.samples, config.n_fft, config.hop, fb)
            target.parent.mkdir(parents=True, exist_ok=True)
            dsp.write_features(target, feats)
            computed += 1
        entries[key] = target
        rows.append((key, rel, digest))
    # rows for clips outside this call are carried over untouched
    for key, (path, h) in old.items():
        if key not in entries:
            rows.append((key, path.relative_to(cache_dir).as_posix(), h))
    rows.sort()
    manifest = cache_dir / MANIFEST_NAME
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_path", "cache_file", "config_hash"])
        w.writerows(rows)
    return CacheReport(manifest, computed, reused, entries)
