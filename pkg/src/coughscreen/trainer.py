"""Training, evaluation, cross-validation and the Mel-band sweep.

Each record flows through: load + resample to the feature rate, trim
leading inactivity, centre-crop, log-Mel extraction, per-spectrogram
standardization, then the ResNet.  Augmentation (when requested) runs on
the cropped waveforms before feature extraction.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import augment, metrics
from . import nncore as nn
from . import resnet
from ._fileio import atomic_write_text
from .audio_io import AudioClip, load_audio
from .dataset import FoldPlan, batches, filter_external, labels_of, split_indices
from .errors import ConfigMismatch, InvalidConfig, NonFiniteLoss, SingleClass
from .features import (FeatureConfig, extract, load_spectrogram, save_spectrogram,
                       spectrogram_from_bytes)
from .preprocess import DEFAULT_P_TH, preprocess

log = logging.getLogger(__name__)

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 20
    epochs: int = 25
    seed: int = 0
    val_fraction: float = 0.10
    normalize: bool = True
    width_factor: float = 1.0
    stage_depths: tuple = (3, 4, 6, 3)
    clip_seconds: float = 5.0
    vad_threshold: float = DEFAULT_P_TH
    augment_ratio: float | None = None
    class_weighted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stage_depths", tuple(int(d) for d in self.stage_depths))
        if not self.lr > 0:
            raise InvalidConfig("lr must be positive")
        if not 0 < self.val_fraction < 1:
            raise InvalidConfig("val_fraction must lie in (0, 1)")
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.clip_seconds <= 0:
            raise InvalidConfig("clip_seconds must be positive")

    @classmethod
    def tiny(cls, **kw) -> "TrainConfig":
        return cls(width_factor=1 / 8, stage_depths=(1, 1, 1, 1), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_depths"] = list(self.stage_depths)
        return d

    def resnet_config(self, fc: FeatureConfig) -> resnet.ResNetConfig:
        frames = fc.n_frames(int(round(self.clip_seconds * fc.sample_rate_hz)))
        return resnet.ResNetConfig(fc.n_mels, frames, self.stage_depths,
                                   width_factor=self.width_factor)


# --- features -----------------------------------------------------------------

def standardize(values: np.ndarray) -> np.ndarray:
    """Zero mean, unit std per spectrogram (std floored at 1e-6)."""
    v = np.asarray(values, dtype=np.float64)
    return (v - v.mean()) / max(float(v.std()), STD_FLOOR)


def to_network_input(specs, normalize: bool = True) -> np.ndarray:
    """Stack (M, K) log-Mel matrices into a float32 (N, 1, M, K) batch."""
    rows = [standardize(s) if normalize else np.asarray(s, np.float64) for s in specs]
    return np.stack(rows)[:, None].astype(np.float32)


class FeatureStore:
    """Preprocess + extract with optional on-disk MELS caching.

    Cache entries are keyed by the SHA-256 of the audio file and the
    feature/preprocessing settings, so editing either invalidates them.
    """

    def __init__(self, feature_config: FeatureConfig, clip_seconds: float = 5.0,
                 vad_threshold: float = DEFAULT_P_TH, cache_dir=None, jobs: int = 1):
        self.fc = feature_config
        self.clip_seconds = clip_seconds
        self.vad_threshold = vad_threshold
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.jobs = max(1, int(jobs))
        self._clips: dict[str, AudioClip] = {}

    def with_config(self, fc: FeatureConfig) -> "FeatureStore":
        other = FeatureStore(fc, self.clip_seconds, self.vad_threshold, self.cache_dir, self.jobs)
        other._clips = self._clips
        return other

    def _settings_key(self) -> str:
        blob = json.dumps({"features": self.fc.to_dict(), "clip": self.clip_seconds,
                           "vad": self.vad_threshold}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def clip(self, path: str) -> AudioClip:
        c = self._clips.get(path)
        if c is None:
            raw = load_audio(path, self.fc.sample_rate_hz)
            c = self._clips[path] = preprocess(raw, self.clip_seconds, self.vad_threshold)
        return c

    def spectrogram(self, path: str) -> np.ndarray:
        if self.cache_dir is not None:
            digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()[:24]
            entry = self.cache_dir / f"{digest}-{self._settings_key()}.mels"
            if entry.exists():
                return spectrogram_from_bytes(entry.read_bytes(), self.fc).values
            spec = extract(self.clip(path), self.fc)
            save_spectrogram(entry, spec)
            # round-trip through float32 so cached and fresh runs agree bitwise
            return load_spectrogram(entry, self.fc).values
        return extract(self.clip(path), self.fc).values.astype(np.float32)

    def spectrograms(self, paths) -> list[np.ndarray]:
        paths = list(paths)
        if self.jobs > 1:
            with ThreadPoolExecutor(self.jobs) as pool:
                return list(pool.map(self.spectrogram, paths))
        return [self.spectrogram(p) for p in paths]

    def clip_spectrogram(self, clip: AudioClip) -> np.ndarray:
        return extract(clip, self.fc).values.astype(np.float32)


# --- training loop ---------------------------------------------------------------

@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: float


@dataclass
class TrainResult:
    final: resnet.Model
    best: resnet.Model
    log: list = field(default_factory=list)
    best_epoch: int = 0

    def log_csv(self) -> str:
        return epoch_log_csv(self.log)


def epoch_log_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss", "val_auc"])
    for r in rows:
        w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_auc)])
    return buf.getvalue()


def _class_weights(y: np.ndarray):
    counts = np.bincount(y, minlength=2).astype(float)
    return counts.sum() / (2.0 * np.maximum(counts, 1.0))


def _val_metrics(model, X, y):
    if len(y) == 0:
        return float("nan"), float("nan")
    probs = np.concatenate([resnet.forward(model, X[i:i + 64], "eval").data
                            for i in range(0, len(X), 64)])
    loss = float(nn.cross_entropy(nn.Tensor(probs), y).data)
    try:
        auc = metrics.roc_auc(probs[:, 1], y)
    except metrics.SingleClass:
        auc = float("nan")
    return loss, auc


def fit(X: np.ndarray, y: np.ndarray, X_val: np.ndarray, y_val: np.ndarray,
        model_config: resnet.ResNetConfig, tc: TrainConfig,
        feature_config: FeatureConfig | None = None, metadata: dict | None = None) -> TrainResult:
    """Train from scratch on prepared (N, 1, M, K) inputs."""
    y = np.asarray(y, np.int64)
    y_val = np.asarray(y_val, np.int64)
    model = resnet.build(model_config, seed=tc.seed, feature_config=feature_config)
    model.metadata = dict(metadata or {})
    opt = nn.Adam(model.parameters(), lr=tc.lr)
    weights = _class_weights(y) if tc.class_weighted else None

    history = []
    best, best_auc, best_epoch = resnet.copy_model(model), -math.inf, 0
    for epoch in range(tc.epochs):
        losses = []
        for b, idx in enumerate(batches(len(y), tc.batch_size, epoch, tc.seed)):
            probs = resnet.forward(model, X[idx], "train")
            loss = nn.cross_entropy(probs, y[idx], weights)
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(epoch, b)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        val_loss, val_auc = _val_metrics(model, X_val, y_val)
        row = EpochLog(epoch + 1, float(np.mean(losses)), val_loss, val_auc)
        history.append(row)
        log.info("epoch %d train_loss %.4f val_loss %.4f val_auc %.4f",
                 row.epoch, row.train_loss, row.val_loss, row.val_auc)
        score = val_auc if np.isfinite(val_auc) else -math.inf
        if score > best_auc or epoch == 0:
            best_auc, best_epoch = score, epoch + 1
            best = resnet.copy_model(model)
            best.metadata = {**model.metadata, "epoch": best_epoch}
    model.metadata = {**model.metadata, "epoch": tc.epochs}
    best.metadata["epoch"] = best_epoch
    return TrainResult(model, best, history, best_epoch)


def _metadata(tc: TrainConfig, **extra) -> dict:
    return {"seed": tc.seed, "train": tc.to_dict(), **extra}


def _training_inputs(store: FeatureStore, records, tc: TrainConfig, seed: int):
    """Spectrograms and labels for training records, with optional augmentation."""
    records = list(records)
    specs = store.spectrograms(r.audio_path for r in records)
    y = labels_of(records)
    if tc.augment_ratio:
        items = [augment.LabeledClip(store.clip(r.audio_path), int(r.y), r.audio_path)
                 for r in records]
        grown = augment.expand_minority(items, tc.augment_ratio, seed)
        extra = grown[len(items):]
        specs += [store.clip_spectrogram(c.clip) for c in extra]
        y = np.concatenate([y, np.array([c.label for c in extra], np.int64)])
    return specs, y


def train(records, feature_config: FeatureConfig, tc: TrainConfig,
          store: FeatureStore | None = None, external=()) -> TrainResult:
    """Stratified 90/10 split of ``records``, then fit.

    ``external`` records (already filtered) join the training side only.
    """
    records = list(records)
    store = store or FeatureStore(feature_config, tc.clip_seconds, tc.vad_threshold)
    tr, va = split_indices(labels_of(records), tc.val_fraction, tc.seed)
    train_recs = [records[i] for i in tr] + list(external)
    val_recs = [records[i] for i in va]

    specs, y = _training_inputs(store, train_recs, tc, tc.seed)
    X = to_network_input(specs, tc.normalize)
    Xv = to_network_input(store.spectrograms(r.audio_path for r in val_recs), tc.normalize)
    yv = labels_of(val_recs)
    meta = _metadata(tc, clip_seconds=tc.clip_seconds, vad_threshold=tc.vad_threshold,
                     normalize=tc.normalize)
    return fit(X, y, Xv, yv, tc.resnet_config(feature_config), tc, feature_config, meta)


# --- evaluation -------------------------------------------------------------------

@dataclass
class EvalResult:
    confusion: metrics.ConfusionMatrix
    roc: metrics.RocCurve | None
    summary: dict
    scores: np.ndarray
    labels: np.ndarray

    @property
    def auc(self) -> float:
        return metrics.auc(self.roc) if self.roc is not None else float("nan")


def score_inputs(model: resnet.Model, X: np.ndarray) -> np.ndarray:
    return resnet.predict_proba(model, X)


def evaluate_arrays(model, X, y, threshold: float = metrics.DEFAULT_THRESHOLD) -> EvalResult:
    y = np.asarray(y, np.int64)
    scores = score_inputs(model, X)
    cm = metrics.confusion(scores, y, threshold)
    try:
        curve = metrics.roc(scores, y)
    except SingleClass:
        curve = None
    return EvalResult(cm, curve, metrics.summary_lenient(cm), scores, y)


def evaluate(model: resnet.Model, records, feature_config: FeatureConfig | None = None,
             store: FeatureStore | None = None,
             threshold: float = metrics.DEFAULT_THRESHOLD) -> EvalResult:
    """Eval-mode scoring of ``records``; scores are positive-class probabilities."""
    fc = feature_config or model.feature_config or FeatureConfig()
    if model.feature_config is not None and model.feature_config != fc:
        raise ConfigMismatch("checkpoint was trained with a different feature configuration")
    meta = model.metadata or {}
    store = store or FeatureStore(fc, meta.get("clip_seconds", 5.0),
                                  meta.get("vad_threshold", DEFAULT_P_TH))
    records = list(records)
    X = to_network_input(store.spectrograms(r.audio_path for r in records),
                         meta.get("normalize", True))
    return evaluate_arrays(model, X, labels_of(records), threshold)


# --- cross-validation -------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    validation_indices: np.ndarray
    result: EvalResult
    train: TrainResult


@dataclass
class CrossValResult:
    folds: list
    mean_confusion: metrics.ConfusionMatrix
    summary: dict
    mean_auc: float

    def pooled_roc(self) -> metrics.RocCurve:
        s = np.concatenate([f.result.scores for f in self.folds])
        y = np.concatenate([f.result.labels for f in self.folds])
        return metrics.roc(s, y)

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "tp", "tn", "fp", "fn", "acc", "se", "sp", "pr", "f1", "auc"])
        for f in self.folds:
            cm, s = f.result.confusion, f.result.summary
            w.writerow([f.fold] + cm.counts() +
                       [repr(float(s[k])) for k in ("acc", "se", "sp", "pr", "f1")] +
                       [repr(f.result.auc)])
        cm, s = self.mean_confusion, self.summary
        w.writerow(["mean"] + cm.counts() +
                   [repr(float(s[k])) for k in ("acc", "se", "sp", "pr", "f1")] +
                   [repr(self.mean_auc)])
        return buf.getvalue()


def crossvalidate(records, plan: FoldPlan, feature_config: FeatureConfig, tc: TrainConfig,
                  external=(), store: FeatureStore | None = None, jobs: int = 1) -> CrossValResult:
    """Train one model per fold and score its held-out fold.

    Training for fold f = records outside f + filtered external records
    (+ augmentation).  External records never enter a validation fold.
    The final-epoch model of each fold is the one evaluated.
    """
    records = list(records)
    if len(plan.assignments) != len(records):
        raise ValueError("fold plan does not match the record count")
    external = filter_external(external)
    store = store or FeatureStore(feature_config, tc.clip_seconds, tc.vad_threshold, jobs=jobs)

    def run(fold: int) -> FoldResult:
        fold_tc = replace(tc, seed=tc.seed + 1000 * fold)
        result = train([records[i] for i in plan.training(fold)], feature_config, fold_tc,
                       store, external)
        held = plan.validation(fold)
        ev = evaluate(result.final, [records[i] for i in held], feature_config, store)
        return FoldResult(fold, held, ev, result)

    # warm the shared clip cache once, in order, before any fold runs
    store.spectrograms(r.audio_path for r in list(records) + list(external))
    folds_present = [f for f in range(plan.num_folds) if plan.validation(f).size]
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            folds = list(pool.map(run, folds_present))
    else:
        folds = [run(f) for f in folds_present]
    mean_cm = metrics.mean_folds(f.result.confusion for f in folds)
    aucs = [f.result.auc for f in folds if np.isfinite(f.result.auc)]
    return CrossValResult(folds, mean_cm, metrics.summary_lenient(mean_cm),
                          float(np.mean(aucs)) if aucs else float("nan"))


# --- Mel-band sweep ---------------------------------------------------------------

SWEEP_MELS = (32, 64, 128, 256, 512)


@dataclass(frozen=True)
class SweepRow:
    n_mels: int
    mean_auc: float
    mean_acc: float


def sweep_table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_mels", "mean_auc", "mean_acc"])
    for r in rows:
        w.writerow([r.n_mels, repr(r.mean_auc), repr(r.mean_acc)])
    return buf.getvalue()


def parse_sweep_table(text: str) -> list[SweepRow]:
    return [SweepRow(int(r["n_mels"]), float(r["mean_auc"]), float(r["mean_acc"]))
            for r in csv.DictReader(io.StringIO(text))]


def sweep_mels(records, plan: FoldPlan, base_config: FeatureConfig, tc: TrainConfig,
               m_values=SWEEP_MELS, external=(), out_dir=None, jobs: int = 1,
               cache_dir=None) -> list[SweepRow]:
    """Cross-validate once per Mel band count; optionally write the table and ROC files."""
    store = FeatureStore(base_config, tc.clip_seconds, tc.vad_threshold, cache_dir, jobs)
    rows, curves = [], {}
    for m in m_values:
        fc = replace(base_config, n_mels=int(m))
        cv = crossvalidate(records, plan, fc, tc, external, store.with_config(fc), jobs)
        rows.append(SweepRow(int(m), cv.mean_auc, cv.summary["acc"]))
        try:
            curves[int(m)] = cv.pooled_roc()
        except SingleClass:
            curves[int(m)] = None
    if out_dir is not None:
        out = Path(out_dir)
        atomic_write_text(out / "sweep.csv", sweep_table_csv(rows))
        for m, curve in curves.items():
            if curve is not None:
                atomic_write_text(out / f"roc_m{m}.csv",
                                  curve.to_csv(f"pooled out-of-fold ROC, n_mels={m}"))
    return rows
