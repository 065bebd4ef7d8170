"""Manifests, external-corpus filtering, folds, splits and batching.

Manifest CSV columns (header required, extra columns ignored)::

    audio_path, label, gender, nationality, cough_probability, covid_status, source

``label`` is ``p``/``n``; ``covid_status`` marks a confirmed diagnosis
(``true``/``false``); ``source`` is ``dicova``, ``coughvid`` or ``other``.
Relative audio paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._fileio import atomic_write_text
from .errors import BadRow, EmptyManifest, MissingColumn, TooFewSamples

POSITIVE = "covid_positive"
NEGATIVE = "covid_negative"
SOURCES = ("dicova", "coughvid", "other")
EXTERNAL_SOURCE = "coughvid"
COUGH_PROB_MIN = 0.6

MANIFEST_COLUMNS = ("audio_path", "label", "gender", "nationality",
                    "cough_probability", "covid_status", "source")

_LABELS = {"p": POSITIVE, "pos": POSITIVE, "positive": POSITIVE, "1": POSITIVE,
           POSITIVE: POSITIVE,
           "n": NEGATIVE, "neg": NEGATIVE, "negative": NEGATIVE, "0": NEGATIVE,
           NEGATIVE: NEGATIVE}
_BOOLS = {"true": True, "yes": True, "1": True, "y": True, "confirmed": True,
          "false": False, "no": False, "0": False, "n": False}


@dataclass(frozen=True)
class SampleRecord:
    audio_path: str
    label: str
    gender: str | None = None
    nationality: str | None = None
    cough_probability: float | None = None
    covid_status_confirmed: bool | None = None
    source: str = "other"

    def __post_init__(self):
        if not self.audio_path:
            raise ValueError("audio_path must be nonempty")
        if self.label not in (POSITIVE, NEGATIVE):
            raise ValueError(f"unknown label {self.label!r}")
        if self.cough_probability is not None and not 0.0 <= self.cough_probability <= 1.0:
            raise ValueError("cough_probability must lie in [0, 1]")

    @property
    def y(self) -> int:
        return 1 if self.label == POSITIVE else 0

    @property
    def is_external(self) -> bool:
        return self.source == EXTERNAL_SOURCE


def _parse_row(row: dict, line: int, root: Path | None) -> SampleRecord:
    def cell(name):
        v = row.get(name)
        v = v.strip() if isinstance(v, str) else None
        return v or None

    path = cell("audio_path")
    if path is None:
        raise BadRow(line, "empty audio_path")
    label = _LABELS.get((cell("label") or "").lower())
    if label is None:
        raise BadRow(line, f"label {row.get('label')!r} is not p/n")

    gender = cell("gender")
    if gender is not None:
        gender = gender.lower()
        if gender not in ("m", "f"):
            raise BadRow(line, f"gender {gender!r} is not m/f")
    nat = cell("nationality")
    if nat is not None:
        nat = nat.upper()
        if nat not in ("I", "O"):
            raise BadRow(line, f"nationality {nat!r} is not I/O")

    prob = cell("cough_probability")
    if prob is not None:
        try:
            prob = float(prob)
        except ValueError:
            raise BadRow(line, f"cough_probability {prob!r} is not a number") from None
        if not 0.0 <= prob <= 1.0:
            raise BadRow(line, f"cough_probability {prob} outside [0, 1]")

    status = cell("covid_status")
    if status is not None:
        if status.lower() not in _BOOLS:
            raise BadRow(line, f"covid_status {status!r} is not a boolean")
        status = _BOOLS[status.lower()]

    source = (cell("source") or "other").lower()
    if source not in SOURCES:
        raise BadRow(line, f"source {source!r} not in {SOURCES}")

    if root is not None and not Path(path).is_absolute():
        path = str(root / path)
    return SampleRecord(path, label, gender, nat, prob, status, source)


def parse_manifest_text(text: str, root=None) -> list[SampleRecord]:
    reader = csv.DictReader(io.StringIO(text))
    fields = [f.strip() for f in (reader.fieldnames or [])]
    reader.fieldnames = fields
    for required in ("audio_path", "label"):
        if required not in fields:
            raise MissingColumn(required)
    root = Path(root) if root is not None else None
    records = []
    for row in reader:
        if not any((v or "").strip() for v in row.values() if isinstance(v, str)):
            continue
        records.append(_parse_row(row, reader.line_num, root))
    if not records:
        raise EmptyManifest("manifest has no data rows")
    return records


def parse_manifest(path) -> list[SampleRecord]:
    """Read a manifest CSV; relative audio paths resolve against its folder."""
    path = Path(path)
    return parse_manifest_text(path.read_text(encoding="utf-8-sig"), root=path.parent)


def write_manifest(path, records, relative_to=None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_COLUMNS)
    base = Path(relative_to) if relative_to is not None else None
    for r in records:
        p = r.audio_path
        if base is not None:
            try:
                p = str(Path(p).relative_to(base))
            except ValueError:
                pass
        status = "" if r.covid_status_confirmed is None else str(r.covid_status_confirmed).lower()
        prob = "" if r.cough_probability is None else repr(r.cough_probability)
        w.writerow([p, "p" if r.y else "n", r.gender or "", r.nationality or "",
                    prob, status, r.source])
    atomic_write_text(path, buf.getvalue())


def filter_external(records) -> list[SampleRecord]:
    """Keep confirmed positives whose cough probability is strictly above 0.6."""
    return [r for r in records
            if r.cough_probability is not None and r.cough_probability > COUGH_PROB_MIN
            and r.covid_status_confirmed is True and r.label == POSITIVE]


def labels_of(records) -> np.ndarray:
    return np.array([r.y if hasattr(r, "y") else int(r.label) for r in records], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    num_folds: int
    assignments: np.ndarray   # record index -> fold id
    seed: int | None = None

    def validation(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def training(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.num_folds)

    def to_csv(self) -> str:
        lines = ["index,fold"] + [f"{i},{f}" for i, f in enumerate(self.assignments)]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str, n_records: int | None = None) -> "FoldPlan":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise EmptyManifest("fold plan has no rows")
        pairs = sorted((int(r["index"]), int(r["fold"])) for r in rows)
        idx = [i for i, _ in pairs]
        if idx != list(range(len(pairs))):
            raise ValueError("fold plan indices must cover 0..n-1 exactly once")
        if n_records is not None and len(pairs) != n_records:
            raise ValueError(f"fold plan has {len(pairs)} rows for {n_records} records")
        folds = np.array([f for _, f in pairs], dtype=np.int64)
        return cls(int(folds.max()) + 1, folds)

    @classmethod
    def load(cls, path, n_records: int | None = None) -> "FoldPlan":
        return cls.from_csv(Path(path).read_text(), n_records)


def make_folds(records, k: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified folds: each class is shuffled, then dealt round-robin.

    The dealing position carries over from one class to the next, so fold
    sizes never differ by more than one.
    """
    if k < 1:
        raise ValueError("k must be positive")
    labels = labels_of(records)
    if labels.size == 0:
        raise EmptyManifest("cannot fold an empty record set")
    rng = np.random.default_rng(seed)
    assign = np.empty(labels.size, dtype=np.int64)
    pos = 0
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        assign[idx] = (pos + np.arange(idx.size)) % k
        pos = (pos + idx.size) % k
    return FoldPlan(k, assign, seed)


def split_indices(labels, val_fraction: float = 0.10, seed: int = 0):
    """Stratified (train_idx, val_idx), sorted; at least one of each class validates."""
    labels = np.asarray(labels)
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 2:
            raise TooFewSamples(f"class {cls} has {idx.size} samples; need at least 2")
        idx = rng.permutation(idx)
        n_val = min(idx.size - 1, max(1, int(math.floor(val_fraction * idx.size + 0.5))))
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def split_train_val(records, val_fraction: float = 0.10, seed: int = 0):
    """Disjoint, exhaustive, stratified (train, val) record lists."""
    records = list(records)
    tr, va = split_indices(labels_of(records), val_fraction, seed)
    return [records[i] for i in tr], [records[i] for i in va]


def batches(n, batch_size: int = 20, epoch: int = 0, seed: int = 0) -> list[np.ndarray]:
    """Index batches over a permutation fixed by (seed, epoch); the last may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = n if isinstance(n, (int, np.integer)) else len(n)
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]
