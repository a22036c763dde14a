"""Feature files, dataset manifests and stratified fold splitting.

FMX1 feature file layout (little-endian)::

    b"FMX1" | rows: u32 | cols: u32 | rows*cols float32, row-major

Manifest: UTF-8 CSV with header
``sample_id,label,audio_path,audio_row,image_path,image_row``.
Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FMX_MAGIC = b"FMX1"
_FMX_HEADER = struct.Struct("<4sII")
MANIFEST_FIELDS = ("sample_id", "label", "audio_path", "audio_row", "image_path", "image_row")


class FeatureFileError(ValueError):
    pass


class BadMagicError(FeatureFileError):
    pass


class SizeMismatchError(FeatureFileError):
    pass


class NonFiniteError(FeatureFileError):
    pass


class ManifestError(ValueError):
    pass


def encode_features(matrix) -> bytes:
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise FeatureFileError(f"expected a 2-D matrix, got shape {m.shape}")
    m = m.astype("<f4")
    if not np.isfinite(m).all():
        raise NonFiniteError("feature matrix contains non-finite values")
    return _FMX_HEADER.pack(FMX_MAGIC, m.shape[0], m.shape[1]) + m.tobytes(order="C")


def decode_features(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < _FMX_HEADER.size:
        raise SizeMismatchError(f"{source}: truncated header ({len(raw)} bytes)")
    magic, rows, cols = _FMX_HEADER.unpack_from(raw)
    if magic != FMX_MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}, expected {FMX_MAGIC!r}")
    expected = _FMX_HEADER.size + rows * cols * 4
    if len(raw) != expected:
        raise SizeMismatchError(f"{source}: {len(raw)} bytes, header declares {expected}")
    m = np.frombuffer(raw, dtype="<f4", offset=_FMX_HEADER.size).reshape(rows, cols)
    if not np.isfinite(m).all():
        raise NonFiniteError(f"{source}: non-finite values in payload")
    return m.astype(np.float32)


def write_feature_file(path, matrix) -> None:
    Path(path).write_bytes(encode_features(matrix))


def read_feature_file(path) -> np.ndarray:
    path = Path(path)
    return decode_features(path.read_bytes(), str(path))


@dataclass
class ManifestRecord:
    sample_id: str
    label: str
    audio_path: str
    audio_row: int
    image_path: str
    image_row: int


def write_manifest(path, records: list[ManifestRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            w.writerow([r.sample_id, r.label, r.audio_path, r.audio_row, r.image_path, r.image_row])


def read_manifest(path) -> list[ManifestRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_FIELDS)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(
                    ManifestRecord(
                        row["sample_id"], row["label"],
                        row["audio_path"], int(row["audio_row"]),
                        row["image_path"], int(row["image_row"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed record ({exc})") from None
    return records


@dataclass
class Dataset:
    """In-memory dataset: one row per sample in both modality matrices."""

    sample_ids: list[str]
    labels: np.ndarray  # int class indices
    classes: list[str]
    audio: np.ndarray
    visual: np.ndarray

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def index_of(self, sample_id: str) -> int:
        try:
            return self.sample_ids.index(sample_id)
        except ValueError:
            raise KeyError(f"unknown sample id {sample_id!r}") from None


def load_dataset(manifest_path, classes: list[str] | None = None) -> Dataset:
    """Read a manifest and gather the referenced feature rows.

    ``classes`` fixes the label order (e.g. from a checkpoint); by default
    labels are sorted.
    """
    manifest_path = Path(manifest_path)
    records = read_manifest(manifest_path)
    if not records:
        raise ManifestError(f"{manifest_path}: no records")
    base = manifest_path.parent
    cache: dict[Path, np.ndarray] = {}

    def fetch(rec: ManifestRecord, path: str, row: int) -> np.ndarray:
        p = Path(path)
        p = p if p.is_absolute() else base / p
        if p not in cache:
            try:
                cache[p] = read_feature_file(p)
            except OSError as exc:
                raise ManifestError(f"record {rec.sample_id!r}: cannot read {p}: {exc.strerror}") from None
        m = cache[p]
        if not 0 <= row < m.shape[0]:
            raise ManifestError(f"record {rec.sample_id!r}: row {row} out of range for {p} ({m.shape[0]} rows)")
        return m[row]

    seen = set()
    audio, visual = [], []
    for rec in records:
        if rec.sample_id in seen:
            raise ManifestError(f"record {rec.sample_id!r}: duplicate sample id")
        seen.add(rec.sample_id)
        audio.append(fetch(rec, rec.audio_path, rec.audio_row))
        visual.append(fetch(rec, rec.image_path, rec.image_row))
        for name, vecs in (("audio", audio), ("image", visual)):
            if vecs[-1].shape != vecs[0].shape:
                raise ManifestError(
                    f"record {rec.sample_id!r}: {name} dimension {vecs[-1].shape[0]} != {vecs[0].shape[0]}"
                )

    labels_present = sorted({r.label for r in records})
    if classes is None:
        classes = labels_present
        if len(classes) < 2:
            raise ManifestError(f"{manifest_path}: need at least 2 labels, found {len(classes)}")
    lookup = {c: i for i, c in enumerate(classes)}
    for rec in records:
        if rec.label not in lookup:
            raise ManifestError(f"record {rec.sample_id!r}: label {rec.label!r} not among known classes")
    return Dataset(
        sample_ids=[r.sample_id for r in records],
        labels=np.array([lookup[r.label] for r in records], dtype=np.int64),
        classes=list(classes),
        audio=np.stack(audio),
        visual=np.stack(visual),
    )


def make_folds(labels, k: int = 5, seed: int = 0, names: list[str] | None = None) -> list[np.ndarray]:
    """Stratified, seeded k-fold partition of ``range(len(labels))``.

    Samples are shuffled within each label, the per-label lists are
    concatenated in label order, and the result is dealt round-robin to
    the folds. Fold sizes then differ by at most one, and so do the
    per-fold counts of any label.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(seed)
    order = []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        if len(idx) < k:
            name = names[lab] if names is not None else lab
            raise ValueError(f"label {name!r} has {len(idx)} samples, fewer than k={k}")
        order.extend(rng.permutation(idx).tolist())
    folds: list[list[int]] = [[] for _ in range(k)]
    for pos, i in enumerate(order):
        folds[pos % k].append(i)
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def validation_split(indices, fraction: float = 0.1, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle split of ``indices`` into (train, validation)."""
    indices = np.asarray(indices)
    perm = np.random.default_rng(seed).permutation(indices)
    n_val = max(1, int(round(fraction * len(indices))))
    if n_val >= len(indices):
        raise ValueError("not enough samples for a validation split")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])
