"""Feature files (``MPFT``) and JSON dataset manifests."""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import DataError

MAGIC = b"MPFT"
_HEADER = struct.Struct("<4sII")
TASKS = ("multiclass", "multilabel")


def write_feature_file(path, matrix) -> None:
    arr = np.atleast_2d(np.asarray(matrix))
    if arr.ndim != 2:
        raise DataError(f"{path}: feature matrix must be 2-D, got {arr.shape}")
    t, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, t, d))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_feature_header(path) -> tuple[int, int]:
    try:
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
    except FileNotFoundError:
        raise DataError(f"{path}: feature file not found") from None
    if len(head) < _HEADER.size:
        raise DataError(f"{path}: truncated header ({len(head)} bytes)")
    magic, t, d = _HEADER.unpack(head)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    return t, d


def read_feature_file(path) -> np.ndarray:
    t, d = read_feature_header(path)
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        payload = fh.read()
    expected = 4 * t * d
    if len(payload) < expected:
        raise DataError(f"{path}: truncated payload, {len(payload)} of {expected} bytes")
    if len(payload) > expected:
        raise DataError(f"{path}: {len(payload) - expected} unexpected trailing bytes")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(t, d)


def export_csv(feature_path, csv_path) -> None:
    """Dump a feature file as CSV, one frame per row (inspection only)."""
    arr = read_feature_file(feature_path)
    with open(csv_path, "w", newline="") as fh:
        csv.writer(fh).writerows(arr.tolist())


# ---------------------------------------------------------------------------
# manifest


@dataclass
class ModalitySpec:
    id: int
    name: str
    dim: int


@dataclass
class StreamRef:
    path: str
    frames: int


@dataclass
class SampleRecord:
    id: str
    group: str
    labels: object  # int (multiclass), list of 0/1 (multilabel) or None
    streams: dict


@dataclass
class Sample:
    """A loaded recording: per-modality frame matrices plus optional labels."""

    id: str
    group_id: str
    labels: object
    streams: dict


@dataclass
class UnlabeledSample:
    """What the pretraining path is allowed to see."""

    id: str
    group_id: str
    streams: dict


@dataclass
class Manifest:
    dataset: str
    task: str
    classes: list
    modalities: list
    samples: list
    root: Path = field(default=Path("."), repr=False, compare=False)

    @property
    def modality_names(self) -> list[str]:
        return [m.name for m in sorted(self.modalities, key=lambda m: m.id)]

    @property
    def sample_ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "task": self.task,
            "classes": list(self.classes),
            "modalities": [{"id": m.id, "name": m.name, "dim": m.dim} for m in self.modalities],
            "samples": [
                {
                    "id": s.id,
                    "group": s.group,
                    "labels": s.labels,
                    "streams": {k: {"path": r.path, "frames": r.frames} for k, r in s.streams.items()},
                }
                for s in self.samples
            ],
        }

    def strip_labels(self) -> "Manifest":
        samples = [SampleRecord(s.id, s.group, None, dict(s.streams)) for s in self.samples]
        return Manifest(self.dataset, self.task, list(self.classes), list(self.modalities), samples, self.root)

    def select(self, ids) -> "Manifest":
        keep = set(ids)
        samples = [s for s in self.samples if s.id in keep]
        return Manifest(self.dataset, self.task, list(self.classes), list(self.modalities), samples, self.root)

    def load_samples(self, ids=None) -> list[Sample]:
        records = self.samples if ids is None else self.select(ids).samples
        out = []
        for rec in records:
            streams = {name: read_feature_file(self.resolve(rec.streams[name].path))
                       for name in self.modality_names}
            out.append(Sample(rec.id, rec.group, rec.labels, streams))
        return out

    def load_unlabeled(self, ids=None) -> list[UnlabeledSample]:
        return [UnlabeledSample(s.id, s.group_id, s.streams) for s in self.load_samples(ids)]

    def label_array(self, ids=None):
        records = self.samples if ids is None else self.select(ids).samples
        if any(r.labels is None for r in records):
            raise DataError("manifest has samples without labels")
        if self.task == "multiclass":
            return np.array([r.labels for r in records], dtype=np.int64)
        return np.array([r.labels for r in records], dtype=np.int64).reshape(len(records), len(self.classes))


def write_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")


def _field(obj, key, where, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise DataError(f"{where}: missing field {key!r}")
    val = obj[key]
    if kind is not None and not isinstance(val, kind) or isinstance(val, bool) and kind is int:
        raise DataError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(val).__name__}")
    return val


def _check_labels(labels, task, n_classes, where):
    if labels is None:
        return
    if task == "multiclass":
        if isinstance(labels, bool) or not isinstance(labels, int) or not 0 <= labels < n_classes:
            raise DataError(f"{where}.labels: expected class index in [0, {n_classes}), got {labels!r}")
    else:
        if (not isinstance(labels, list) or len(labels) != n_classes
                or any(x not in (0, 1) or isinstance(x, bool) for x in labels)):
            raise DataError(f"{where}.labels: expected a 0/1 list of length {n_classes}, got {labels!r}")


def parse_manifest(doc: dict, root: Path = Path("."), check_files: bool = True) -> Manifest:
    dataset = _field(doc, "dataset", "manifest", str)
    task = _field(doc, "task", "manifest", str)
    if task not in TASKS:
        raise DataError(f"manifest.task: expected one of {TASKS}, got {task!r}")
    classes = _field(doc, "classes", "manifest", list)
    if len(classes) < 2:
        raise DataError(f"manifest.classes: need at least 2 classes, got {len(classes)}")
    mods = []
    for i, m in enumerate(_field(doc, "modalities", "manifest", list)):
        where = f"modalities[{i}]"
        mods.append(ModalitySpec(_field(m, "id", where, int), _field(m, "name", where, str),
                                 _field(m, "dim", where, int)))
    if sorted(m.id for m in mods) != list(range(len(mods))):
        raise DataError("manifest.modalities: ids must be dense 0..M-1")
    if len({m.name for m in mods}) != len(mods):
        raise DataError("manifest.modalities: names must be unique")
    if any(m.dim <= 0 for m in mods):
        raise DataError("manifest.modalities: dims must be positive")
    dims = {m.name: m.dim for m in mods}
    samples, seen = [], set()
    for i, s in enumerate(_field(doc, "samples", "manifest", list)):
        where = f"samples[{i}]"
        sid = _field(s, "id", where, str)
        where = f"sample {sid!r}"
        if sid in seen:
            raise DataError(f"{where}: duplicate sample id")
        seen.add(sid)
        group = _field(s, "group", where, str)
        labels = s.get("labels") if isinstance(s, dict) else None
        _check_labels(labels, task, len(classes), where)
        raw_streams = _field(s, "streams", where, dict)
        streams = {}
        for name in dims:
            if name not in raw_streams:
                raise DataError(f"{where}: missing stream for modality {name!r}")
            ref = raw_streams[name]
            streams[name] = StreamRef(_field(ref, "path", f"{where}.{name}", str),
                                      _field(ref, "frames", f"{where}.{name}", int))
            if streams[name].frames < 1:
                raise DataError(f"{where}.{name}: frames must be >= 1")
        extra = set(raw_streams) - set(dims)
        if extra:
            raise DataError(f"{where}: streams for undeclared modalities {sorted(extra)}")
        samples.append(SampleRecord(sid, group, labels, streams))
    manifest = Manifest(dataset, task, list(classes), mods, samples, Path(root))
    if check_files:
        for rec in samples:
            for name, ref in rec.streams.items():
                t, d = read_feature_header(manifest.resolve(ref.path))
                if d != dims[name]:
                    raise DataError(f"sample {rec.id!r}, modality {name!r}: file dim {d} != manifest dim {dims[name]}")
                if t != ref.frames:
                    raise DataError(f"sample {rec.id!r}, modality {name!r}: file has {t} frames, manifest says {ref.frames}")
    return manifest


def load_manifest(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise DataError(f"{path}: manifest not found") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_manifest(doc, path.parent, check_files)
