"""Conversation data model, binary feature/anchor formats, synthesis, splits.

File formats (all little-endian):

* Feature table ``VFT1``: magic (4 bytes), u32 num_rows, u32 dim, then
  num_rows * dim float32 values row-major.
* Anchor file ``VEA1``: magic (4 bytes), u32 num_classes, u32 d_anc, then per
  class: u16 name_len, UTF-8 name bytes, u32 n_c, n_c * d_anc float32 values.

Upstream feature extraction is treated as offline: the rows of a feature
table are the per-utterance representations this pipeline starts from.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ManifestError

MODALITIES = ("T", "A", "V")

_FEATURE_MAGIC = b"VFT1"
_ANCHOR_MAGIC = b"VEA1"


@dataclass(frozen=True)
class Utterance:
    id: str
    speaker: int
    label: int
    rows: dict[str, int]  # modality -> row index into that modality's table


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple[Utterance, ...]

    def __len__(self) -> int:
        return len(self.utterances)


@dataclass
class FeatureTable:
    modality: str
    rows: np.ndarray  # (num_rows, dim) float32

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def num_rows(self) -> int:
        return self.rows.shape[0]


@dataclass
class Dataset:
    classes: list[str]
    num_speakers: int
    features: dict[str, FeatureTable]
    conversations: list[Conversation]
    feature_files: dict[str, str] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(self.features.keys())

    def num_utterances(self) -> int:
        return sum(len(c) for c in self.conversations)

    def feature_dims(self) -> dict[str, int]:
        return {m: t.dim for m, t in self.features.items()}

    def labels(self) -> np.ndarray:
        return np.array([u.label for c in self.conversations for u in c.utterances], dtype=np.int64)


@dataclass
class AnchorFile:
    classes: list[str]
    vectors: dict[str, np.ndarray]  # class name -> (n_c, d_anc) float32

    @property
    def dim(self) -> int:
        return next(iter(self.vectors.values())).shape[1]


# ---------------------------------------------------------------------------
# binary formats


def write_feature_file(path: str | Path, table: FeatureTable) -> None:
    rows = np.ascontiguousarray(table.rows, dtype=np.float32)
    if rows.ndim != 2 or rows.shape[1] == 0:
        raise FormatError(f"feature table must be 2-D with dim > 0, got shape {rows.shape}")
    if not np.isfinite(rows).all():
        raise FormatError(f"feature table {table.modality!r} contains non-finite values")
    with open(path, "wb") as fh:
        fh.write(_FEATURE_MAGIC)
        fh.write(struct.pack("<II", rows.shape[0], rows.shape[1]))
        fh.write(rows.tobytes())


def read_feature_file(path: str | Path, modality: str = "") -> FeatureTable:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"feature file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != _FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {_FEATURE_MAGIC!r}")
    num_rows, dim = struct.unpack_from("<II", raw, 4)
    expected = 12 + 4 * num_rows * dim
    if len(raw) != expected:
        raise FormatError(f"{path}: truncated or oversized payload ({len(raw)} bytes, expected {expected})")
    if dim == 0:
        raise FormatError(f"{path}: dim must be > 0")
    rows = np.frombuffer(raw, dtype="<f4", offset=12).reshape(num_rows, dim).copy()
    if not np.isfinite(rows).all():
        raise FormatError(f"{path}: feature table contains non-finite values")
    return FeatureTable(modality=modality, rows=rows)


def write_anchor_file(path: str | Path, anchors: AnchorFile) -> None:
    if len(set(anchors.classes)) != len(anchors.classes):
        raise FormatError("duplicate class name in anchor file")
    dims = {anchors.vectors[c].shape[1] for c in anchors.classes}
    if len(dims) != 1:
        raise FormatError(f"anchor dimension differs across classes: {sorted(dims)}")
    d_anc = dims.pop()
    with open(path, "wb") as fh:
        fh.write(_ANCHOR_MAGIC)
        fh.write(struct.pack("<II", len(anchors.classes), d_anc))
        for name in anchors.classes:
            vecs = np.ascontiguousarray(anchors.vectors[name], dtype=np.float32)
            _validate_anchor_vectors(name, vecs)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", vecs.shape[0]))
            fh.write(vecs.tobytes())


def read_anchor_file(path: str | Path) -> AnchorFile:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"anchor file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != _ANCHOR_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {_ANCHOR_MAGIC!r}")
    num_classes, d_anc = struct.unpack_from("<II", raw, 4)
    offset = 12
    classes: list[str] = []
    vectors: dict[str, np.ndarray] = {}
    for _ in range(num_classes):
        if offset + 2 > len(raw):
            raise FormatError(f"{path}: truncated class header")
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if offset + 4 > len(raw):
            raise FormatError(f"{path}: truncated vector count for class {name!r}")
        (n_c,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        nbytes = 4 * n_c * d_anc
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: truncated payload for class {name!r}")
        vecs = np.frombuffer(raw, dtype="<f4", count=n_c * d_anc, offset=offset).reshape(n_c, d_anc).copy()
        offset += nbytes
        if name in vectors:
            raise FormatError(f"{path}: duplicate class name {name!r}")
        _validate_anchor_vectors(name, vecs)
        classes.append(name)
        vectors[name] = vecs
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after last class")
    return AnchorFile(classes=classes, vectors=vectors)


def _validate_anchor_vectors(name: str, vecs: np.ndarray) -> None:
    if vecs.ndim != 2 or vecs.shape[0] < 1:
        raise FormatError(f"class {name!r} needs at least one anchor vector")
    if not np.isfinite(vecs).all():
        raise FormatError(f"class {name!r} has non-finite anchor values")
    if (np.abs(vecs).sum(axis=1) == 0.0).any():
        raise FormatError(f"class {name!r} has an all-zero anchor vector")


# ---------------------------------------------------------------------------
# manifest


def write_manifest(path: str | Path, dataset: Dataset) -> None:
    doc = {
        "classes": dataset.classes,
        "num_speakers": dataset.num_speakers,
        "feature_files": dict(dataset.feature_files),
        "conversations": [
            {
                "id": conv.id,
                "utterances": [
                    {"id": u.id, "speaker": u.speaker, "label": u.label, "rows": dict(u.rows)}
                    for u in conv.utterances
                ],
            }
            for conv in dataset.conversations
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_manifest(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc

    for key in ("classes", "num_speakers", "feature_files", "conversations"):
        if key not in doc:
            raise ManifestError(f"{path}: missing manifest key {key!r}")
    classes = list(doc["classes"])
    num_speakers = int(doc["num_speakers"])
    if not classes:
        raise ManifestError(f"{path}: empty class list")
    if num_speakers < 1:
        raise ManifestError(f"{path}: num_speakers must be >= 1")

    features: dict[str, FeatureTable] = {}
    feature_files: dict[str, str] = {}
    for modality, rel in doc["feature_files"].items():
        fpath = (path.parent / rel) if not Path(rel).is_absolute() else Path(rel)
        if not fpath.exists():
            raise ManifestError(f"{path}: feature file for modality {modality!r} missing: {fpath}")
        features[modality] = read_feature_file(fpath, modality=modality)
        feature_files[modality] = str(rel)

    conversations: list[Conversation] = []
    for conv_doc in doc["conversations"]:
        utterances = []
        for utt_doc in conv_doc["utterances"]:
            label = int(utt_doc["label"])
            speaker = int(utt_doc["speaker"])
            if not 0 <= label < len(classes):
                raise ManifestError(
                    f"utterance {utt_doc['id']!r}: label {label} out of range for {len(classes)} classes"
                )
            if not 0 <= speaker < num_speakers:
                raise ManifestError(
                    f"utterance {utt_doc['id']!r}: speaker {speaker} out of range for {num_speakers} speakers"
                )
            rows = {m: int(r) for m, r in utt_doc["rows"].items()}
            for modality in features:
                if modality not in rows:
                    raise ManifestError(f"utterance {utt_doc['id']!r}: missing row for modality {modality!r}")
                if not 0 <= rows[modality] < features[modality].num_rows:
                    raise ManifestError(
                        f"utterance {utt_doc['id']!r}: row {rows[modality]} out of range for "
                        f"modality {modality!r} ({features[modality].num_rows} rows)"
                    )
            utterances.append(Utterance(id=str(utt_doc["id"]), speaker=speaker, label=label, rows=rows))
        if not utterances:
            raise ManifestError(f"conversation {conv_doc['id']!r} has no utterances")
        conversations.append(Conversation(id=str(conv_doc["id"]), utterances=tuple(utterances)))
    if not conversations:
        raise ManifestError(f"{path}: no conversations")

    return Dataset(
        classes=classes,
        num_speakers=num_speakers,
        features=features,
        conversations=conversations,
        feature_files=feature_files,
    )


# ---------------------------------------------------------------------------
# synthetic data


def synth_generate(
    num_classes: int,
    num_conversations: int,
    utterances_per_conv: int,
    dims: dict[str, int],
    d_anc: int,
    separation: float,
    seed: int,
    anchors_per_class: int = 35,
) -> tuple[Dataset, AnchorFile]:
    """Class-separated Gaussian features plus a correlated anchor space.

    Each class gets one random unit direction per modality and one in anchor
    space; samples are ``separation * direction + N(0, I)`` noise. The anchor
    space is drawn independently of the feature spaces, so any alignment
    between learned projections and anchors has to be learned. Labels cycle
    round-robin, speakers alternate, and everything is a pure function of the
    arguments.
    """
    if separation < 0:
        raise ValueError(f"separation must be >= 0, got {separation}")
    for nm, v in (
        ("num_classes", num_classes),
        ("num_conversations", num_conversations),
        ("utterances_per_conv", utterances_per_conv),
        ("d_anc", d_anc),
        ("anchors_per_class", anchors_per_class),
    ):
        if v < 1:
            raise ValueError(f"{nm} must be >= 1, got {v}")

    rng = np.random.default_rng(seed)
    modalities = tuple(dims.keys())

    def unit(n: int) -> np.ndarray:
        v = rng.normal(size=n)
        return v / np.linalg.norm(v)

    class_dirs = {m: np.stack([unit(dims[m]) for _ in range(num_classes)]) for m in modalities}
    anchor_dirs = np.stack([unit(d_anc) for _ in range(num_classes)])

    total = num_conversations * utterances_per_conv
    tables = {m: np.empty((total, dims[m]), dtype=np.float32) for m in modalities}
    conversations: list[Conversation] = []
    idx = 0
    for ci in range(num_conversations):
        utterances = []
        for ui in range(utterances_per_conv):
            label = idx % num_classes
            for m in modalities:
                noise = rng.normal(size=dims[m])
                tables[m][idx] = (separation * class_dirs[m][label] + noise).astype(np.float32)
            utterances.append(
                Utterance(
                    id=f"c{ci}_u{ui}",
                    speaker=ui % 2,
                    label=label,
                    rows={m: idx for m in modalities},
                )
            )
            idx += 1
        conversations.append(Conversation(id=f"c{ci}", utterances=tuple(utterances)))

    class_names = [f"class_{c}" for c in range(num_classes)]
    vectors = {}
    for c, name in enumerate(class_names):
        noise = rng.normal(size=(anchors_per_class, d_anc))
        vectors[name] = (separation * anchor_dirs[c][None, :] + noise).astype(np.float32)

    dataset = Dataset(
        classes=class_names,
        num_speakers=2,
        features={m: FeatureTable(modality=m, rows=tables[m]) for m in modalities},
        conversations=conversations,
    )
    return dataset, AnchorFile(classes=class_names, vectors=vectors)


def write_dataset(out_dir: str | Path, dataset: Dataset, anchors: AnchorFile | None = None) -> dict[str, str]:
    """Write feature files + manifest (+ anchors) into a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, str] = {}
    feature_files = {}
    for m, table in dataset.features.items():
        fname = f"features_{m}.vft"
        write_feature_file(out / fname, table)
        feature_files[m] = fname
        written[f"features:{m}"] = str(out / fname)
    dataset.feature_files = feature_files
    manifest_path = out / "manifest.json"
    write_manifest(manifest_path, dataset)
    written["manifest"] = str(manifest_path)
    if anchors is not None:
        anchor_path = out / "anchors.vea"
        write_anchor_file(anchor_path, anchors)
        written["anchors"] = str(anchor_path)
    return written


# ---------------------------------------------------------------------------
# splitting


def split(dataset: Dataset, ratios: tuple[float, float, float], seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Partition at conversation granularity, deterministically per seed."""
    if any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = len(dataset.conversations)
    counts = [int(r * n) for r in ratios]
    fracs = [r * n - c for r, c in zip(ratios, counts)]
    while sum(counts) < n:
        i = int(np.argmax(fracs))
        counts[i] += 1
        fracs[i] = -1.0
    if any(c == 0 for c in counts):
        raise ValueError(f"a split ratio rounds to zero conversations: counts {counts} of {n}")

    order = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum(counts)
    slices = [order[: bounds[0]], order[bounds[0] : bounds[1]], order[bounds[1] :]]

    def subset(indices: np.ndarray) -> Dataset:
        return Dataset(
            classes=dataset.classes,
            num_speakers=dataset.num_speakers,
            features=dataset.features,
            conversations=[dataset.conversations[i] for i in sorted(indices)],
            feature_files=dataset.feature_files,
        )

    return subset(slices[0]), subset(slices[1]), subset(slices[2])
