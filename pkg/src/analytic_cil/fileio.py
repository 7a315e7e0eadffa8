"""File formats: datasets, checkpoints, run configs, reports.

All binary layouts are little-endian and platform-independent. Dataset
features are stored as f32 for compactness; checkpoints carry f64 so a
resumed classifier recursion is bit-identical to an unbroken one.

Dataset file ("RLFV1\\0"):
    magic(6) | u32 N | u32 d | u32 C | N*d f32 row-major | N u32 labels
    total length is exactly 18 + 4*N*d + 4*N bytes.

Checkpoint file ("RLCK1\\0"):
    magic(6) | u32 n_sections | sections... | u32 CRC-32 of the section bytes
    section = tag(4) | u64 n_ints | n_ints u64 | u64 n_floats | n_floats f64
    tags: BKBN (backbone), BUFR (buffer), CLSF (classifier).

Run config: flat UTF-8 ``key = value`` lines, ``#`` comments, namespaced
keys. Unknown keys are rejected so typos cannot silently fall back to
defaults.
"""

from __future__ import annotations

import csv
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analytic import AnalyticClassifier, BufferLayer
from .backbone import MlpBackbone
from .errors import (
    BadMagicError,
    ChecksumError,
    ConfigError,
    DataError,
    FileFormatError,
    LabelRangeError,
    NonFiniteValueError,
    ParameterError,
    TruncatedFileError,
)
from .protocol import CilRunReport, PipelineConfig

DATASET_MAGIC = b"RLFV1\x00"
CHECKPOINT_MAGIC = b"RLCK1\x00"
REPORT_SCHEMA = 1


# ---------------------------------------------------------------------------
# dataset files

def save_dataset(path, features, labels, num_classes: int) -> None:
    """Write features (cast to f32) and integer labels."""
    features = np.ascontiguousarray(np.asarray(features, dtype=np.float32))
    labels = np.asarray(labels)
    if features.ndim != 2 or labels.ndim != 1:
        raise DataError("features must be 2-D and labels 1-D")
    if features.shape[0] != labels.shape[0]:
        raise DataError(f"{features.shape[0]} feature rows but {labels.shape[0]} labels")
    if not np.all(np.isfinite(features)):
        raise DataError("features contain non-finite values")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels outside [0, {num_classes})")
    n, d = features.shape
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<III", n, d, num_classes))
        fh.write(features.astype("<f4").tobytes())
        fh.write(labels.astype("<u4").tobytes())


def load_dataset(path):
    """Read a dataset file; returns (features f64, labels int64, num_classes).

    Every malformation is a distinct error carrying the byte offset at
    which it was detected.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(DATASET_MAGIC):
        raise TruncatedFileError(f"file ends inside the magic at byte {len(raw)}", offset=len(raw))
    if raw[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise BadMagicError(f"bad magic {raw[:6]!r} at byte 0", offset=0)
    if len(raw) < 18:
        raise TruncatedFileError(f"file ends inside the header at byte {len(raw)}", offset=len(raw))
    n, d, c = struct.unpack_from("<III", raw, 6)
    expected = 18 + 4 * n * d + 4 * n
    if len(raw) < expected:
        raise TruncatedFileError(
            f"file ends at byte {len(raw)}, expected {expected}", offset=len(raw)
        )
    if len(raw) > expected:
        raise FileFormatError(
            f"{len(raw) - expected} trailing bytes after offset {expected}", offset=expected
        )
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=18)
    finite = np.isfinite(feats)
    if not finite.all():
        idx = int(np.argmin(finite))
        raise NonFiniteValueError(
            f"non-finite feature at byte {18 + 4 * idx}", offset=18 + 4 * idx
        )
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=18 + 4 * n * d)
    if labels.size and labels.max() >= c:
        idx = int(np.argmax(labels >= c))
        off = 18 + 4 * n * d + 4 * idx
        raise LabelRangeError(
            f"label {labels[idx]} >= class count {c} at byte {off}", offset=off
        )
    return (
        feats.reshape(n, d).astype(np.float64),
        labels.astype(np.int64),
        int(c),
    )


def load_dataset_csv(path):
    """CSV fallback: header row, float columns, last column an integer label.

    Values pass through f32 so an equivalent binary file loads identically.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError("csv needs a header row and at least one data row")
    feats, labels = [], []
    for i, row in enumerate(rows[1:]):
        try:
            feats.append([np.float32(v) for v in row[:-1]])
            labels.append(int(row[-1]))
        except ValueError as exc:
            raise DataError(f"unparseable value in csv data row {i}: {exc}", row=i)
    features = np.asarray(feats, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and labels.min() < 0:
        raise DataError("csv labels must be non-negative")
    if not np.all(np.isfinite(features)):
        raise DataError("csv features contain non-finite values")
    return features.astype(np.float64), labels, int(labels.max()) + 1 if labels.size else 0


# ---------------------------------------------------------------------------
# checkpoint files

@dataclass
class CheckpointBundle:
    """Any subset of the pipeline's persistent state."""

    backbone: MlpBackbone | None = None
    buffer: BufferLayer | None = None
    classifier: AnalyticClassifier | None = None


def _pack_section(tag: bytes, ints: list[int], floats: np.ndarray) -> bytes:
    ints_arr = np.asarray(ints, dtype="<u8")
    floats_arr = np.ascontiguousarray(floats, dtype="<f8").ravel()
    return b"".join(
        [
            tag,
            struct.pack("<Q", ints_arr.size),
            ints_arr.tobytes(),
            struct.pack("<Q", floats_arr.size),
            floats_arr.tobytes(),
        ]
    )


def save_checkpoint(path, bundle: CheckpointBundle) -> None:
    sections = []
    if bundle.backbone is not None:
        net = bundle.backbone
        ints = [len(net.widths), *net.widths, int(net.frozen)]
        floats = np.concatenate([w.ravel() for w in net.weights])
        sections.append(_pack_section(b"BKBN", ints, floats))
    if bundle.buffer is not None:
        buf = bundle.buffer
        if buf.activation is not None:
            raise ParameterError(
                "only the standard linear buffer (no activation hook) can be checkpointed"
            )
        sections.append(
            _pack_section(b"BUFR", [buf.d_cnn, buf.d_b, buf.seed], buf.weight)
        )
    if bundle.classifier is not None:
        clf = bundle.classifier
        ints = [clf.d_b, clf.classes_seen, clf.phase_index]
        floats = np.concatenate([[clf.gamma], clf.weight.ravel(), clf.memory.ravel()])
        sections.append(_pack_section(b"CLSF", ints, floats))
    body = b"".join(sections)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(sections)))
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, raw: bytes, pos: int):
        self.raw = raw
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFileError(
                f"file ends at byte {len(self.raw)}, needed {self.pos + n}",
                offset=len(self.raw),
            )
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u64_list(self, n: int) -> list[int]:
        return [int(v) for v in np.frombuffer(self.take(8 * n), dtype="<u8")]

    def f64_array(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def load_checkpoint(path) -> CheckpointBundle:
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC):
        raise TruncatedFileError(f"file ends inside the magic at byte {len(raw)}", offset=len(raw))
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"bad magic {raw[:6]!r} at byte 0", offset=0)
    if len(raw) < 14:
        raise TruncatedFileError(f"file ends inside the header at byte {len(raw)}", offset=len(raw))
    (n_sections,) = struct.unpack_from("<I", raw, 6)
    body = raw[10:-4]
    (stored_crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    actual_crc = zlib.crc32(body)
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"payload CRC mismatch: stored {stored_crc:#010x}, actual {actual_crc:#010x}",
            offset=len(raw) - 4,
        )
    reader = _Reader(raw, 10)
    bundle = CheckpointBundle()
    for _ in range(n_sections):
        tag = reader.take(4)
        ints = reader.u64_list(reader.u64())
        floats = reader.f64_array(reader.u64())
        if tag == b"BKBN":
            n_widths = ints[0]
            widths = ints[1 : 1 + n_widths]
            frozen = bool(ints[1 + n_widths])
            weights, at = [], 0
            for a, b in zip(widths, widths[1:]):
                weights.append(floats[at : at + a * b].reshape(a, b).copy())
                at += a * b
            if at != floats.size:
                raise FileFormatError(
                    f"backbone payload has {floats.size} floats, dims need {at}",
                    offset=reader.pos,
                )
            bundle.backbone = MlpBackbone(weights=weights, frozen=frozen)
        elif tag == b"BUFR":
            d_cnn, d_b, seed = ints
            if floats.size != d_cnn * d_b:
                raise FileFormatError(
                    f"buffer payload has {floats.size} floats, dims need {d_cnn * d_b}",
                    offset=reader.pos,
                )
            bundle.buffer = BufferLayer(
                weight=floats.reshape(d_cnn, d_b).copy(), seed=seed
            )
        elif tag == b"CLSF":
            d_b, classes, phase = ints
            need = 1 + d_b * classes + d_b * d_b
            if floats.size != need:
                raise FileFormatError(
                    f"classifier payload has {floats.size} floats, dims need {need}",
                    offset=reader.pos,
                )
            gamma = float(floats[0])
            weight = floats[1 : 1 + d_b * classes].reshape(d_b, classes).copy()
            memory = floats[1 + d_b * classes :].reshape(d_b, d_b).copy()
            bundle.classifier = AnalyticClassifier(
                weight=weight,
                memory=memory,
                gamma=gamma,
                classes_seen=classes,
                phase_index=phase,
            )
        else:
            raise FileFormatError(f"unknown section tag {tag!r}", offset=reader.pos - 4)
    return bundle


# ---------------------------------------------------------------------------
# run configuration

# key -> (parser, default). Parsers double as validators.
def _fractions(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


CONFIG_KEYS: dict[str, tuple] = {
    "seed.master": (int, 7),
    "seed.data": (int, 11),
    "seed.plan": (int, 13),
    "plan.k": (int, 5),
    "synth.classes": (int, 20),
    "synth.dim": (int, 32),
    "synth.train_per_class": (int, 30),
    "synth.test_per_class": (int, 20),
    "synth.margin": (float, 1.5),
    "backbone.hidden": (_ints, (48,)),
    "backbone.d_cnn": (int, 32),
    "sgd.lr": (float, 0.1),
    "sgd.momentum": (float, 0.9),
    "sgd.weight_decay": (float, 5e-4),
    "sgd.batch_size": (int, 64),
    "sgd.epochs": (int, 40),
    "sgd.lr_milestones": (_fractions, (0.5, 0.75)),
    "sgd.lr_divisor": (float, 10.0),
    "sscl.epochs": (int, 40),
    "sscl.d_proj": (int, 32),
    "sscl.pred_hidden": (int, 16),
    "sscl.jitter_std": (float, 0.1),
    "sscl.mask_prob": (float, 0.1),
    "red.lambda": (float, 0.4),
    "red.epochs": (int, 20),
    "analytic.gamma": (float, 0.01),
    "analytic.d_b": (int, 128),
    "analytic.block_size": (int, 256),
}


def default_config() -> dict:
    return {key: default for key, (_, default) in CONFIG_KEYS.items()}


def load_config(path) -> dict:
    """Parse a key=value config; unknown keys are errors, missing keys default."""
    values = default_config()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser, _ = CONFIG_KEYS[key]
        try:
            values[key] = parser(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}")
    return values


def pipeline_config(values: dict) -> PipelineConfig:
    """Materialize a PipelineConfig from resolved config values."""
    return PipelineConfig(
        backbone_hidden=tuple(values["backbone.hidden"]),
        d_cnn=values["backbone.d_cnn"],
        sl_epochs=values["sgd.epochs"],
        sscl_epochs=values["sscl.epochs"],
        d_proj=values["sscl.d_proj"],
        pred_hidden=values["sscl.pred_hidden"],
        jitter_std=values["sscl.jitter_std"],
        mask_prob=values["sscl.mask_prob"],
        lam=values["red.lambda"],
        red_epochs=values["red.epochs"],
        gamma=values["analytic.gamma"],
        d_b=values["analytic.d_b"],
        block_size=values["analytic.block_size"],
        lr=values["sgd.lr"],
        momentum=values["sgd.momentum"],
        weight_decay=values["sgd.weight_decay"],
        batch_size=values["sgd.batch_size"],
        lr_milestones=tuple(values["sgd.lr_milestones"]),
        lr_divisor=values["sgd.lr_divisor"],
        master_seed=values["seed.master"],
    )


# ---------------------------------------------------------------------------
# reports

def report_payload(report: CilRunReport, resolved_config: dict | None = None) -> dict:
    """The deterministic part of a report: everything except timestamps/timing.

    ``resolved_config`` carries the full key=value configuration (defaults
    included) so the payload alone suffices to re-run bit-identically.
    """
    payload = {
        "variant": report.variant,
        "accuracies": report.accuracies,
        "average_accuracy": report.average_accuracy,
        "last_accuracy": report.last_accuracy,
        "base_split_accuracy": report.base_split_accuracy,
        "incremental_split_accuracy": report.incremental_split_accuracy,
        "class_order": report.class_order,
        "plan_seed": report.plan_seed,
        "k": report.k,
        "config": report.config,
        "losses": report.losses,
        "audit": report.audit,
    }
    if resolved_config is not None:
        payload["resolved_config"] = {k: list(v) if isinstance(v, tuple) else v
                                      for k, v in resolved_config.items()}
    return payload


def report_document(report: CilRunReport, generated_at: str,
                    resolved_config: dict | None = None) -> dict:
    """Full report document; wall-clock data lives beside, not inside, the payload."""
    return {
        "schema": REPORT_SCHEMA,
        "generated_at": generated_at,
        "timing": report.timing,
        "report": report_payload(report, resolved_config),
    }


def write_report_json(path, report: CilRunReport, generated_at: str,
                      resolved_config: dict | None = None) -> None:
    doc = report_document(report, generated_at, resolved_config)
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def write_report_csv(path, report: CilRunReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phase", "accuracy"])
        for k, acc in enumerate(report.accuracies):
            writer.writerow([k, repr(acc)])
        writer.writerow(["average", repr(report.average_accuracy)])
        writer.writerow(["last", repr(report.last_accuracy)])


def read_report_json(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != REPORT_SCHEMA:
        raise FileFormatError(f"unsupported report schema {doc.get('schema')!r}")
    return doc
