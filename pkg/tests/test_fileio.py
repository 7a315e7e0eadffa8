import struct

import numpy as np
import pytest

from analytic_cil import analytic, fileio, numkit, protocol
from analytic_cil.backbone import MlpBackbone, freeze
from analytic_cil.errors import (
    BadMagicError,
    ChecksumError,
    ConfigError,
    LabelRangeError,
    NonFiniteValueError,
    ParameterError,
    TruncatedFileError,
)
from analytic_cil.synth import make_blobs


@pytest.fixture
def dataset_file(tmp_path):
    rng = numkit.rng_from_seed(1)
    feats = rng.normal(size=(12, 5)).astype(np.float32)
    labels = rng.integers(0, 3, size=12)
    path = tmp_path / "d.rlf"
    fileio.save_dataset(path, feats, labels, 3)
    return path, feats, labels


class TestDatasetFile:
    def test_round_trip_bit_exact(self, dataset_file):
        path, feats, labels = dataset_file
        x, y, c = fileio.load_dataset(path)
        assert c == 3
        assert np.array_equal(x.astype(np.float32), feats)  # f32 payload preserved
        assert np.array_equal(y, labels)

    def test_file_length_is_exact(self, dataset_file):
        path, feats, labels = dataset_file
        assert path.stat().st_size == 18 + 4 * feats.size + 4 * labels.size

    def test_bad_magic_offset_zero(self, dataset_file, tmp_path):
        path, _, _ = dataset_file
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        bad = tmp_path / "bad.rlf"
        bad.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError) as exc:
            fileio.load_dataset(bad)
        assert exc.value.offset == 0

    def test_truncation_offset(self, dataset_file, tmp_path):
        path, _, _ = dataset_file
        raw = path.read_bytes()
        cut = len(raw) - 7
        short = tmp_path / "short.rlf"
        short.write_bytes(raw[:cut])
        with pytest.raises(TruncatedFileError) as exc:
            fileio.load_dataset(short)
        assert exc.value.offset == cut

    def test_trailing_bytes_rejected(self, dataset_file, tmp_path):
        path, _, _ = dataset_file
        extra = tmp_path / "extra.rlf"
        extra.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(Exception) as exc:
            fileio.load_dataset(extra)
        assert exc.value.offset == path.stat().st_size

    def test_out_of_range_label_offset(self, dataset_file, tmp_path):
        path, feats, labels = dataset_file
        raw = bytearray(path.read_bytes())
        label_base = 18 + 4 * feats.size
        bad_idx = 4
        struct.pack_into("<I", raw, label_base + 4 * bad_idx, 99)
        bad = tmp_path / "label.rlf"
        bad.write_bytes(bytes(raw))
        with pytest.raises(LabelRangeError) as exc:
            fileio.load_dataset(bad)
        assert exc.value.offset == label_base + 4 * bad_idx

    def test_non_finite_feature_offset(self, dataset_file, tmp_path):
        path, feats, _ = dataset_file
        raw = bytearray(path.read_bytes())
        bad_idx = 7
        struct.pack_into("<f", raw, 18 + 4 * bad_idx, float("nan"))
        bad = tmp_path / "nan.rlf"
        bad.write_bytes(bytes(raw))
        with pytest.raises(NonFiniteValueError) as exc:
            fileio.load_dataset(bad)
        assert exc.value.offset == 18 + 4 * bad_idx

    def test_csv_import_matches_binary(self, dataset_file, tmp_path):
        path, feats, labels = dataset_file
        csv_path = tmp_path / "d.csv"
        header = ",".join(f"f{i}" for i in range(feats.shape[1])) + ",label"
        lines = [header]
        for row, lab in zip(feats, labels):
            lines.append(",".join(repr(float(v)) for v in row) + f",{lab}")
        csv_path.write_text("\n".join(lines) + "\n")
        bx, by, bc = fileio.load_dataset(path)
        cx, cy, cc = fileio.load_dataset_csv(csv_path)
        assert np.array_equal(bx, cx)
        assert np.array_equal(by, cy)
        assert bc == cc


@pytest.fixture
def model_bundle():
    rng = numkit.rng_from_seed(2)
    net = freeze(MlpBackbone(weights=[rng.normal(size=(6, 8)), rng.normal(size=(8, 5))]))
    buffer = analytic.BufferLayer.create(5, 16, seed=9)
    x = rng.normal(size=(30, 16))
    y = numkit.one_hot(rng.integers(0, 4, size=30), 4)
    clf = analytic.ainit(x, y, gamma=0.01)
    clf = analytic.expand_classes(clf, 2)
    clf = analytic.phase_update(clf, rng.normal(size=(10, 16)), numkit.one_hot(4 + rng.integers(0, 2, size=10), 6))
    return fileio.CheckpointBundle(backbone=net, buffer=buffer, classifier=clf)


class TestCheckpointFile:
    def test_round_trip_bit_exact(self, model_bundle, tmp_path):
        path = tmp_path / "m.rlck"
        fileio.save_checkpoint(path, model_bundle)
        out = fileio.load_checkpoint(path)
        for a, b in zip(model_bundle.backbone.weights, out.backbone.weights):
            assert np.array_equal(a, b)
        assert out.backbone.frozen == model_bundle.backbone.frozen
        assert np.array_equal(out.buffer.weight, model_bundle.buffer.weight)
        assert out.buffer.seed == model_bundle.buffer.seed
        assert np.array_equal(out.classifier.weight, model_bundle.classifier.weight)
        assert np.array_equal(out.classifier.memory, model_bundle.classifier.memory)
        assert out.classifier.gamma == model_bundle.classifier.gamma
        assert out.classifier.classes_seen == model_bundle.classifier.classes_seen
        assert out.classifier.phase_index == model_bundle.classifier.phase_index

    def test_partial_bundle(self, model_bundle, tmp_path):
        path = tmp_path / "b.rlck"
        fileio.save_checkpoint(path, fileio.CheckpointBundle(backbone=model_bundle.backbone))
        out = fileio.load_checkpoint(path)
        assert out.backbone is not None
        assert out.buffer is None and out.classifier is None

    def test_flipped_payload_byte_fails_crc(self, model_bundle, tmp_path):
        path = tmp_path / "m.rlck"
        fileio.save_checkpoint(path, model_bundle)
        raw = bytearray(path.read_bytes())
        raw[40] ^= 0x01
        path.write_bytes(bytes(raw))
        with pytest.raises(ChecksumError):
            fileio.load_checkpoint(path)

    def test_bad_magic(self, model_bundle, tmp_path):
        path = tmp_path / "m.rlck"
        fileio.save_checkpoint(path, model_bundle)
        raw = bytearray(path.read_bytes())
        raw[0] = 0x00
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError):
            fileio.load_checkpoint(path)

    def test_activation_hook_not_checkpointable(self, tmp_path):
        buf = analytic.BufferLayer(weight=np.eye(3), seed=1, activation=np.tanh)
        with pytest.raises(ParameterError):
            fileio.save_checkpoint(tmp_path / "x.rlck", fileio.CheckpointBundle(buffer=buf))

    def test_resume_equivalence_three_phases(self, tmp_path):
        # run three incremental phases; checkpoint after phase 1 and resume:
        # the resumed recursion must match the unbroken one
        rng = numkit.rng_from_seed(5)
        gamma = 0.01
        x0 = rng.normal(size=(30, 12))
        y0 = numkit.one_hot(rng.integers(0, 3, size=30), 3)
        chunks = []
        for k in range(3):
            xk = rng.normal(size=(14, 12))
            yk = numkit.one_hot(3 + 2 * k + rng.integers(0, 2, size=14), 5 + 2 * k)
            chunks.append((xk, yk))

        unbroken = analytic.ainit(x0, y0, gamma)
        for xk, yk in chunks:
            unbroken = analytic.expand_classes(unbroken, 2)
            unbroken = analytic.phase_update(unbroken, xk, yk)

        resumed = analytic.ainit(x0, y0, gamma)
        resumed = analytic.expand_classes(resumed, 2)
        resumed = analytic.phase_update(resumed, *chunks[0])
        path = tmp_path / "resume.rlck"
        fileio.save_checkpoint(path, fileio.CheckpointBundle(classifier=resumed))
        resumed = fileio.load_checkpoint(path).classifier
        for xk, yk in chunks[1:]:
            resumed = analytic.expand_classes(resumed, 2)
            resumed = analytic.phase_update(resumed, xk, yk)

        assert np.abs(resumed.weight - unbroken.weight).max() <= 1e-12
        assert np.abs(resumed.memory - unbroken.memory).max() <= 1e-12


class TestRunConfig:
    def test_defaults_complete(self):
        values = fileio.default_config()
        assert values["analytic.gamma"] == 0.01
        assert values["red.lambda"] == 0.4
        assert values["red.epochs"] == 20
        assert values["sgd.lr"] == 0.1
        assert values["sgd.momentum"] == 0.9
        assert values["sgd.weight_decay"] == 5e-4

    def test_parse_with_comments_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment line\n"
            "analytic.gamma = 0.5   # inline comment\n"
            "plan.k=2\n"
            "backbone.hidden = 32,16\n"
            "\n"
        )
        values = fileio.load_config(path)
        assert values["analytic.gamma"] == 0.5
        assert values["plan.k"] == 2
        assert values["backbone.hidden"] == (32, 16)
        assert values["red.lambda"] == 0.4  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("analytic.gama = 0.5\n")
        with pytest.raises(ConfigError, match="gama"):
            fileio.load_config(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("plan.k = five\n")
        with pytest.raises(ConfigError):
            fileio.load_config(path)

    def test_missing_equals_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("analytic.gamma 0.5\n")
        with pytest.raises(ConfigError):
            fileio.load_config(path)

    def test_pipeline_config_materializes(self):
        cfg = fileio.pipeline_config(fileio.default_config())
        assert cfg.gamma == 0.01
        assert cfg.lam == 0.4
        assert cfg.d_b == 128


class TestReports:
    def test_payload_excludes_timing(self, default_suite_report):
        payload = fileio.report_payload(default_suite_report)
        assert "timing" not in payload
        assert payload["accuracies"] == default_suite_report.accuracies

    def test_json_document_round_trip(self, default_suite_report, tmp_path):
        path = tmp_path / "report.json"
        fileio.write_report_json(path, default_suite_report, generated_at="T")
        doc = fileio.read_report_json(path)
        assert doc["schema"] == 1
        assert doc["generated_at"] == "T"
        assert doc["report"]["last_accuracy"] == default_suite_report.last_accuracy

    def test_csv_report(self, default_suite_report, tmp_path):
        path = tmp_path / "report.csv"
        fileio.write_report_csv(path, default_suite_report)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "phase,accuracy"
        assert len(lines) == 1 + len(default_suite_report.accuracies) + 2


@pytest.fixture(scope="module")
def default_suite_report():
    data = make_blobs(6, 8, 8, 5, margin=6.0, seed=3)
    plan = protocol.make_phase_plan(6, 3, seed=4)
    cfg = protocol.PipelineConfig(d_b=32, master_seed=5)
    return protocol.run_cil(data, plan, cfg, variant="raw")
