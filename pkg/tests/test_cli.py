import json
import xml.etree.ElementTree as ET

import pytest

from analytic_cil import fileio
from analytic_cil.cli import main

SMALL_CONFIG = """\
# desk-minimum settings for command tests
synth.classes = 6
synth.dim = 8
synth.train_per_class = 8
synth.test_per_class = 5
synth.margin = 6.0
plan.k = 3
backbone.hidden = 12
backbone.d_cnn = 8
sgd.epochs = 6
sgd.batch_size = 16
sscl.epochs = 5
sscl.d_proj = 8
sscl.pred_hidden = 8
red.epochs = 4
analytic.d_b = 32
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL_CONFIG)
    return str(path)


class TestUsageErrors:
    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["cil-run", "--out", "x.json", "--frobnicate"])
        assert exc.value.code == 2

    def test_domain_error_single_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("no.such.key = 1\n")
        code = main(["cil-run", "--config", str(bad), "--out", str(tmp_path / "r.json")])
        assert code == 1
        err = capsys.readouterr().err.strip()
        assert "\n" not in err
        assert err.startswith("error ConfigError:")


class TestGenSynth:
    def test_writes_loadable_pair(self, tmp_path, config_path):
        out = tmp_path / "data"
        assert main(["gen-synth", "--config", config_path, "--out", str(out)]) == 0
        x, y, c = fileio.load_dataset(out / "train.rlf")
        assert c == 6 and x.shape[1] == 8
        x2, y2, c2 = fileio.load_dataset(out / "test.rlf")
        assert c2 == 6 and x2.shape[0] == 6 * 5


class TestCilRun:
    def test_five_phase_report(self, tmp_path, capsys):
        # bundled synthetic data, no --data flag; K+1 = 6 accuracy entries
        out = tmp_path / "report.json"
        code = main([
            "cil-run", "--out", str(out), "--phases", "5", "--variant", "raw",
        ])
        assert code == 0
        doc = fileio.read_report_json(out)
        assert len(doc["report"]["accuracies"]) == 6
        assert doc["report"]["audit"]["violations"] == 0

    def test_full_run_with_config_and_checkpoint(self, tmp_path, config_path):
        out = tmp_path / "report.json"
        ckpt = tmp_path / "model.rlck"
        code = main([
            "cil-run", "--config", config_path, "--out", str(out),
            "--save-ckpt", str(ckpt),
        ])
        assert code == 0
        doc = fileio.read_report_json(out)
        assert len(doc["report"]["accuracies"]) == 4
        bundle = fileio.load_checkpoint(ckpt)
        assert bundle.backbone is not None and bundle.backbone.frozen
        assert bundle.buffer is not None and bundle.classifier is not None
        assert bundle.classifier.classes_seen == 6

    def test_csv_report(self, tmp_path, config_path):
        out = tmp_path / "report.csv"
        code = main([
            "cil-run", "--config", config_path, "--out", str(out),
            "--variant", "raw", "--report", "csv",
        ])
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "phase,accuracy"
        assert len(lines) == 1 + 4 + 2

    def test_ablation_quartet(self, tmp_path, config_path):
        out = tmp_path / "arms"
        code = main([
            "cil-run", "--config", config_path, "--out", str(out), "--ablation",
        ])
        assert code == 0
        names = {p.name for p in out.iterdir()}
        assert names == {"full.json", "sscl_only.json", "label_only.json", "teacher_only.json"}


class TestStageCommands:
    def test_pretrain_distill_eval_chain(self, tmp_path, config_path):
        data_dir = tmp_path / "data"
        assert main(["gen-synth", "--config", config_path, "--out", str(data_dir)]) == 0

        teacher = tmp_path / "teacher.rlck"
        student = tmp_path / "student.rlck"
        distilled = tmp_path / "distilled.rlck"
        assert main([
            "pretrain-sl", "--config", config_path, "--data", str(data_dir),
            "--out", str(teacher),
        ]) == 0
        assert main([
            "pretrain-sscl", "--config", config_path, "--data", str(data_dir),
            "--out", str(student),
        ]) == 0
        assert main([
            "distill", "--config", config_path, "--data", str(data_dir),
            "--teacher", str(teacher), "--student", str(student),
            "--out", str(distilled),
        ]) == 0
        assert fileio.load_checkpoint(distilled).backbone.frozen

        # eval needs a full model; produce one via cil-run on the same data
        full_ckpt = tmp_path / "model.rlck"
        report = tmp_path / "report.json"
        assert main([
            "cil-run", "--config", config_path, "--data", str(data_dir),
            "--out", str(report), "--save-ckpt", str(full_ckpt),
        ]) == 0
        result = tmp_path / "eval.json"
        code = main([
            "eval", "--config", config_path, "--data", str(data_dir / "test.rlf"),
            "--ckpt", str(full_ckpt), "--out", str(result),
        ])
        assert code == 0
        got = json.loads(result.read_text())
        doc = fileio.read_report_json(report)
        assert got["accuracy"] == pytest.approx(doc["report"]["last_accuracy"], abs=1e-12)


class TestGridSearch:
    def test_reduced_grid(self, tmp_path, config_path):
        out = tmp_path / "grid"
        code = main([
            "grid-search", "--config", config_path, "--out", str(out),
            "--lambda", "0.2,0.8", "--epochs", "3,5",
        ])
        assert code == 0
        cells = sorted(p.name for p in out.glob("cell_*.json"))
        assert len(cells) == 4
        summary = json.loads((out / "grid_summary.json").read_text())
        assert len(summary["cells"]) == 4
        assert summary["best"]["lambda"] in (0.2, 0.8)
        assert summary["best"]["epochs"] in (3, 5)
        assert (out / "best_report.json").exists()


class TestPlot:
    def test_accuracy_curve_polyline_points(self, tmp_path, config_path):
        report = tmp_path / "report.json"
        assert main([
            "cil-run", "--config", config_path, "--out", str(report), "--variant", "raw",
        ]) == 0
        svg_path = tmp_path / "curve.svg"
        assert main(["plot", str(report), "--out", str(svg_path)]) == 0
        root = ET.fromstring(svg_path.read_text())
        ns = {"svg": "http://www.w3.org/2000/svg"}
        polylines = root.findall(".//svg:polyline", ns)
        assert len(polylines) == 1
        points = polylines[0].attrib["points"].split()
        assert len(points) == 4  # K+1 for plan.k = 3

    def test_lambda_sweep_plot(self, tmp_path, config_path):
        out = tmp_path / "grid"
        assert main([
            "grid-search", "--config", config_path, "--out", str(out),
            "--lambda", "0.2,0.8", "--epochs", "3",
        ]) == 0
        svg_path = tmp_path / "sweep.svg"
        assert main(["plot", str(out / "grid_summary.json"), "--out", str(svg_path)]) == 0
        root = ET.fromstring(svg_path.read_text())
        ns = {"svg": "http://www.w3.org/2000/svg"}
        polylines = root.findall(".//svg:polyline", ns)
        assert len(polylines) == 1  # one epoch series
        assert len(polylines[0].attrib["points"].split()) == 2  # two lambda values
