import numpy as np
import pytest

from analytic_cil import analytic, protocol
from analytic_cil.backbone import MlpBackbone, freeze
from analytic_cil.errors import (
    DataError,
    EvaluationError,
    ParameterError,
    PlanError,
)
from analytic_cil.synth import make_blobs, nearest_centroid_accuracy


class TestPhasePlan:
    def test_hundred_classes_five_phases(self):
        plan = protocol.make_phase_plan(100, 5, seed=1)
        assert len(plan.base_classes) == 50
        assert plan.k == 5
        assert all(len(p) == 10 for p in plan.phase_classes)

    def test_ten_classes_five_phases(self):
        plan = protocol.make_phase_plan(10, 5, seed=2)
        assert len(plan.base_classes) == 5
        assert all(len(p) == 1 for p in plan.phase_classes)

    def test_indivisible_remainder_lists_valid_k(self):
        with pytest.raises(PlanError, match=r"\[1, 5\]"):
            protocol.make_phase_plan(10, 4, seed=3)

    def test_partition_property(self):
        for seed in range(5):
            plan = protocol.make_phase_plan(24, 3, seed=seed)
            groups = [plan.base_classes, *plan.phase_classes]
            flat = [c for g in groups for c in g]
            assert sorted(flat) == list(range(24))
            assert len(set(flat)) == len(flat)

    def test_deterministic_given_seed(self):
        a = protocol.make_phase_plan(20, 5, seed=9)
        b = protocol.make_phase_plan(20, 5, seed=9)
        assert a == b
        c = protocol.make_phase_plan(20, 5, seed=10)
        assert a != c

    def test_hand_built_inconsistent_plan_rejected(self):
        with pytest.raises(PlanError):
            protocol.PhasePlan(
                num_classes=4, base_classes=(0, 1), phase_classes=((2,), (2,)), seed=0
            )
        with pytest.raises(PlanError):
            protocol.PhasePlan(
                num_classes=4, base_classes=(0,), phase_classes=((1,), (2, 3)), seed=0
            )


class TestSynthOracle:
    def test_margin_respected_and_separable(self):
        data = make_blobs(8, 16, 20, 10, margin=6.0, seed=4)
        c = data.centroids * data.margin  # undo the overall rescale
        diff = c[:, None, :] - c[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        assert dist.min() >= data.margin
        assert nearest_centroid_accuracy(data.test_x, data.test_y, data.centroids) >= 0.95

    def test_deterministic(self):
        a = make_blobs(5, 8, 10, 5, margin=4.0, seed=6)
        b = make_blobs(5, 8, 10, 5, margin=4.0, seed=6)
        assert np.array_equal(a.train_x, b.train_x)
        assert np.array_equal(a.test_y, b.test_y)


class TestMetrics:
    def test_example_pair(self):
        assert protocol.metrics([1.0, 0.5]) == (0.75, 0.5)

    def test_constant_list(self):
        avg, last = protocol.metrics([0.3, 0.3, 0.3])
        assert avg == pytest.approx(0.3) and last == 0.3

    def test_out_of_range_rejected(self):
        with pytest.raises(DataError):
            protocol.metrics([0.5, 1.2])
        with pytest.raises(DataError):
            protocol.metrics([])


class TestPhasedData:
    def test_audit_flags_injected_violation(self):
        data = make_blobs(6, 8, 6, 4, margin=6.0, seed=7)
        plan = protocol.make_phase_plan(6, 3, seed=8)
        phased = protocol.PhasedData(data, plan)
        phased.train_rows(0, stage="phase-2")  # an exemplar read
        assert len(phased.exemplar_violations()) == 1

    def test_missing_classes_rejected(self):
        data = make_blobs(4, 8, 6, 4, margin=6.0, seed=9)
        plan = protocol.make_phase_plan(6, 3, seed=10)
        with pytest.raises(DataError):
            protocol.PhasedData(data, plan)

    def test_column_mapping_follows_appearance_order(self):
        plan = protocol.make_phase_plan(6, 3, seed=11)
        column = plan.column_of_class()
        order = list(plan.base_classes) + [c for p in plan.phase_classes for c in p]
        assert [column[c] for c in order] == list(range(6))


@pytest.fixture(scope="module")
def run_inputs(small_pipeline_config):
    data = make_blobs(10, 16, 15, 10, margin=1.5, seed=5)
    plan = protocol.make_phase_plan(10, 5, seed=2)
    return data, plan, small_pipeline_config


@pytest.fixture(scope="module")
def full_report(run_inputs):
    data, plan, cfg = run_inputs
    return protocol.run_cil(data, plan, cfg, variant="full")


class TestRunCil:
    def test_degenerate_single_phase(self, run_inputs):
        data, _, cfg = run_inputs
        plan = protocol.make_phase_plan(10, 1, seed=2)
        report = protocol.run_cil(data, plan, cfg, variant="raw")
        assert len(report.accuracies) == 2
        assert report.average_accuracy == pytest.approx(
            (report.accuracies[0] + report.accuracies[1]) / 2
        )

    def test_report_structure(self, full_report, run_inputs):
        _, plan, _ = run_inputs
        report = full_report
        assert len(report.accuracies) == plan.k + 1
        assert report.last_accuracy == report.accuracies[-1]
        assert report.audit["violations"] == 0
        assert sorted(report.class_order) == list(range(10))
        assert "contrastive" in report.losses and "distill" in report.losses
        assert report.config["stage_seeds"]["buffer"] >= 0

    def test_k_invariance_of_final_weights(self, run_inputs):
        # same class order, different phase granularity: identical final state
        data, _, cfg = run_inputs
        finals = {}
        for k in (1, 5):
            plan = protocol.make_phase_plan(10, k, seed=2)
            report, (extractor, clf, buffer) = protocol.run_cil_with_state(
                data, plan, cfg, variant="raw"
            )
            finals[k] = (clf.weight, report.last_accuracy)
        w1, a1 = finals[1]
        w5, a5 = finals[5]
        assert np.linalg.norm(w1 - w5) / np.linalg.norm(w1) <= 1e-8
        assert abs(a1 - a5) <= 1e-10

    def test_exemplar_free_contract_zero_violations(self, full_report):
        assert full_report.audit["violations"] == 0
        assert full_report.audit["train_reads"] > 0

    def test_unknown_variant_rejected(self, run_inputs):
        data, plan, cfg = run_inputs
        with pytest.raises(ParameterError):
            protocol.run_cil(data, plan, cfg, variant="bogus")

    def test_stage_errors_carry_stage_tag(self, run_inputs):
        # both augmentation strengths zero: the contrastive stage must fail
        # and the error must say which stage it came from
        from dataclasses import replace

        data, plan, cfg = run_inputs
        broken = replace(cfg, jitter_std=0.0, mask_prob=0.0)
        with pytest.raises(ParameterError, match="pretrain-sscl") as exc:
            protocol.run_cil(data, plan, broken, variant="full")
        assert exc.value.stage == "pretrain-sscl"

    def test_red_versus_no_red_split_accuracies(self, default_arm_reports):
        # paired comparison on the bundled suite: the distilled pipeline may
        # not trail the supervised-only pipeline by more than 0.02 on either
        # split; both are reported side by side
        with_red = default_arm_reports["full"]
        no_red = default_arm_reports["sl_only"]
        print(
            f"split accuracies (base, incremental): "
            f"with-distillation=({with_red.base_split_accuracy:.4f}, "
            f"{with_red.incremental_split_accuracy:.4f}) "
            f"supervised-only=({no_red.base_split_accuracy:.4f}, "
            f"{no_red.incremental_split_accuracy:.4f})"
        )
        assert with_red.base_split_accuracy >= no_red.base_split_accuracy - 0.02
        assert (
            with_red.incremental_split_accuracy
            >= no_red.incremental_split_accuracy - 0.02
        )


class TestEvaluateSplit:
    def test_counting_identity(self, run_inputs):
        data, plan, cfg = run_inputs
        _, (extractor, clf, buffer) = protocol.run_cil_with_state(
            data, plan, cfg, variant="raw"
        )
        base_acc, inc_acc = protocol.evaluate_split(clf, extractor, buffer, data, plan)
        phased = protocol.PhasedData(data, plan)
        xb, yb = phased.test_rows([0], stage="check")
        xi, yi = phased.test_rows(list(range(1, plan.k + 1)), stage="check")
        total_correct = round(base_acc * len(yb)) + round(inc_acc * len(yi))
        xall = np.vstack([xb, xi])
        yall = np.concatenate([yb, yi])
        feats = analytic.buffer_project(
            buffer, protocol.forward(extractor, xall)
        )
        assert total_correct == int((analytic.predict(clf, feats) == yall).sum())

    def test_constant_classifier_base_accuracy_is_frequency(self, run_inputs):
        data, plan, _ = run_inputs
        d_b = 16
        # all-zero weights tie every logit, so the tie-break predicts class 0
        # for every row regardless of the input
        clf = analytic.AnalyticClassifier(
            weight=np.zeros((d_b, 10)), memory=np.eye(d_b), gamma=1.0,
            classes_seen=10, phase_index=0,
        )
        extractor = freeze(MlpBackbone(weights=[np.eye(16)]))
        buffer = analytic.BufferLayer(weight=np.eye(16), seed=0)
        phased = protocol.PhasedData(data, plan)
        xb, yb = phased.test_rows([0], stage="check")
        expected = (yb == 0).mean()
        base_acc, _ = protocol.evaluate_split(clf, extractor, buffer, data, plan)
        assert base_acc == pytest.approx(expected, abs=1e-12)

    def test_uncovered_classes_rejected(self, run_inputs):
        data, plan, _ = run_inputs
        clf = analytic.AnalyticClassifier(
            weight=np.zeros((4, 3)), memory=np.eye(4), gamma=1.0,
            classes_seen=3, phase_index=0,
        )
        extractor = freeze(MlpBackbone(weights=[np.eye(16)]))
        buffer = analytic.BufferLayer(weight=np.eye(16)[:, :4], seed=0)
        with pytest.raises(EvaluationError):
            protocol.evaluate_split(clf, extractor, buffer, data, plan)


class TestAblation:
    def test_quartet_emitted(self, run_inputs):
        data, plan, cfg = run_inputs
        reports = protocol.run_ablation_suite(data, plan, cfg)
        assert set(reports) == {"sscl_only", "label_only", "teacher_only", "full"}
        for rep in reports.values():
            assert len(rep.accuracies) == plan.k + 1
