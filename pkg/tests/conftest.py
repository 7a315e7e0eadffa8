from __future__ import annotations

import pytest

# (criterion id, description, passed) tuples collected by the acceptance tests
ACCEPTANCE_RESULTS: list[tuple[int, str, bool]] = []


def record_criterion(cid: int, description: str, passed: bool) -> None:
    ACCEPTANCE_RESULTS.append((cid, description, passed))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid, desc, ok in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{status}  criterion {cid}: {desc}")


@pytest.fixture(scope="session")
def easy_blobs():
    """Well-separated 10-class blobs shared by training-dependent tests."""
    from analytic_cil.synth import make_blobs

    return make_blobs(
        num_classes=10, dim=16, train_per_class=15, test_per_class=10,
        margin=6.0, seed=5,
    )


@pytest.fixture(scope="session")
def small_pipeline_config():
    """Desk-minimum pipeline settings used where training time matters."""
    from analytic_cil.protocol import PipelineConfig

    return PipelineConfig(
        backbone_hidden=(24,),
        d_cnn=16,
        sl_epochs=15,
        sscl_epochs=12,
        red_epochs=8,
        d_proj=16,
        pred_hidden=8,
        d_b=64,
        batch_size=32,
        master_seed=3,
    )


@pytest.fixture(scope="session")
def default_suite():
    """The bundled synthetic suite at its default configuration."""
    from analytic_cil import fileio
    from analytic_cil.protocol import make_phase_plan
    from analytic_cil.synth import make_blobs

    values = fileio.default_config()
    data = make_blobs(
        num_classes=values["synth.classes"],
        dim=values["synth.dim"],
        train_per_class=values["synth.train_per_class"],
        test_per_class=values["synth.test_per_class"],
        margin=values["synth.margin"],
        seed=values["seed.data"],
    )
    plan = make_phase_plan(data.num_classes, values["plan.k"], values["seed.plan"])
    return data, plan, fileio.pipeline_config(values)


@pytest.fixture(scope="session")
def default_arm_reports(default_suite):
    """Every pipeline arm on the default suite, run once and shared."""
    from analytic_cil.protocol import run_cil

    data, plan, cfg = default_suite
    arms = ("full", "sscl_only", "sl_only", "label_only", "teacher_only")
    return {arm: run_cil(data, plan, cfg, variant=arm) for arm in arms}
