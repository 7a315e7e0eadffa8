"""Class-incremental experiment orchestration.

A phase plan partitions the class set into a base half and K equal
incremental phases. The runner executes the full pipeline: supervised and
contrastive pretraining on the base phase, distillation into the student,
buffer expansion, the closed-form base solve, then one recursive update
per phase, evaluating on the cumulative test set after each. Every
training-row access goes through an audited view so the exemplar-free
contract (no reads of earlier phases' training rows during phases 1..K) is
checked, not assumed.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import analytic, numkit, red, sscl
from .backbone import LinearHead, MlpBackbone, TrainConfig, forward, freeze, train_supervised
from .errors import (
    AnalyticCilError,
    ContractViolationError,
    DataError,
    EvaluationError,
    ParameterError,
    PlanError,
)
from .synth import BlobDataset


@contextmanager
def _stage(name: str):
    """Tag any domain error escaping a pipeline stage with the stage name."""
    try:
        yield
    except AnalyticCilError as exc:
        exc.stage = name
        if exc.args:
            exc.args = (f"stage {name}: {exc.args[0]}",) + exc.args[1:]
        raise


VARIANTS = ("full", "label_only", "teacher_only", "sscl_only", "sl_only", "raw")

# Table-style ablation arms: which knowledge reaches the student backbone.
ABLATION_ARMS = ("sscl_only", "label_only", "teacher_only", "full")


@dataclass(frozen=True)
class PhasePlan:
    """Partition of class labels into a base phase and K incremental phases."""

    num_classes: int
    base_classes: tuple[int, ...]
    phase_classes: tuple[tuple[int, ...], ...]
    seed: int

    def __post_init__(self):
        groups = [self.base_classes, *self.phase_classes]
        flat = [c for g in groups for c in g]
        if sorted(flat) != list(range(self.num_classes)):
            raise PlanError("phase lists must partition the class set exactly")
        if len(self.base_classes) != self.num_classes // 2:
            raise PlanError(
                f"base phase must hold {self.num_classes // 2} of "
                f"{self.num_classes} classes, got {len(self.base_classes)}"
            )
        sizes = {len(p) for p in self.phase_classes}
        if len(sizes) > 1:
            raise PlanError(f"incremental phases must be equal-size, got {sorted(sizes)}")

    @property
    def k(self) -> int:
        return len(self.phase_classes)

    def classes_of(self, phase: int) -> tuple[int, ...]:
        return self.base_classes if phase == 0 else self.phase_classes[phase - 1]

    def column_of_class(self) -> dict[int, int]:
        """Class label -> classifier column, in order of appearance."""
        order = list(self.base_classes)
        for phase in self.phase_classes:
            order.extend(phase)
        return {c: i for i, c in enumerate(order)}


def make_phase_plan(num_classes: int, k: int, seed: int) -> PhasePlan:
    """Shuffle classes by seed, take half as the base, slice the rest into K phases."""
    if num_classes < 2:
        raise PlanError(f"need at least 2 classes, got {num_classes}")
    if k < 1:
        raise PlanError(f"k must be >= 1, got {k}")
    base_count = num_classes // 2
    remaining = num_classes - base_count
    if remaining % k != 0:
        valid = [d for d in range(1, remaining + 1) if remaining % d == 0]
        raise PlanError(
            f"{remaining} incremental classes cannot be split into {k} equal "
            f"phases; valid K values: {valid}"
        )
    order = numkit.rng_from_seed(seed).permutation(num_classes).tolist()
    base = tuple(order[:base_count])
    per = remaining // k
    phases = tuple(
        tuple(order[base_count + i * per : base_count + (i + 1) * per]) for i in range(k)
    )
    return PhasePlan(num_classes=num_classes, base_classes=base, phase_classes=phases, seed=seed)


@dataclass
class AccessRecord:
    stage: str
    split: str  # "train" or "test"
    phase: int  # phase whose rows were read


class PhasedData:
    """Dataset rows regrouped by a phase plan; every access is logged.

    Labels are remapped to classifier columns (order of appearance in the
    plan) so the block one-hot structure falls out of slicing.
    """

    def __init__(self, data: BlobDataset, plan: PhasePlan):
        present = set(np.unique(data.train_y).tolist()) | set(np.unique(data.test_y).tolist())
        planned = set(plan.base_classes)
        for phase in plan.phase_classes:
            planned |= set(phase)
        if not planned <= present:
            raise DataError(f"dataset lacks classes {sorted(planned - present)}")
        self.plan = plan
        self.data = data
        self.column = plan.column_of_class()
        self.log: list[AccessRecord] = []
        self._train_idx = [
            np.nonzero(np.isin(data.train_y, plan.classes_of(p)))[0]
            for p in range(plan.k + 1)
        ]
        self._test_idx = [
            np.nonzero(np.isin(data.test_y, plan.classes_of(p)))[0]
            for p in range(plan.k + 1)
        ]

    def _columns(self, labels: np.ndarray) -> np.ndarray:
        return np.array([self.column[int(c)] for c in labels], dtype=np.int64)

    def train_rows(self, phase: int, stage: str):
        """Training rows of one phase; label column indices, not raw labels."""
        self.log.append(AccessRecord(stage=stage, split="train", phase=phase))
        idx = self._train_idx[phase]
        return self.data.train_x[idx], self._columns(self.data.train_y[idx])

    def test_rows(self, phases: list[int], stage: str):
        """Test rows of the listed phases, concatenated in phase order."""
        xs, ys = [], []
        for p in phases:
            self.log.append(AccessRecord(stage=stage, split="test", phase=p))
            idx = self._test_idx[p]
            xs.append(self.data.test_x[idx])
            ys.append(self._columns(self.data.test_y[idx]))
        return np.vstack(xs), np.concatenate(ys)

    def exemplar_violations(self) -> list[AccessRecord]:
        """Training reads of phases older than the incremental stage doing them."""
        out = []
        for rec in self.log:
            if rec.split != "train" or not rec.stage.startswith("phase-"):
                continue
            stage_phase = int(rec.stage.split("-", 1)[1])
            if rec.phase < stage_phase:
                out.append(rec)
        return out


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs besides the data and the plan."""

    backbone_hidden: tuple[int, ...] = (48,)
    d_cnn: int = 32
    sl_epochs: int = 40
    sscl_epochs: int = 40
    d_proj: int = 32
    pred_hidden: int = 16
    jitter_std: float = 0.1
    mask_prob: float = 0.1
    lam: float = 0.4
    red_epochs: int = 20
    gamma: float = 0.01
    d_b: int = 128
    block_size: int = 256
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    lr_milestones: tuple[float, ...] = (0.5, 0.75)
    lr_divisor: float = 10.0
    master_seed: int = 7

    def stage_seeds(self) -> dict[str, int]:
        """Named per-stage seeds derived deterministically from the master seed."""
        names = (
            "sl_init", "sl_head", "sl_shuffle",
            "sscl_init", "projector", "predictor", "augment", "sscl_shuffle",
            "red_head", "red_shuffle", "buffer",
        )
        state = np.random.SeedSequence(self.master_seed).generate_state(len(names), dtype=np.uint64)
        return {name: int(v) for name, v in zip(names, state)}

    def train_config(self, epochs: int, seed: int, lr: float | None = None) -> TrainConfig:
        return TrainConfig(
            lr=self.lr if lr is None else lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            epochs=epochs,
            batch_size=self.batch_size,
            lr_milestones=self.lr_milestones,
            lr_divisor=self.lr_divisor,
            seed=seed,
        )

    def echo(self) -> dict:
        return {
            "backbone_hidden": list(self.backbone_hidden),
            "d_cnn": self.d_cnn,
            "sl_epochs": self.sl_epochs,
            "sscl_epochs": self.sscl_epochs,
            "d_proj": self.d_proj,
            "pred_hidden": self.pred_hidden,
            "jitter_std": self.jitter_std,
            "mask_prob": self.mask_prob,
            "lambda": self.lam,
            "red_epochs": self.red_epochs,
            "gamma": self.gamma,
            "d_b": self.d_b,
            "block_size": self.block_size,
            "lr": self.lr,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "lr_milestones": list(self.lr_milestones),
            "lr_divisor": self.lr_divisor,
            "master_seed": self.master_seed,
            "stage_seeds": self.stage_seeds(),
        }


@dataclass
class CilRunReport:
    """Per-phase accuracies, derived metrics, and the full resolved setup."""

    variant: str
    accuracies: list[float]
    average_accuracy: float
    last_accuracy: float
    base_split_accuracy: float
    incremental_split_accuracy: float
    class_order: list[int]
    plan_seed: int
    k: int
    config: dict
    losses: dict[str, list[float]]
    audit: dict
    timing: dict[str, float] = field(default_factory=dict)


def metrics(accuracies: list[float]) -> tuple[float, float]:
    """(average accuracy over phases 0..K, last-phase accuracy)."""
    if not accuracies:
        raise DataError("accuracy list is empty")
    arr = np.asarray(accuracies, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr > 1):
        bad = int(np.argmax((arr < 0) | (arr > 1)))
        raise DataError(f"accuracy {arr[bad]} at index {bad} outside [0, 1]", row=bad)
    return float(arr.mean()), float(arr[-1])


def _pretrain_streams(phased: PhasedData, cfg: PipelineConfig, variant: str, seeds, losses, timing):
    """Both pretraining streams on the base phase; returns (teacher, head, student)."""
    x0, y0cols = phased.train_rows(0, stage="base-pretrain")
    base_classes = len(phased.plan.base_classes)
    y0 = numkit.one_hot(y0cols, base_classes)
    d_in = x0.shape[1]
    widths = [d_in, *cfg.backbone_hidden, cfg.d_cnn]

    teacher = head = None
    if variant != "sscl_only":
        with _stage("pretrain-sl"):
            t0 = time.perf_counter()
            teacher = MlpBackbone.create(widths, seeds["sl_init"])
            head = LinearHead.create(cfg.d_cnn, base_classes, seeds["sl_head"])
            teacher, head, sl_losses = train_supervised(
                teacher, head, x0, y0, cfg.train_config(cfg.sl_epochs, seeds["sl_shuffle"])
            )
            losses["supervised"] = sl_losses
            timing["pretrain-sl"] = time.perf_counter() - t0

    student = None
    if variant != "sl_only":
        with _stage("pretrain-sscl"):
            t0 = time.perf_counter()
            student = MlpBackbone.create(widths, seeds["sscl_init"])
            projector = sscl.make_projector(cfg.d_cnn, cfg.d_proj, seeds["projector"])
            predictor = sscl.make_predictor(cfg.d_proj, cfg.pred_hidden, seeds["predictor"])
            policy = sscl.AugmentationPolicy(
                jitter_std=cfg.jitter_std, mask_prob=cfg.mask_prob, seed=seeds["augment"]
            )
            student, hist = sscl.pretrain_sscl(
                student, projector, predictor, x0, policy,
                cfg.train_config(cfg.sscl_epochs, seeds["sscl_shuffle"]),
            )
            losses["contrastive"] = hist.mean_loss
            losses["embedding_std"] = hist.embedding_std
            timing["pretrain-sscl"] = time.perf_counter() - t0
    return teacher, head, student


def _build_extractor(phased: PhasedData, cfg: PipelineConfig, variant: str, seeds, losses, timing):
    """Run the variant's pretraining/distillation recipe; returns a frozen backbone."""
    if variant == "raw":
        # frozen identity map: the analytic stack runs on raw features
        return freeze(MlpBackbone(weights=[np.eye(phased.data.dim)]))

    teacher, head, student = _pretrain_streams(phased, cfg, variant, seeds, losses, timing)
    if variant == "sl_only":
        return freeze(teacher)
    if variant == "sscl_only":
        return freeze(student)

    lam = {"label_only": 0.0, "teacher_only": 1.0}.get(variant, cfg.lam)
    with _stage("distill"):
        t0 = time.perf_counter()
        x0, y0cols = phased.train_rows(0, stage="distill")
        y0 = numkit.one_hot(y0cols, len(phased.plan.base_classes))
        red_head = LinearHead.create(cfg.d_cnn, y0.shape[1], seeds["red_head"])
        red_cfg = red.RedConfig(
            lam=lam,
            epochs=cfg.red_epochs,
            train=cfg.train_config(cfg.red_epochs, seeds["red_shuffle"], lr=cfg.lr / 10),
        )
        extractor, hist = red.distill(student, teacher, red_head, x0, y0, red_cfg)
        losses["distill"] = hist.loss
        losses["distill_feature"] = hist.feature_term
        losses["distill_label"] = hist.label_term
        timing["distill"] = time.perf_counter() - t0
    return extractor


def _accuracy(clf, extractor, buffer, x, y_cols) -> float:
    feats = analytic.buffer_project(buffer, forward(extractor, x))
    return float((analytic.predict(clf, feats) == y_cols).mean())


def _incremental_pass(phased: PhasedData, cfg: PipelineConfig, extractor, timing):
    """Ainit on the base phase, one recursive update per later phase,
    evaluating on the cumulative test set after each. Returns
    (accuracies, classifier, buffer)."""
    plan = phased.plan
    seeds = cfg.stage_seeds()
    with _stage("ainit"):
        t0 = time.perf_counter()
        buffer = analytic.BufferLayer.create(extractor.d_out, cfg.d_b, seeds["buffer"])
        x0, y0cols = phased.train_rows(0, stage="ainit")
        feats0 = analytic.buffer_project(buffer, forward(extractor, x0))
        clf = analytic.ainit(feats0, numkit.one_hot(y0cols, len(plan.base_classes)), cfg.gamma)
        timing["ainit"] = time.perf_counter() - t0

        accuracies = []
        xt, yt = phased.test_rows([0], stage="evaluate-0")
        accuracies.append(_accuracy(clf, extractor, buffer, xt, yt))

    t0 = time.perf_counter()
    for k in range(1, plan.k + 1):
        with _stage(f"phase-{k}"):
            new = len(plan.phase_classes[k - 1])
            clf = analytic.expand_classes(clf, new)
            xk, ykcols = phased.train_rows(k, stage=f"phase-{k}")
            yk = numkit.one_hot(ykcols, clf.classes_seen)
            clf = analytic.phase_update(
                clf, analytic.buffer_project(buffer, forward(extractor, xk)),
                yk, block_size=cfg.block_size,
            )
            xt, yt = phased.test_rows(list(range(k + 1)), stage=f"evaluate-{k}")
            accuracies.append(_accuracy(clf, extractor, buffer, xt, yt))
    timing["incremental"] = time.perf_counter() - t0

    violations = phased.exemplar_violations()
    if violations:
        raise ContractViolationError(
            f"exemplar-free contract broken: {len(violations)} earlier-phase training "
            f"reads during incremental phases (first: {violations[0]})"
        )
    return accuracies, clf, buffer


def run_cil(
    data: BlobDataset,
    plan: PhasePlan,
    cfg: PipelineConfig,
    variant: str = "full",
) -> CilRunReport:
    """Execute the pipeline end to end and evaluate after every phase."""
    report, _ = run_cil_with_state(data, plan, cfg, variant)
    return report


def run_cil_with_state(
    data: BlobDataset,
    plan: PhasePlan,
    cfg: PipelineConfig,
    variant: str = "full",
):
    """run_cil plus the final (extractor, classifier, buffer) for checkpointing."""
    if variant not in VARIANTS:
        raise ParameterError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    phased = PhasedData(data, plan)
    seeds = cfg.stage_seeds()
    losses: dict[str, list[float]] = {}
    timing: dict[str, float] = {}

    extractor = _build_extractor(phased, cfg, variant, seeds, losses, timing)
    accuracies, clf, buffer = _incremental_pass(phased, cfg, extractor, timing)
    base_acc, inc_acc = _split_accuracy(clf, extractor, buffer, phased)
    avg, last = metrics(accuracies)
    report = CilRunReport(
        variant=variant,
        accuracies=accuracies,
        average_accuracy=avg,
        last_accuracy=last,
        base_split_accuracy=base_acc,
        incremental_split_accuracy=inc_acc,
        class_order=[int(c) for p in range(plan.k + 1) for c in plan.classes_of(p)],
        plan_seed=plan.seed,
        k=plan.k,
        config=cfg.echo(),
        losses=losses,
        audit={
            "train_reads": sum(1 for r in phased.log if r.split == "train"),
            "test_reads": sum(1 for r in phased.log if r.split == "test"),
            "violations": len(phased.exemplar_violations()),
        },
        timing=timing,
    )
    return report, (extractor, clf, buffer)


def _split_accuracy(clf, extractor, buffer, phased: PhasedData):
    xb, yb = phased.test_rows([0], stage="split-eval")
    if xb.shape[0] == 0:
        raise EvaluationError("base test split is empty")
    xi, yi = phased.test_rows(list(range(1, phased.plan.k + 1)), stage="split-eval")
    if xi.shape[0] == 0:
        raise EvaluationError("incremental test split is empty")
    return (
        _accuracy(clf, extractor, buffer, xb, yb),
        _accuracy(clf, extractor, buffer, xi, yi),
    )


def evaluate_split(
    clf: analytic.AnalyticClassifier,
    extractor: MlpBackbone,
    buffer: analytic.BufferLayer,
    data: BlobDataset,
    plan: PhasePlan,
) -> tuple[float, float]:
    """Accuracy on base-class test rows and on incremental-class test rows."""
    if clf.classes_seen < plan.num_classes:
        raise EvaluationError(
            f"classifier covers {clf.classes_seen} classes but the plan has "
            f"{plan.num_classes}"
        )
    return _split_accuracy(clf, extractor, buffer, PhasedData(data, plan))


def run_ablation_suite(
    data: BlobDataset, plan: PhasePlan, cfg: PipelineConfig
) -> dict[str, CilRunReport]:
    """The four knowledge-source arms, each as a full run from one config."""
    return {arm: run_cil(data, plan, cfg, variant=arm) for arm in ABLATION_ARMS}


def run_red_sweep(
    data: BlobDataset,
    plan: PhasePlan,
    cfg: PipelineConfig,
    lambdas: tuple[float, ...],
    epoch_grid: tuple[int, ...],
) -> list[dict]:
    """Distillation grid over (blend weight, epochs).

    Both pretraining streams run once; each cell redoes only distillation
    and the incremental pass, so the sweep scales with the grid, not with
    pretraining cost. Returns one summary dict per cell.
    """
    warm = PhasedData(data, plan)
    seeds = cfg.stage_seeds()
    teacher, _, student = _pretrain_streams(warm, cfg, "full", seeds, {}, {})
    x0, y0cols = warm.train_rows(0, stage="distill")
    y0 = numkit.one_hot(y0cols, len(plan.base_classes))

    cells = []
    for lam in lambdas:
        for epochs in epoch_grid:
            head = LinearHead.create(cfg.d_cnn, y0.shape[1], seeds["red_head"])
            red_cfg = red.RedConfig(
                lam=lam,
                epochs=epochs,
                train=cfg.train_config(epochs, seeds["red_shuffle"], lr=cfg.lr / 10),
            )
            extractor, _ = red.distill(student, teacher, head, x0, y0, red_cfg)
            phased = PhasedData(data, plan)
            accuracies, _, _ = _incremental_pass(phased, cfg, extractor, {})
            avg, last = metrics(accuracies)
            cells.append(
                {
                    "lambda": lam,
                    "epochs": epochs,
                    "accuracies": accuracies,
                    "average_accuracy": avg,
                    "last_accuracy": last,
                }
            )
    return cells


def split_validation(data: BlobDataset, fraction: float = 0.1, seed: int = 0) -> BlobDataset:
    """Carve a per-class validation slice out of the training rows.

    Returns a dataset whose training rows are the remaining 90% and whose
    test rows are the held-out slice; used for grid-cell selection so the
    real test set never leaks into tuning.
    """
    if not 0 < fraction < 1:
        raise ParameterError(f"fraction must be in (0, 1), got {fraction}")
    rng = numkit.rng_from_seed(seed)
    fit_idx, val_idx = [], []
    for c in range(data.num_classes):
        idx = np.nonzero(data.train_y == c)[0]
        idx = idx[rng.permutation(idx.size)]
        n_val = max(1, int(round(idx.size * fraction)))
        if n_val >= idx.size:
            raise ParameterError(f"class {c} has too few rows to split")
        val_idx.append(idx[:n_val])
        fit_idx.append(idx[n_val:])
    fit = np.concatenate(fit_idx)
    val = np.concatenate(val_idx)
    return BlobDataset(
        train_x=data.train_x[fit],
        train_y=data.train_y[fit],
        test_x=data.train_x[val],
        test_y=data.train_y[val],
        num_classes=data.num_classes,
        dim=data.dim,
        centroids=data.centroids,
        margin=data.margin,
        seed=data.seed,
    )
