"""Exemplar-free class-incremental learning with an analytic classifier.

Pipeline: dual-stream pretraining (supervised teacher + contrastive
student) on the base classes, distillation of the teacher's geometry and
the labels into the student, a frozen random buffer expansion, then a
closed-form ridge solve whose per-phase recursive updates reproduce joint
training over all rows seen so far.
"""

from .analytic import (
    AnalyticClassifier,
    BufferLayer,
    ainit,
    buffer_project,
    expand_classes,
    joint_fit,
    phase_update,
    predict,
)
from .backbone import LinearHead, MlpBackbone, TrainConfig, train_supervised
from .errors import AnalyticCilError
from .protocol import (
    CilRunReport,
    PhasePlan,
    PipelineConfig,
    make_phase_plan,
    metrics,
    run_ablation_suite,
    run_cil,
)
from .red import RedConfig, distill
from .sscl import AugmentationPolicy, pretrain_sscl
from .synth import BlobDataset, make_blobs

__version__ = "0.1.0"

__all__ = [
    "AnalyticCilError",
    "AnalyticClassifier",
    "AugmentationPolicy",
    "BlobDataset",
    "BufferLayer",
    "CilRunReport",
    "LinearHead",
    "MlpBackbone",
    "PhasePlan",
    "PipelineConfig",
    "RedConfig",
    "TrainConfig",
    "ainit",
    "buffer_project",
    "distill",
    "expand_classes",
    "joint_fit",
    "make_blobs",
    "make_phase_plan",
    "metrics",
    "phase_update",
    "predict",
    "pretrain_sscl",
    "run_ablation_suite",
    "run_cil",
    "train_supervised",
    "__version__",
]
