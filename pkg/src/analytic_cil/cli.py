"""Command-line entry point.

Subcommands cover the whole experiment lifecycle: synthetic data
generation, the two pretraining streams, distillation, the incremental
run, checkpoint evaluation, the distillation grid search, and SVG plots.
Exit codes: 0 success, 1 a domain error (single machine-parsable line on
stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analytic, fileio, plots, protocol, red, sscl
from .backbone import LinearHead, MlpBackbone, forward, train_supervised
from .errors import AnalyticCilError, DataError
from .numkit import one_hot
from .synth import BlobDataset, make_blobs

TRAIN_FILE = "train.rlf"
TEST_FILE = "test.rlf"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _load_values(args) -> dict:
    values = fileio.load_config(args.config) if args.config else fileio.default_config()
    if getattr(args, "seed", None) is not None:
        values["seed.master"] = args.seed
    if getattr(args, "phases", None) is not None:
        values["plan.k"] = args.phases
    if getattr(args, "lam", None) is not None:
        values["red.lambda"] = float(args.lam)
    if getattr(args, "epochs", None) is not None:
        values["red.epochs"] = int(args.epochs)
    return values


def _synth_from_values(values: dict) -> BlobDataset:
    return make_blobs(
        num_classes=values["synth.classes"],
        dim=values["synth.dim"],
        train_per_class=values["synth.train_per_class"],
        test_per_class=values["synth.test_per_class"],
        margin=values["synth.margin"],
        seed=values["seed.data"],
    )


def _dataset_from_dir(path: str) -> BlobDataset:
    root = Path(path)
    train_x, train_y, c1 = fileio.load_dataset(root / TRAIN_FILE)
    test_x, test_y, c2 = fileio.load_dataset(root / TEST_FILE)
    if c1 != c2:
        raise DataError(f"train file has {c1} classes but test file has {c2}")
    return BlobDataset(
        train_x=train_x,
        train_y=train_y,
        test_x=test_x,
        test_y=test_y,
        num_classes=c1,
        dim=train_x.shape[1],
    )


def _load_data(args, values: dict) -> BlobDataset:
    """Dataset files when --data is given, otherwise the bundled synthetic suite."""
    if getattr(args, "data", None):
        return _dataset_from_dir(args.data)
    return _synth_from_values(values)


def _plan(values: dict, num_classes: int) -> protocol.PhasePlan:
    return protocol.make_phase_plan(num_classes, values["plan.k"], values["seed.plan"])


def _write_run_report(out: str, report, fmt: str, values: dict | None = None) -> None:
    if fmt == "csv":
        fileio.write_report_csv(out, report)
    else:
        fileio.write_report_json(out, report, generated_at=_now(), resolved_config=values)


def _base_rows(data: BlobDataset, plan: protocol.PhasePlan):
    phased = protocol.PhasedData(data, plan)
    x0, y0cols = phased.train_rows(0, stage="base-pretrain")
    return x0, one_hot(y0cols, len(plan.base_classes))


# ---------------------------------------------------------------------------
# subcommands

def _cmd_gen_synth(args) -> int:
    values = _load_values(args)
    if args.seed is not None:
        values["seed.data"] = args.seed
    data = _synth_from_values(values)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.save_dataset(out / TRAIN_FILE, data.train_x, data.train_y, data.num_classes)
    fileio.save_dataset(out / TEST_FILE, data.test_x, data.test_y, data.num_classes)
    print(f"wrote {out / TRAIN_FILE} and {out / TEST_FILE}")
    return 0


def _cmd_pretrain_sl(args) -> int:
    values = _load_values(args)
    if args.epochs is not None:
        values["sgd.epochs"] = args.epochs
    cfg = fileio.pipeline_config(values)
    data = _load_data(args, values)
    plan = _plan(values, data.num_classes)
    seeds = cfg.stage_seeds()
    x0, y0 = _base_rows(data, plan)
    net = MlpBackbone.create([data.dim, *cfg.backbone_hidden, cfg.d_cnn], seeds["sl_init"])
    head = LinearHead.create(cfg.d_cnn, y0.shape[1], seeds["sl_head"])
    net, head, losses = train_supervised(
        net, head, x0, y0, cfg.train_config(cfg.sl_epochs, seeds["sl_shuffle"])
    )
    fileio.save_checkpoint(args.out, fileio.CheckpointBundle(backbone=net))
    print(f"wrote {args.out} (final loss {losses[-1]:.6f})")
    return 0


def _cmd_pretrain_sscl(args) -> int:
    values = _load_values(args)
    if args.epochs is not None:
        values["sscl.epochs"] = args.epochs
    cfg = fileio.pipeline_config(values)
    data = _load_data(args, values)
    plan = _plan(values, data.num_classes)
    seeds = cfg.stage_seeds()
    x0, _ = _base_rows(data, plan)
    net = MlpBackbone.create([data.dim, *cfg.backbone_hidden, cfg.d_cnn], seeds["sscl_init"])
    projector = sscl.make_projector(cfg.d_cnn, cfg.d_proj, seeds["projector"])
    predictor = sscl.make_predictor(cfg.d_proj, cfg.pred_hidden, seeds["predictor"])
    policy = sscl.AugmentationPolicy(
        jitter_std=cfg.jitter_std, mask_prob=cfg.mask_prob, seed=seeds["augment"]
    )
    net, hist = sscl.pretrain_sscl(
        net, projector, predictor, x0, policy,
        cfg.train_config(cfg.sscl_epochs, seeds["sscl_shuffle"]),
    )
    fileio.save_checkpoint(args.out, fileio.CheckpointBundle(backbone=net))
    print(f"wrote {args.out} (final mean loss {hist.mean_loss[-1]:.6f})")
    return 0


def _cmd_distill(args) -> int:
    values = _load_values(args)
    cfg = fileio.pipeline_config(values)
    data = _load_data(args, values)
    plan = _plan(values, data.num_classes)
    seeds = cfg.stage_seeds()
    teacher = fileio.load_checkpoint(args.teacher).backbone
    student = fileio.load_checkpoint(args.student).backbone
    if teacher is None or student is None:
        raise DataError("teacher and student checkpoints must both contain a backbone")
    x0, y0 = _base_rows(data, plan)
    head = LinearHead.create(cfg.d_cnn, y0.shape[1], seeds["red_head"])
    red_cfg = red.RedConfig(
        lam=cfg.lam,
        epochs=cfg.red_epochs,
        train=cfg.train_config(cfg.red_epochs, seeds["red_shuffle"], lr=cfg.lr / 10),
    )
    frozen, hist = red.distill(student, teacher, head, x0, y0, red_cfg)
    fileio.save_checkpoint(args.out, fileio.CheckpointBundle(backbone=frozen))
    print(f"wrote {args.out} (final loss {hist.loss[-1]:.6f})")
    return 0


def _cmd_cil_run(args) -> int:
    values = _load_values(args)
    cfg = fileio.pipeline_config(values)
    data = _load_data(args, values)
    plan = _plan(values, data.num_classes)
    if args.ablation:
        reports = protocol.run_ablation_suite(data, plan, cfg)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for arm, report in reports.items():
            _write_run_report(out / f"{arm}.{args.report}", report, args.report, values)
        print(f"wrote {len(reports)} ablation reports to {out}")
        return 0
    report, (extractor, clf, buffer) = protocol.run_cil_with_state(
        data, plan, cfg, variant=args.variant
    )
    _write_run_report(args.out, report, args.report, values)
    if args.save_ckpt:
        fileio.save_checkpoint(
            args.save_ckpt,
            fileio.CheckpointBundle(backbone=extractor, buffer=buffer, classifier=clf),
        )
    print(
        f"wrote {args.out} (avg {report.average_accuracy:.4f}, "
        f"last {report.last_accuracy:.4f})"
    )
    return 0


def _cmd_eval(args) -> int:
    values = _load_values(args)
    bundle = fileio.load_checkpoint(args.ckpt)
    if bundle.backbone is None or bundle.buffer is None or bundle.classifier is None:
        raise DataError("eval needs a checkpoint with backbone, buffer and classifier")
    x, y, c = fileio.load_dataset(args.data)
    plan = _plan(values, c)
    column = plan.column_of_class()
    y_cols = np.array([column[int(v)] for v in y], dtype=np.int64)
    feats = analytic.buffer_project(bundle.buffer, forward(bundle.backbone, x))
    acc = float((analytic.predict(bundle.classifier, feats) == y_cols).mean())
    line = json.dumps({"accuracy": acc, "rows": int(x.shape[0])}, sort_keys=True)
    if args.out:
        Path(args.out).write_text(line + "\n", encoding="utf-8")
    print(line)
    return 0


def _cmd_grid_search(args) -> int:
    values = _load_values(args)
    cfg = fileio.pipeline_config(values)
    data = _load_data(args, values)
    plan = _plan(values, data.num_classes)
    lambdas = (
        tuple(float(v) for v in args.lam_grid.split(",")) if args.lam_grid else red.LAMBDA_GRID
    )
    epoch_grid = (
        tuple(int(v) for v in args.epoch_grid.split(",")) if args.epoch_grid else red.EPOCH_GRID
    )
    sweep_data = protocol.split_validation(data, fraction=0.1, seed=values["seed.plan"])
    cells = protocol.run_red_sweep(sweep_data, plan, cfg, lambdas, epoch_grid)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for cell in cells:
        name = f"cell_l{cell['lambda']:g}_e{cell['epochs']}.json"
        (out / name).write_text(json.dumps(cell, sort_keys=True, indent=2) + "\n")
    best = max(cells, key=lambda c: c["last_accuracy"])
    best_values = dict(values, **{"red.lambda": best["lambda"], "red.epochs": best["epochs"]})
    final_cfg = replace(cfg, lam=best["lambda"], red_epochs=best["epochs"])
    final = protocol.run_cil(data, plan, final_cfg, variant="full")
    fileio.write_report_json(out / "best_report.json", final, generated_at=_now(),
                             resolved_config=best_values)
    summary = {
        "schema": fileio.REPORT_SCHEMA,
        "cells": cells,
        "best": {"lambda": best["lambda"], "epochs": best["epochs"],
                 "validation_last_accuracy": best["last_accuracy"]},
        "test_last_accuracy": final.last_accuracy,
        "test_average_accuracy": final.average_accuracy,
    }
    (out / "grid_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(
        f"wrote {len(cells)} cell reports to {out}; best lambda={best['lambda']:g} "
        f"epochs={best['epochs']} (test last accuracy {final.last_accuracy:.4f})"
    )
    return 0


def _cmd_plot(args) -> int:
    docs = [json.loads(Path(p).read_text(encoding="utf-8")) for p in args.inputs]
    if all("cells" in d for d in docs):
        cells = [c for d in docs for c in d["cells"]]
        svg = plots.lambda_sweep_svg(cells)
    elif all("report" in d for d in docs):
        curves = [
            (d["report"].get("variant", f"run {i}"), d["report"]["accuracies"])
            for i, d in enumerate(docs)
        ]
        svg = plots.accuracy_curve_svg(curves)
    else:
        raise DataError("plot inputs must all be run reports or all grid summaries")
    Path(args.out).write_text(svg, encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="analytic-cil",
        description="Exemplar-free class-incremental learning experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, out=True):
        p.add_argument("--config", help="run configuration file (key = value lines)")
        if data:
            p.add_argument("--data", help="dataset directory with train.rlf/test.rlf")
        if out:
            p.add_argument("--out", required=True, help="output path")
        p.add_argument("--seed", type=int, help="override seed.master")

    p = sub.add_parser("gen-synth", help="generate the synthetic blob dataset")
    common(p, data=False)

    p = sub.add_parser("pretrain-sl", help="supervised stream on the base phase")
    common(p)
    p.add_argument("--epochs", type=int, help="override sgd.epochs")

    p = sub.add_parser("pretrain-sscl", help="contrastive stream on the base phase")
    common(p)
    p.add_argument("--epochs", type=int, help="override sscl.epochs")

    p = sub.add_parser("distill", help="distill the teacher into the student")
    common(p)
    p.add_argument("--teacher", required=True, help="supervised-stream checkpoint")
    p.add_argument("--student", required=True, help="contrastive-stream checkpoint")
    p.add_argument("--lambda", dest="lam", type=float, help="override red.lambda")
    p.add_argument("--epochs", type=int, help="override red.epochs")

    p = sub.add_parser("cil-run", help="full pipeline plus incremental phases")
    common(p)
    p.add_argument("--phases", type=int, help="override plan.k")
    p.add_argument("--lambda", dest="lam", type=float, help="override red.lambda")
    p.add_argument("--epochs", type=int, help="override red.epochs")
    p.add_argument("--report", choices=("json", "csv"), default="json")
    p.add_argument("--variant", choices=protocol.VARIANTS, default="full")
    p.add_argument("--ablation", action="store_true",
                   help="run the four knowledge-source arms; --out is a directory")
    p.add_argument("--save-ckpt", help="also write the final model checkpoint")

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset file")
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--data", required=True, help="dataset file (.rlf)")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--out", help="optional output path for the result line")
    p.add_argument("--seed", type=int, help="override seed.master")
    p.add_argument("--phases", type=int, help="override plan.k")

    p = sub.add_parser("grid-search", help="distillation grid over lambda and epochs")
    common(p)
    p.add_argument("--phases", type=int, help="override plan.k")
    p.add_argument("--lambda", dest="lam_grid",
                   help="comma list restricting the lambda grid")
    p.add_argument("--epochs", dest="epoch_grid",
                   help="comma list restricting the epoch grid")

    p = sub.add_parser("plot", help="render reports or grid summaries to SVG")
    p.add_argument("inputs", nargs="+", help="report or grid summary JSON files")
    p.add_argument("--out", required=True, help="output SVG path")

    return parser


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "pretrain-sl": _cmd_pretrain_sl,
    "pretrain-sscl": _cmd_pretrain_sscl,
    "distill": _cmd_distill,
    "cil-run": _cmd_cil_run,
    "eval": _cmd_eval,
    "grid-search": _cmd_grid_search,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except AnalyticCilError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
