"""
Pipeline stages.

Each stage reads the artifacts of its prerequisites, writes its own
(write-once) and is recorded in the run manifest. Running a recorded stage
again does nothing.
"""

import logging
import time
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..core.config import MULTI_EXPLANATION_KINDS, ExperimentConfig
from ..core.exceptions import PrerequisiteError, XAIInversionError
from ..core.io import npz_bytes, sha256_file, write_bytes_once, write_json_once
from ..data.splits import carve_validation
from ..inversion.breach import BreachStore, check_provenance, simulate_breach
from ..inversion.model import (
    InversionMethod,
    build_inversion_model,
    invert_batch,
    load_inversion_model,
    save_inversion_model,
)
from ..inversion.training import train_inversion
from ..metrics.report import MetricsReport
from ..metrics.similarity import evaluate_reconstructions
from ..models.classifier import (
    accuracy,
    build_classifier,
    load_classifier,
    predict_batch,
    save_classifier,
    train_classifier,
)
from ..surrogate.transfer import (
    SurrogateTrainer,
    invert_with_bundle,
    load_bundle,
    reconstruct_cams,
    save_bundle,
    surrogate_cams,
)
from ..xai.api import explain_batch, render_heatmap
from ..xai.maps import normalize_batch
from .context import RunContext
from .manifest import RunManifest, StageRecord
from .matrix import RunSpec, breach_kinds, build_run_matrix

logger = logging.getLogger("xai_inversion.pipeline")

STAGES = ("train-target", "breach", "train-inversion", "train-surrogate", "evaluate", "analyze", "report")
PREREQUISITES: Dict[str, Tuple[str, ...]] = {
    "train-target": (),
    "breach": ("train-target",),
    "train-inversion": ("breach",),
    "train-surrogate": ("breach",),
    "evaluate": ("train-inversion", "train-surrogate"),
    "analyze": ("evaluate",),
    "report": ("evaluate",),
}

StageResult = Tuple[Dict[str, Path], Dict[str, object]]


def train_target_stage(ctx: RunContext) -> StageResult:
    """Train the target on the target split and the evaluation model on the full dataset."""
    collection, plan = ctx.collection, ctx.plan
    config = ctx.config

    cfg = ctx.training_config(config.target, "target")
    train_idx, held_idx = carve_validation(plan.target_indices, 0.1, cfg.seed)
    target = build_classifier(ctx.target_spec(), cfg.seed)
    target, target_log = train_classifier(
        target,
        collection.images[train_idx],
        collection.labels[train_idx],
        cfg,
        held_out=(collection.images[held_idx], collection.labels[held_idx]) if len(held_idx) else None,
        desc="target",
    )
    test_idx = plan.attack_test_indices
    target_accuracy = accuracy(target, collection.images[test_idx], collection.labels[test_idx])

    cfg = ctx.training_config(config.evaluation, "evaluation")
    everything = np.arange(len(collection))
    train_idx, held_idx = carve_validation(everything, 0.1, cfg.seed)
    evaluator = build_classifier(ctx.evaluation_spec(), cfg.seed)
    evaluator, evaluation_log = train_classifier(
        evaluator,
        collection.images[train_idx],
        collection.attack_labels[train_idx],
        cfg,
        held_out=(collection.images[held_idx], collection.attack_labels[held_idx]) if len(held_idx) else None,
        desc="evaluation",
    )
    clean_accuracy = accuracy(evaluator, collection.images[test_idx], collection.attack_labels[test_idx])

    artifacts = {
        "target": save_classifier(target, ctx.target_path, {"config_hash": config.config_hash()}),
        "evaluation": save_classifier(evaluator, ctx.evaluation_model_path, {"config_hash": config.config_hash()}),
        "target_log": write_json_once(ctx.run_dir / "models" / "target_log.json", target_log.to_dict()),
        "evaluation_log": write_json_once(ctx.run_dir / "models" / "evaluation_log.json", evaluation_log.to_dict()),
    }
    details = {"target_test_accuracy": target_accuracy, "evaluation_clean_accuracy": clean_accuracy}
    logger.info(f"Target accuracy {target_accuracy:.4f}, evaluation clean accuracy {clean_accuracy:.4f}")
    return artifacts, details


def breach_stage(ctx: RunContext) -> StageResult:
    """Query the target API on both attacker partitions and store what leaks."""
    target = load_classifier(ctx.manifest.artifact("train-target", "target"))
    store = BreachStore(ctx.breach_dir)
    kinds = breach_kinds(ctx.config)
    if ctx.config.surrogate.enabled and "grad_cam" not in kinds:
        # true CAMs of the test split feed the surrogate analysis
        kinds = kinds + ("grad_cam",)
    provenance = {
        "target_sha256": sha256_file(ctx.manifest.artifact("train-target", "target")),
        "split_sha256": ctx.plan.checksum(),
        "config_hash": ctx.config.config_hash(),
    }
    counts = {}
    for partition in ("attack_train", "attack_test"):
        indices = ctx.plan.indices(partition)
        batch = simulate_breach(
            target, ctx.images(indices), indices, kinds, partition, batch_size=64, run_id=ctx.config.short_hash()
        )
        check_provenance(batch, ctx.plan)
        store.write(batch, provenance)
        counts[partition] = len(batch)
    return {"breach": store.manifest_path}, {"tuples": counts, "kinds": list(kinds)}


def _inversion_method(ctx: RunContext, run: RunSpec, store: BreachStore) -> InversionMethod:
    shape = None
    if run.explanation_kind is not None:
        d, h, w = store.manifest()["partitions"]["attack_train"]["explanations"][run.explanation_kind]["shape"]
        shape = (h, w, d)
    return InversionMethod.create(
        run.method,
        ctx.profile.image_shape,
        ctx.profile.class_count,
        run.explanation_kind,
        shape,
        width_scale=ctx.config.run.width_scale,
        max_flatten_features=ctx.config.inversion.max_flatten_features,
    )


def train_inversion_stage(ctx: RunContext) -> StageResult:
    """Train one inversion model per explainable-target run."""
    store = BreachStore(ctx.breach_dir)
    breach = store.load("attack_train")
    cfg = ctx.training_config(ctx.config.inversion.training, "inversion")
    artifacts: Dict[str, Path] = {}
    losses = {}
    for run in build_run_matrix(ctx.config):
        if run.family == "surrogate":
            continue
        path = ctx.inversion_path(run)
        log_path = path.with_suffix(".log.json")
        if path.exists():
            logger.info(f"Inversion model {run.run_id} already trained")
            artifacts[run.run_id] = path
            continue
        model = build_inversion_model(
            _inversion_method(ctx, run, store), ctx.profile, cfg.seed, ctx.config.inversion.output_activation
        )
        model, log = train_inversion(model, breach, ctx.collection.images, cfg, ctx.config.inversion.validation_fraction)
        write_json_once(log_path, log.to_dict())
        artifacts[run.run_id] = save_inversion_model(model, path, {"config_hash": ctx.config.config_hash()})
        losses[run.run_id] = log.final_loss
    return artifacts, {"final_loss": losses}


def train_surrogate_stage(ctx: RunContext) -> StageResult:
    """Train the attention-transfer bundles for both surrogate modes."""
    section = ctx.config.surrogate
    if not section.enabled:
        return {}, {"skipped": True}

    ood = ctx.surrogate_collection()
    if ood is None:
        breach = BreachStore(ctx.breach_dir).load("attack_train", kinds=())
        images, labels, plan = ctx.collection.images, ctx.collection.labels, ctx.plan
    else:
        target = load_classifier(ctx.manifest.artifact("train-target", "target"))
        indices = np.arange(len(ood))
        breach = simulate_breach(target, ood.images, indices, (), "attack_train", run_id=ctx.config.short_hash())
        images, labels, plan = ood.images, ood.labels, None

    trainer = SurrogateTrainer(
        breach,
        images,
        labels,
        ctx.surrogate_spec(),
        method=section.method,
        mode=section.mode,
        training={
            "surrogate_target": ctx.training_config(section.classifier, "surrogate_target"),
            "explanation_inverter": ctx.training_config(section.explanation_inverter, "explanation_inverter"),
            "image_inverter": ctx.training_config(section.image_inverter, "image_inverter"),
        },
        plan=plan,
        width_scale=ctx.config.run.width_scale,
        max_flatten_features=ctx.config.inversion.max_flatten_features,
        output_activation=ctx.config.inversion.output_activation,
        validation_fraction=ctx.config.inversion.validation_fraction,
    )
    trainer.fit_surrogate_target()
    trainer.fit_explanation_inverter()

    artifacts: Dict[str, Path] = {}
    for run in build_run_matrix(ctx.config):
        if run.family != "surrogate":
            continue
        trainer.mode = run.surrogate_mode
        trainer.fit_image_inverter()
        artifacts[run.run_id] = save_bundle(trainer.bundle(), ctx.surrogate_dir(run.surrogate_mode)) / "manifest.json"

    # rs-CAM quality on the test split against the trivial zero map
    test = BreachStore(ctx.breach_dir).load("attack_test", kinds=())
    s_cams = normalize_batch(surrogate_cams(trainer.surrogate_target, ctx.images(test.source_index)))
    rs_cams = reconstruct_cams(trainer.explanation_inverter, test.predictions)
    details = {
        "mode": section.mode,
        "out_of_distribution": ood is not None,
        "rs_cam_mse": float(((rs_cams - s_cams) ** 2).mean()),
        "zero_map_mse": float((s_cams**2).mean()),
        "final_loss": {stage: log.final_loss for stage, log in trainer.logs.items()},
    }
    return artifacts, details


def _reconstruct(ctx: RunContext, run: RunSpec, test, originals: np.ndarray) -> Tuple[np.ndarray, str]:
    """Reconstructions of one run and the explanation its inverter was fed."""
    batch_size = ctx.config.run.eval_batch_size
    if run.family == "surrogate":
        bundle = load_bundle(ctx.surrogate_dir(run.surrogate_mode))
        return invert_with_bundle(bundle, test.predictions, originals, batch_size)
    model = load_inversion_model(ctx.inversion_path(run))
    fed = run.explanation_kind if model.needs_explanation else "none"
    return invert_batch(model, test.predictions, test.explanation(run.explanation_kind), batch_size), fed


def evaluate_stage(ctx: RunContext) -> StageResult:
    """Reconstruct the attack-test split for every run and score the reconstructions."""
    evaluator = load_classifier(ctx.manifest.artifact("train-target", "evaluation"))
    test = BreachStore(ctx.breach_dir).load("attack_test")
    check_provenance(test, ctx.plan)
    originals = ctx.images(test.source_index)
    labels = ctx.collection.attack_labels[test.source_index]
    sigma = ctx.config.metrics.ssim_sigma or ctx.profile.ssim_sigma
    artifacts: Dict[str, Path] = {}
    means = {}
    fed_explanations = {}
    for run in build_run_matrix(ctx.config):
        directory = ctx.evaluation_dir(run.run_id)
        reconstructions, fed = _reconstruct(ctx, run, test, originals)
        values = evaluate_reconstructions(
            evaluator, originals, reconstructions, labels, sigma, ctx.config.run.eval_batch_size
        )
        metadata = {
            **run.to_dict(),
            "dataset": ctx.profile.name,
            "seed": ctx.seed,
            "config_hash": ctx.config.config_hash(),
            "ssim_sigma": sigma,
            "fed_explanation": fed,
        }
        report = MetricsReport.from_arrays(run.run_id, test.source_index, values, metadata)
        report.save(directory)
        write_bytes_once(
            directory / "reconstructions.npz",
            npz_bytes(reconstructions=reconstructions, source_index=test.source_index),
        )
        artifacts[run.run_id] = directory / "metrics.csv"
        fed_explanations[run.run_id] = fed
        means[run.run_id] = {metric: float(np.mean(v[np.isfinite(v)])) if np.isfinite(v).any() else None
                             for metric, v in values.items()}
        logger.info(f"{run.run_id}: attack accuracy {means[run.run_id]['attack_accuracy']:.4f}, "
                    f"SSIM {means[run.run_id]['ssim']:.4f}")
    clean = accuracy(evaluator, originals, labels, ctx.config.run.eval_batch_size)
    return artifacts, {"means": means, "fed_explanations": fed_explanations, "clean_attack_accuracy": float(clean)}


def analyze_stage(ctx: RunContext) -> StageResult:
    """Write the factor exports of every run."""
    from .analysis import analyze_factors

    return analyze_factors(ctx)


def report_stage(ctx: RunContext) -> StageResult:
    """Render figures, image grids and the ordering summary."""
    from .report import render_report

    return render_report(ctx)


STAGE_FUNCTIONS: Dict[str, Callable[[RunContext], StageResult]] = {
    "train-target": train_target_stage,
    "breach": breach_stage,
    "train-inversion": train_inversion_stage,
    "train-surrogate": train_surrogate_stage,
    "evaluate": evaluate_stage,
    "analyze": analyze_stage,
    "report": report_stage,
}


def check_prerequisites(manifest: RunManifest, stage: str) -> None:
    """Raise naming the first missing prerequisite of ``stage``.

    Raises:
        PrerequisiteError: If a prerequisite stage has not completed.
    """
    if stage not in PREREQUISITES:
        raise XAIInversionError(f"Unknown stage {stage!r}; choose one of {STAGES}")
    for required in PREREQUISITES[stage]:
        if not manifest.is_complete(required):
            logger.error(f"Stage {stage} needs {required} first")
            raise PrerequisiteError(
                f"Stage {stage!r} needs stage {required!r}; run `xai-inversion {required}` first",
                stage=stage,
                required=required,
            )


def run_stage(config: ExperimentConfig, stage: str, ctx: Optional[RunContext] = None) -> StageRecord:
    """Run one pipeline stage.

    Args:
        config: Validated experiment configuration.
        stage: One of ``STAGES``.
        ctx: Reuse an existing run context.

    Returns:
        The manifest record of the stage (the existing one if the stage had
        already completed).

    Raises:
        PrerequisiteError: If a prerequisite stage has not completed.
    """
    ctx = ctx or RunContext(config)
    check_prerequisites(ctx.manifest, stage)
    if ctx.manifest.is_complete(stage):
        logger.info(f"Stage {stage} already complete for config {config.short_hash()}; nothing to do")
        return ctx.manifest.stages[stage]
    logger.info(f"Running stage {stage} (config {config.short_hash()})")
    started = time.time()
    artifacts, details = STAGE_FUNCTIONS[stage](ctx)
    return ctx.manifest.complete(stage, artifacts, started, details)


def run_pipeline(config: ExperimentConfig, stages: Optional[Iterable[str]] = None) -> List[StageRecord]:
    """Run stages in order (all by default), sharing one context."""
    ctx = RunContext(config)
    return [run_stage(config, stage, ctx) for stage in (stages or STAGES)]


def render_explanations(config: ExperimentConfig, count: int = 4) -> List[Path]:
    """Write heatmaps of the target's explanations for a few attack-test images.

    Raises:
        PrerequisiteError: If the target has not been trained.
    """
    ctx = RunContext(config)
    check_prerequisites(ctx.manifest, "breach")
    target = load_classifier(ctx.manifest.artifact("train-target", "target"))
    indices = ctx.plan.attack_test_indices[:count]
    images = ctx.images(indices)
    classes = predict_batch(target, images).argmax(axis=1)
    written = []
    for kind in config.inversion.explanations:
        maps = explain_batch(target, images, kind, classes)
        for index, grid in zip(indices, maps[:, 0]):
            written.append(render_heatmap(grid, ctx.run_dir / "explanations" / kind / f"{int(index)}.png"))
    for kind in config.inversion.multi_explanations:
        if kind not in MULTI_EXPLANATION_KINDS:
            continue
        stacks = explain_batch(target, images, kind, classes)
        for index, stack in zip(indices, stacks):
            written.append(render_heatmap(stack.sum(axis=0), ctx.run_dir / "explanations" / kind / f"{int(index)}.png"))
    logger.info(f"Wrote {len(written)} heatmaps under {ctx.run_dir / 'explanations'}")
    return written
