"""
Semi-Supervised Service.
Two-phase evaluation of a pretrained network with few labels:

  frozen    train only a softmax head on the top-layer probabilities
  finetune  start from the frozen head and backpropagate through every layer
            at a reduced learning rate
  baseline  (optional) the same layer sizes trained from random weights with
            labels only

Each run draws its own seeded label subset; every (run, phase) appends one
metrics line, and the pandas summary of mean/std test error is appended as
`summary …` lines so the log stands on its own.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from drbn.config.settings import semisup_settings
from drbn.core.classifier import (
    HeadConfig,
    SemisupRecord,
    error_rate,
    evaluate,
    extract_features,
    fine_tune,
    plain_fc_baseline,
    train_head,
)
from drbn.core.errors import ConfigError, DrbnError
from drbn.core.idx_reader import sample_label_subset
from drbn.services.dataset_service import load_dataset
from drbn.storage.model_store import load
from drbn.utils.file_utils import append_line, ensure_dir
from drbn.utils.logger import logger
from drbn.utils.validators import RunConfig

PHASES = ("frozen", "finetune")
METRICS_FILE = "semisup.log"


@dataclass
class SemisupResult:
    success: bool
    message: str = ""
    records: list[SemisupRecord] = field(default_factory=list)
    summary: Optional[pd.DataFrame] = None
    metrics_path: Optional[Path] = None


def summarize(records: Sequence[SemisupRecord]) -> pd.DataFrame:
    """Mean, std and run count of test error per (labels_used, model, phase)."""
    frame = pd.DataFrame([r.__dict__ for r in records])
    if frame.empty:
        return frame
    summary = (
        frame.groupby(["labels_used", "model", "phase"], sort=True)["test_error"]
        .agg(["mean", "std", "count"])
        .reset_index()
    )
    summary["std"] = summary["std"].fillna(0.0)
    return summary


def summary_lines(summary: pd.DataFrame) -> list[str]:
    """One `summary labels_used=… model=… phase=… runs=… mean_test_error=… std_test_error=…` line per row."""
    return [
        f"summary labels_used={row['labels_used']} model={row['model']} phase={row['phase']} "
        f"runs={row['count']} mean_test_error={row['mean']:.6f} std_test_error={row['std']:.6f}"
        for row in summary.to_dict("records")
    ]


def _run_semisup(
    run: RunConfig,
    model_path: Path,
    label_budgets: Sequence[int],
    n_runs: int,
    phase: str,
    head_config: Optional[HeadConfig],
    finetune_config: Optional[HeadConfig],
    baseline: bool,
    model_name: Optional[str],
    validation_size: Optional[int],
) -> SemisupResult:
    if phase not in PHASES:
        raise ConfigError(f"--phase must be one of {', '.join(PHASES)}, got '{phase}'")
    if any(n < 1 for n in label_budgets):
        raise ConfigError(f"label budgets must be ≥ 1, got {list(label_budgets)}")
    if n_runs < 1:
        raise ConfigError(f"--runs must be ≥ 1, got {n_runs}")

    head_config = head_config or HeadConfig()
    finetune_config = finetune_config or head_config
    base_seed = run.seed or 0
    name = model_name or Path(model_path).stem

    net = load(model_path)
    bundle = load_dataset(run, n_validation=validation_size)
    train, validation, test = bundle.train, bundle.validation, bundle.test
    if train.labels is None or test is None or test.labels is None:
        raise ConfigError("semisup needs a labeled dataset with a test split (e.g. --data mnist)")
    if max(label_budgets) > len(train):
        raise ConfigError(f"label budget {max(label_budgets)} exceeds {len(train)} training examples")
    if validation is None:
        logger.warning("No validation split; head epochs are selected on the labeled subset")

    out_dir = ensure_dir(run.output_dir)
    metrics_path = out_dir / METRICS_FILE
    val_pair = (validation.images, validation.labels) if validation is not None else None
    val_features = (extract_features(validation.images, net), validation.labels) if validation is not None else None
    test_features = extract_features(test.images, net)

    records: list[SemisupRecord] = []

    def emit(n_labels: int, model: str, phase_name: str, seed: int, error: float) -> None:
        record = SemisupRecord(labels_used=n_labels, model=model, phase=phase_name, seed=seed, test_error=error)
        records.append(record)
        append_line(metrics_path, record.to_line())
        logger.info(record.to_line())

    for n_labels in label_budgets:
        for r in range(n_runs):
            seed = base_seed + r
            labeled = sample_label_subset(train, n_labels, seed)
            features = extract_features(labeled.images, net)

            frozen = train_head(
                features, labeled.labels, head_config.model_copy(update={"seed": seed}), validation=val_features
            )
            emit(n_labels, name, "frozen", seed, error_rate(frozen.head, test_features, test.labels))

            if phase == "finetune":
                tuned = fine_tune(
                    net, frozen.head, labeled.images, labeled.labels,
                    finetune_config.model_copy(update={"seed": seed}), validation=val_pair,
                )
                emit(n_labels, name, "finetune", seed, evaluate(tuned.net, tuned.head, test.images, test.labels))

            if baseline:
                plain = plain_fc_baseline(
                    labeled.images, labeled.labels, net.spec,
                    head_config.model_copy(update={"seed": seed}),
                    validation=val_pair, test=(test.images, test.labels),
                )
                emit(n_labels, "plain_fc", "supervised", seed, plain.metrics.test_error)
        logger.info(f"Finished {n_runs} runs at {n_labels} labels")

    summary = summarize(records)
    for line in summary_lines(summary):
        append_line(metrics_path, line)
    return SemisupResult(
        success=True,
        message=f"{len(records)} records written to {metrics_path}",
        records=records,
        summary=summary,
        metrics_path=metrics_path,
    )


def run_semisup(
    run: RunConfig,
    model_path: Path,
    label_budgets: Sequence[int],
    n_runs: int = semisup_settings.RUNS,
    phase: str = "frozen",
    head_config: Optional[HeadConfig] = None,
    finetune_config: Optional[HeadConfig] = None,
    baseline: bool = False,
    model_name: Optional[str] = None,
    validation_size: Optional[int] = None,
) -> SemisupResult:
    """
    Frozen head, optional fine-tuning and optional baseline for every
    (budget, run). Configuration errors propagate; data, model-file and I/O
    failures come back as success=False.
    """
    try:
        return _run_semisup(
            run, model_path, label_budgets, n_runs, phase, head_config, finetune_config,
            baseline, model_name, validation_size,
        )
    except ConfigError:
        raise
    except (DrbnError, OSError) as exc:
        logger.error(f"Semi-supervised evaluation failed: {exc}")
        return SemisupResult(success=False, message=str(exc))
