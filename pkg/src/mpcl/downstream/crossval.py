"""k-fold evaluation of the full pipeline: pretrain, freeze, probe, score."""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..contrastive import LossConfig
from ..data.folds import FoldPlan
from ..data.io import Manifest
from ..encoders import EncoderConfig, ProjectionConfig
from ..exceptions import DataError, MPCLError
from ..numcore import derive_seed
from ..train import TrainConfig, pretrain
from .features import extract_batch, fuse_concat
from .metrics import MetricsReport, compute_metrics, summarize_folds
from .probe import ProbeConfig, predict, train_probe


@dataclass
class PipelineConfig:
    """Everything one pretrain-then-probe run needs.

    ``encoder`` is a template; its ``input_dim`` is replaced per modality by
    the dimension declared in the manifest.
    """

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    projection: ProjectionConfig | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    pretrain: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def encoders_for(self, modalities) -> dict:
        return {m.name: replace(self.encoder, input_dim=m.dim) for m in modalities}

    def projection_config(self) -> ProjectionConfig:
        return self.projection or ProjectionConfig(in_dim=self.encoder.embed_dim)

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Copy whose stages draw from sub-seeds of ``seed``."""
        return replace(self,
                       pretrain=replace(self.pretrain, seed=derive_seed(seed, "pretrain")),
                       probe=replace(self.probe, train=replace(self.probe.train, seed=derive_seed(seed, "probe"))))


@dataclass
class FoldResult:
    fold: int
    report: MetricsReport
    n_train: int
    n_test: int
    best_epoch: int


@dataclass
class CrossvalResult:
    folds: list
    mean: dict
    std: dict

    def to_dict(self) -> dict:
        return {
            "folds": [dict(f.report.to_dict(), fold=f.fold, n_train=f.n_train, n_test=f.n_test,
                           best_epoch=f.best_epoch) for f in self.folds],
            "mean": self.mean,
            "std": self.std,
        }


def _tag(exc: MPCLError, fold: int) -> MPCLError:
    exc.fold = fold
    if exc.args:
        exc.args = (f"fold {fold}: {exc.args[0]}",) + exc.args[1:]
    return exc


def fit_and_score(manifest: Manifest, train_ids, test_ids, config: PipelineConfig):
    """One fold: pretrain on unlabeled train streams, probe on train labels,
    report on the test ids. Returns ``(report, pretrain_result)``."""
    train = manifest.load_samples(train_ids)
    test = manifest.load_samples(test_ids)
    # pretrain() strips labels before touching the samples
    result = pretrain(train, config.encoders_for(manifest.modalities),
                      config.loss, config.pretrain, config.projection_config(), timing=False)
    names = manifest.modality_names
    f_train = fuse_concat(extract_batch(result.model, train, names), order=names)
    f_test = fuse_concat(extract_batch(result.model, test, names), order=names)
    y_train = manifest.label_array(train_ids)
    y_test = manifest.label_array(test_ids)
    probe = train_probe(f_train, y_train, config.probe, n_classes=len(manifest.classes))
    report = compute_metrics(predict(probe, f_test), y_test, manifest.task, manifest.classes)
    return report, result


def _run_fold(args):
    manifest, fold, train_ids, test_ids, config = args
    try:
        report, res = fit_and_score(manifest, train_ids, test_ids, config)
    except MPCLError as exc:
        raise _tag(exc, fold)
    return FoldResult(fold, report, len(train_ids), len(test_ids), res.best_epoch)


def crossval(manifest: Manifest, plan: FoldPlan, config: PipelineConfig | None = None,
             seed: int = 0, fold_order=None, workers: int = 1) -> CrossvalResult:
    """Run every fold of ``plan``; per-fold seeds derive from ``seed`` and the
    fold index, so results depend on neither ``fold_order`` nor ``workers``."""
    config = config or PipelineConfig()
    if set(plan.assignment) != set(manifest.sample_ids):
        raise DataError("fold plan and manifest list different samples")
    order = list(range(plan.k)) if fold_order is None else list(fold_order)
    if sorted(order) != list(range(plan.k)):
        raise DataError(f"fold_order must be a permutation of 0..{plan.k - 1}")
    groups = {r.id: r.group for r in manifest.samples}
    if plan.mode == "actor_split":
        # the patience split must not leak actors either
        config = replace(config, pretrain=replace(config.pretrain, val_by_group=True))
    jobs = []
    for fold in order:
        # manifest order, whatever order the plan's dict happens to have
        test_ids = [s for s in manifest.sample_ids if plan.assignment[s] == fold]
        train_ids = [s for s in manifest.sample_ids if plan.assignment[s] != fold]
        if plan.mode == "actor_split":
            overlap = {groups[s] for s in train_ids} & {groups[s] for s in test_ids}
            if overlap:
                raise DataError(f"fold {fold}: actors {sorted(overlap)} in both train and test")
        if not test_ids or len(train_ids) < 2:
            raise DataError(f"fold {fold}: {len(train_ids)} train / {len(test_ids)} test samples")
        jobs.append((manifest, fold, train_ids, test_ids, config.with_seed(derive_seed(seed, "fold", fold))))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_fold, jobs))
    else:
        done = [_run_fold(job) for job in jobs]
    folds = sorted(done, key=lambda f: f.fold)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mean, std = summarize_folds([f.report for f in folds])
    return CrossvalResult(folds, mean, std)


def fold_accuracies(result: CrossvalResult) -> np.ndarray:
    return np.array([f.report.accuracy for f in result.folds], dtype=np.float64)
