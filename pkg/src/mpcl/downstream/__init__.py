from .baseline import LateFusion, fit_late_fusion, late_fusion_baseline
from .crossval import CrossvalResult, FoldResult, PipelineConfig, crossval, fit_and_score, fold_accuracies
from .features import extract_batch, extract_features, fuse_concat, write_feature_dump
from .metrics import ClassMetrics, MetricsReport, class_metrics, compute_metrics, summarize_folds
from .probe import Probe, ProbeConfig, predict, train_probe
