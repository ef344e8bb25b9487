from .augment import temporal_window
from .folds import FoldPlan, check_group_disjoint, make_folds
from .io import (
    Manifest,
    ModalitySpec,
    Sample,
    SampleRecord,
    StreamRef,
    UnlabeledSample,
    export_csv,
    load_manifest,
    parse_manifest,
    read_feature_file,
    read_feature_header,
    write_feature_file,
    write_manifest,
)
from .synth import SyntheticData, SyntheticSpec, generate_samples, synth_generate

__all__ = [
    "FoldPlan", "Manifest", "ModalitySpec", "Sample", "SampleRecord", "StreamRef",
    "SyntheticData", "SyntheticSpec", "UnlabeledSample", "check_group_disjoint",
    "export_csv", "generate_samples", "load_manifest", "make_folds", "parse_manifest",
    "read_feature_file", "read_feature_header", "synth_generate", "temporal_window",
    "write_feature_file", "write_manifest",
]
