"""Speaker segmentation toolkit: permutation-invariant training, post-processing,
overlap-aware resegmentation, evaluation and augmentation."""

__version__ = "0.1.0"

from .annotation import (
    Annotation,
    BinaryFrames,
    FrameGrid,
    ParseError,
    Segment,
    Timeline,
    discretize,
    overlap_timeline,
    parse_rttm,
    parse_uem,
    to_annotation,
    write_rttm,
    write_uem,
)
from .augment import AudioChunk, LabeledChunk, add_noise, mix_chunks, sample_training_batch
from .config import PipelineConfig, format_pipeline_config, parse_pipeline_config
from .metrics import (
    DetectionReport,
    DevItem,
    DiarizationReport,
    F1Report,
    ParamSpace,
    TuneResult,
    der,
    detection_error,
    precision_recall_f1,
    tune,
)
from .pit import Activations, Permutation, bce, hungarian, permute, pit_loss
from .postprocess import (
    PostProcessingParams,
    binarize,
    binarize_scores,
    osd_scores,
    read_activations_csv,
    vad_scores,
    write_activations_csv,
)
from .reseg import (
    SlidingWindowConfig,
    heuristic_overlap_assign,
    resegment,
    resegmentation_scores,
)
from .synth import SynthConfig, generate_reference, oracle_activations, scramble_windows

__all__ = [
    "Annotation",
    "BinaryFrames",
    "FrameGrid",
    "ParseError",
    "Segment",
    "Timeline",
    "discretize",
    "overlap_timeline",
    "parse_rttm",
    "parse_uem",
    "to_annotation",
    "write_rttm",
    "write_uem",
    "AudioChunk",
    "LabeledChunk",
    "add_noise",
    "mix_chunks",
    "sample_training_batch",
    "PipelineConfig",
    "format_pipeline_config",
    "parse_pipeline_config",
    "DetectionReport",
    "DevItem",
    "DiarizationReport",
    "F1Report",
    "ParamSpace",
    "TuneResult",
    "der",
    "detection_error",
    "precision_recall_f1",
    "tune",
    "Activations",
    "Permutation",
    "bce",
    "hungarian",
    "permute",
    "pit_loss",
    "PostProcessingParams",
    "binarize",
    "binarize_scores",
    "osd_scores",
    "read_activations_csv",
    "vad_scores",
    "write_activations_csv",
    "SlidingWindowConfig",
    "heuristic_overlap_assign",
    "resegment",
    "resegmentation_scores",
    "SynthConfig",
    "generate_reference",
    "oracle_activations",
    "scramble_windows",
]
