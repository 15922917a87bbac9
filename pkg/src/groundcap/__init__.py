"""groundcap: grounded 3D language understanding on point clouds.

A single transformer stack that handles both referring-expression grounding
(pick the described object out of a set of proposals) and dense captioning
(describe each proposal), plus a procedural data pipeline for pre-training
and the evaluation protocol used to score both tasks.
"""

__version__ = "0.1.0"

from .geometry import (
    AABB,
    CameraPose,
    InstanceMask,
    PointCloud,
    aabb_from_mask,
    dominant_objects,
    frustum_crop,
    frustum_mask,
    iou,
)
from .text import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    TokenSeq,
    Vocabulary,
    build_vocab,
    decode,
    encode,
    pad_batch,
    teacher_forcing_pair,
    tokenize,
)
from .model import (
    GroundCapModel,
    ModelConfig,
    build_model,
    causal_mask,
    fusion_mask,
    pool_instance_features,
)
from .losses import (
    STAGES,
    LossBundle,
    caption_loss,
    class_loss,
    compose_loss,
    grounding_loss,
    grounding_nll,
    target_box_index,
)
from .synth import (
    CLASS_NAMES,
    COLOR_NAMES,
    SIZE_NAMES,
    PipelineResult,
    Scene,
    SynthPair,
    dataset_stats,
    generate_scene,
    mock_similarity,
    orbit_cameras,
    render_frame,
    synth_pipeline,
    template_captioner,
)
from .metrics import (
    CaptionedBox,
    DenseCapGroundTruth,
    DenseCapPrediction,
    Detection,
    DetectionGT,
    GTObject,
    GroundingPrediction,
    MetricReport,
    acc_at_kiou,
    caption_prf,
    dedup_boxes,
    f1_score,
    map_at_k,
    sentence_metric,
)
from .training import TrainConfig, joint_step, load_checkpoint, run_stage, save_checkpoint
from .decoding import DecodeConfig, dense_caption_scene, generate_caption, ground_query

__all__ = [
    "AABB",
    "CameraPose",
    "InstanceMask",
    "PointCloud",
    "aabb_from_mask",
    "dominant_objects",
    "frustum_crop",
    "frustum_mask",
    "iou",
    "CLS_ID",
    "PAD_ID",
    "SEP_ID",
    "UNK_ID",
    "TokenSeq",
    "Vocabulary",
    "build_vocab",
    "decode",
    "encode",
    "pad_batch",
    "teacher_forcing_pair",
    "tokenize",
    "GroundCapModel",
    "ModelConfig",
    "build_model",
    "causal_mask",
    "fusion_mask",
    "pool_instance_features",
    "STAGES",
    "LossBundle",
    "caption_loss",
    "class_loss",
    "compose_loss",
    "grounding_loss",
    "grounding_nll",
    "target_box_index",
    "CLASS_NAMES",
    "COLOR_NAMES",
    "SIZE_NAMES",
    "PipelineResult",
    "Scene",
    "SynthPair",
    "dataset_stats",
    "generate_scene",
    "mock_similarity",
    "orbit_cameras",
    "render_frame",
    "synth_pipeline",
    "template_captioner",
    "CaptionedBox",
    "DenseCapGroundTruth",
    "DenseCapPrediction",
    "Detection",
    "DetectionGT",
    "GTObject",
    "GroundingPrediction",
    "MetricReport",
    "acc_at_kiou",
    "caption_prf",
    "dedup_boxes",
    "f1_score",
    "map_at_k",
    "sentence_metric",
    "TrainConfig",
    "joint_step",
    "load_checkpoint",
    "run_stage",
    "save_checkpoint",
    "DecodeConfig",
    "dense_caption_scene",
    "generate_caption",
    "ground_query",
]
