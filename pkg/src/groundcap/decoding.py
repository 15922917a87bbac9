"""Task-specific inference: grounding selection, greedy caption generation,
and whole-scene dense-captioning sweeps.

Decoding is greedy and deterministic. Generation starts from [CLS] with the
target box token as the visual cue under the seq2seq mask, appends the argmax
next word, and stops on [SEP] or at the length cap (where the sequence is
closed with [SEP] so the result is always a valid token sequence). [PAD] is
never a decoding candidate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .geometry import AABB, InstanceMask, PointCloud, aabb_from_mask
from .metrics import (
    CaptionedBox,
    DenseCapGroundTruth,
    DenseCapPrediction,
    Detection,
    DetectionGT,
    GroundingPrediction,
    GTObject,
    dedup_boxes,
)
from .model import GroundCapModel, pool_instance_features
from .synth import Scene
from .text import CLS_ID, PAD_ID, SEP_ID, TokenSeq, Vocabulary, decode, encode

__all__ = [
    "DecodeConfig",
    "GroundResult",
    "ground_query",
    "generate_caption",
    "generate_captions_batch",
    "dense_caption_scene",
    "scene_detections",
    "evaluate_grounding",
    "evaluate_captioning",
]


@dataclass(frozen=True)
class DecodeConfig:
    max_len: int = 32
    strategy: str = "greedy"

    def __post_init__(self):
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.strategy != "greedy":
            raise ValueError("only greedy decoding is supported")


@dataclass
class GroundResult:
    box: AABB
    scores: np.ndarray             # (M,) probabilities over proposals
    index: int


def _prepare(model: GroundCapModel, cloud: PointCloud, masks: list[InstanceMask]):
    if not masks:
        raise ValueError("no proposals")
    masks = masks[: model.config.max_boxes]
    feats = torch.as_tensor(pool_instance_features(cloud, masks),
                            dtype=model.dtype, device=model.device).unsqueeze(0)
    valid = torch.ones(1, len(masks), dtype=torch.bool, device=model.device)
    boxes = [aabb_from_mask(cloud, m) for m in masks]
    return masks, feats, valid, boxes


@torch.no_grad()
def ground_query(model: GroundCapModel, cloud: PointCloud, masks: list[InstanceMask],
                 query: TokenSeq) -> GroundResult:
    """Argmax-score proposal for one query; ties go to the lowest index."""
    masks, feats, valid, boxes = _prepare(model, cloud, masks)
    ids = torch.tensor([query.ids], dtype=torch.long, device=model.device)
    real = torch.tensor([[t != PAD_ID for t in query.ids]], dtype=torch.bool,
                        device=model.device)
    out = model.grounding_pass(feats, valid, ids, real)
    scores = out.scores[0].cpu().numpy()
    index = int(np.argmax(scores))  # first maximum -> lowest index on ties
    return GroundResult(box=boxes[index], scores=scores, index=index)


@torch.no_grad()
def generate_captions_batch(model: GroundCapModel, box_feats: torch.Tensor,
                            box_valid: torch.Tensor, target_index: torch.Tensor,
                            max_len: int) -> list[list[int]]:
    """Greedy decoding for a whole batch of (scene, target) pairs at once.

    Each sequence starts at [CLS]; [PAD] is excluded from the argmax; a
    sequence ends on its first [SEP], and any sequence still open at
    max_len - 1 tokens is closed with [SEP].
    """
    B = box_feats.shape[0]
    ids = torch.full((B, 1), CLS_ID, dtype=torch.long, device=box_feats.device)
    alive = torch.ones(B, dtype=torch.bool, device=box_feats.device)
    while ids.shape[1] < max_len - 1 and bool(alive.any()):
        real = ids.ne(PAD_ID)
        logits = model.caption_pass(box_feats, box_valid, target_index, ids, real)
        step = logits[:, ids.shape[1] - 1, :].clone()
        step[:, PAD_ID] = float("-inf")
        nxt = step.argmax(dim=-1)
        nxt = torch.where(alive, nxt, torch.full_like(nxt, PAD_ID))
        ids = torch.cat([ids, nxt.unsqueeze(1)], dim=1)
        alive = alive & nxt.ne(SEP_ID)
    out = []
    for b in range(B):
        row = [t for t in ids[b].tolist() if t != PAD_ID]
        if row[-1] != SEP_ID:
            row.append(SEP_ID)  # close sequences that hit the cap
        out.append(row)
    return out


@torch.no_grad()
def generate_caption(model: GroundCapModel, cloud: PointCloud, masks: list[InstanceMask],
                     target_instance: int, config: DecodeConfig) -> TokenSeq:
    """Greedy caption for one proposal (index into masks)."""
    masks, feats, valid, _ = _prepare(model, cloud, masks)
    if not 0 <= target_instance < len(masks):
        raise ValueError(f"target_instance {target_instance} out of range")
    target = torch.tensor([target_instance], dtype=torch.long, device=model.device)
    ids = generate_captions_batch(model, feats, valid, target, config.max_len)[0]
    return TokenSeq(ids=tuple(ids))


def dense_caption_scene(model: GroundCapModel, cloud: PointCloud,
                        masks: list[InstanceMask], gts: list[AABB],
                        config: DecodeConfig, scene_id: str = "scene",
                        vocab: Vocabulary | None = None) -> DenseCapPrediction:
    """One box per proposal (via its mask AABB), one generated caption per
    box, deduplicated against the GT boxes; confidence is fixed at 1.0 (there
    is no detection score in this stand-in). Captions are decoded words when a
    vocabulary is given, else space-joined token ids."""
    pred, _ = _sweep_scene(model, cloud, masks, gts, config, scene_id, vocab)
    return pred


def scene_detections(model: GroundCapModel, cloud: PointCloud,
                     masks: list[InstanceMask], gts: list[AABB],
                     config: DecodeConfig, scene_id: str = "scene") -> list[Detection]:
    """Detection records over exactly the boxes dense_caption_scene keeps."""
    _, dets = _sweep_scene(model, cloud, masks, gts, config, scene_id, None)
    return dets


def _sweep_scene(model: GroundCapModel, cloud: PointCloud, masks: list[InstanceMask],
                 gts: list[AABB], config: DecodeConfig, scene_id: str,
                 vocab: Vocabulary | None) -> tuple[DenseCapPrediction, list[Detection]]:
    masks, feats, valid, boxes = _prepare(model, cloud, masks)
    B = len(masks)
    feats = feats.expand(B, -1, -1)
    valid = valid.expand(B, -1)
    targets = torch.arange(B, device=model.device)
    id_rows = generate_captions_batch(model, feats, valid, targets, config.max_len)
    keep = dedup_boxes(boxes, gts)
    items, dets = [], []
    for i in keep:
        if vocab is None:
            caption = " ".join(str(t) for t in id_rows[i])
        else:
            # degenerate immediate-[SEP] outputs still need a non-empty record
            caption = decode(vocab, TokenSeq(ids=tuple(id_rows[i]))) or "empty caption"
        items.append(CaptionedBox(box=boxes[i], caption=caption, confidence=1.0))
        dets.append(Detection(scene_id=scene_id, box=boxes[i],
                              semantic_class=masks[i].semantic_class, confidence=1.0))
    return DenseCapPrediction(scene_id=scene_id, items=items), dets


# ---------------------------------------------------------------------------
# evaluation sweeps over scenes


@torch.no_grad()
def evaluate_grounding(model: GroundCapModel, scenes: list[Scene], vocab: Vocabulary,
                       max_len: int = 32) -> list[GroundingPrediction]:
    """Ground every clean description of every scene."""
    preds = []
    for scene in scenes:
        for obj in scene.objects:
            query = encode(vocab, scene.captions[obj.instance_id], max_len=max_len)
            result = ground_query(model, scene.cloud, scene.masks, query)
            preds.append(
                GroundingPrediction(
                    query_id=f"{scene.scene_id}:{obj.instance_id}",
                    scene_id=scene.scene_id,
                    pred_box=result.box,
                    gt_box=obj.box,
                    gt_class=obj.semantic_class,
                )
            )
    return preds


@torch.no_grad()
def evaluate_captioning(
    model: GroundCapModel, scenes: list[Scene], vocab: Vocabulary, config: DecodeConfig,
) -> tuple[list[DenseCapPrediction], list[DenseCapGroundTruth], list[Detection], list[DetectionGT]]:
    """Dense-caption every scene against its clean references.

    Generated id sequences are decoded to words with the given vocabulary;
    detection records reuse exactly the surviving caption boxes.
    """
    preds, gts, dets, det_gts = [], [], [], []
    for scene in scenes:
        gt_boxes = [obj.box for obj in scene.objects]
        pred, scene_dets = _sweep_scene(model, scene.cloud, scene.masks, gt_boxes,
                                        config, scene.scene_id, vocab)
        preds.append(pred)
        dets.extend(scene_dets)
        gts.append(
            DenseCapGroundTruth(
                scene_id=scene.scene_id,
                items=[
                    GTObject(box=obj.box, references=[scene.captions[obj.instance_id]],
                             semantic_class=obj.semantic_class)
                    for obj in scene.objects
                ],
            )
        )
        det_gts.extend(
            DetectionGT(scene_id=scene.scene_id, box=obj.box,
                        semantic_class=obj.semantic_class)
            for obj in scene.objects
        )
    return preds, gts, dets, det_gts
