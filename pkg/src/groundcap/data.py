"""Turning scenes and synthetic pairs into training samples and batches.

A TrainSample is one (cloud, proposals, text, target) tuple. Clean samples
pair a full scene cloud with each object's noise-free caption; synthetic
samples pair a frustum crop with its noisy caption. Collation pads proposals
and token sequences and precomputes the teacher-forcing split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .geometry import AABB, InstanceMask, PointCloud, aabb_from_mask
from .losses import target_box_index
from .model import pool_instance_features
from .synth import CLASS_NAMES, Scene, SynthPair
from .text import PAD_ID, TokenSeq, Vocabulary, encode, pad_batch, teacher_forcing_pair

__all__ = [
    "TrainSample",
    "Batch",
    "build_shared_vocab",
    "clean_samples",
    "synth_samples",
    "collate",
    "BatchSampler",
]


@dataclass
class TrainSample:
    scene_id: str
    query_id: str
    cloud: PointCloud
    masks: list[InstanceMask]
    boxes: list[AABB]
    box_feats: np.ndarray          # (M, 2*(3+K)) pooled features, precomputed
    query: TokenSeq
    caption: str
    gt_box: AABB
    gt_class: int
    target_index: int              # argmax-IoU proposal


def build_shared_vocab(scenes: list[Scene], pairs: list[SynthPair] | None = None,
                       min_count: int = 1) -> "Vocabulary":
    """One vocabulary over clean captions and (optionally) synthetic captions,
    so checkpoints transfer across stages."""
    from .text import build_vocab

    corpus = [cap for s in scenes for cap in s.captions.values()]
    if pairs:
        corpus += [p.caption for p in pairs]
    return build_vocab(corpus, min_count=min_count)


def clean_samples(scenes: list[Scene], vocab: Vocabulary, max_len: int = 32) -> list[TrainSample]:
    """One sample per (scene, object): full cloud, all masks as proposals,
    the object's clean caption as both query and caption target."""
    samples = []
    for scene in scenes:
        feats = pool_instance_features(scene.cloud, scene.masks)
        boxes = [aabb_from_mask(scene.cloud, m) for m in scene.masks]
        for i, obj in enumerate(scene.objects):
            caption = scene.captions[obj.instance_id]
            samples.append(
                TrainSample(
                    scene_id=scene.scene_id,
                    query_id=f"{scene.scene_id}:{obj.instance_id}",
                    cloud=scene.cloud,
                    masks=scene.masks,
                    boxes=boxes,
                    box_feats=feats,
                    query=encode(vocab, caption, max_len=max_len),
                    caption=caption,
                    gt_box=obj.box,
                    gt_class=obj.class_index,
                    target_index=target_box_index(boxes, obj.box),
                )
            )
    return samples


def synth_samples(pairs: list[SynthPair], vocab: Vocabulary, max_len: int = 32) -> list[TrainSample]:
    """One sample per emitted pair: the frustum crop with its visible-instance
    masks as proposals and the (possibly noisy) caption as supervision."""
    samples = []
    for pair in pairs:
        target = next(
            (i for i, m in enumerate(pair.crop_masks) if m.instance_id == pair.instance_id),
            None,
        )
        if target is None:
            continue  # captioned object not visible in the crop; nothing to supervise
        feats = pool_instance_features(pair.crop, pair.crop_masks)
        boxes = [aabb_from_mask(pair.crop, m) for m in pair.crop_masks]
        samples.append(
            TrainSample(
                scene_id=pair.scene_id,
                query_id=f"{pair.scene_id}:f{pair.frame_index}:{pair.instance_id}",
                cloud=pair.crop,
                masks=pair.crop_masks,
                boxes=boxes,
                box_feats=feats,
                query=encode(vocab, pair.caption, max_len=max_len),
                caption=pair.caption,
                gt_box=boxes[target],
                gt_class=CLASS_NAMES.index(pair.crop_masks[target].semantic_class),
                target_index=target,
            )
        )
    return samples


@dataclass
class Batch:
    box_feats: torch.Tensor        # (B, M_max, F)
    box_valid: torch.Tensor        # (B, M_max) bool
    target_index: torch.Tensor     # (B,)
    gt_class: torch.Tensor         # (B,)
    query_ids: torch.Tensor        # (B, L) full padded query
    query_real: torch.Tensor       # (B, L) bool
    input_ids: torch.Tensor        # (B, T) teacher-forcing inputs
    input_real: torch.Tensor       # (B, T) bool
    target_ids: torch.Tensor       # (B, T) teacher-forcing targets
    target_real: torch.Tensor      # (B, T) bool


def collate(samples: list[TrainSample], dtype: torch.dtype = torch.float32,
            device: torch.device | str = "cpu") -> Batch:
    if not samples:
        raise ValueError("empty batch")
    m_max = max(len(s.masks) for s in samples)
    feat_dim = samples[0].box_feats.shape[1]
    feats = np.zeros((len(samples), m_max, feat_dim))
    valid = np.zeros((len(samples), m_max), dtype=bool)
    for i, s in enumerate(samples):
        feats[i, : len(s.masks)] = s.box_feats
        valid[i, : len(s.masks)] = True

    query_ids, query_real = pad_batch([s.query for s in samples])
    tf_pairs = [teacher_forcing_pair(s.query) for s in samples]
    t_max = max(len(p.input_ids) for p in tf_pairs)
    input_ids = np.full((len(samples), t_max), PAD_ID, dtype=np.int64)
    target_ids = np.full((len(samples), t_max), PAD_ID, dtype=np.int64)
    in_real = np.zeros((len(samples), t_max), dtype=bool)
    for i, p in enumerate(tf_pairs):
        n = len(p.input_ids)
        input_ids[i, :n] = p.input_ids
        target_ids[i, :n] = p.target_ids
        in_real[i, :n] = True

    as_t = lambda a, dt: torch.as_tensor(a, dtype=dt, device=device)
    return Batch(
        box_feats=as_t(feats, dtype),
        box_valid=as_t(valid, torch.bool),
        target_index=as_t(np.array([s.target_index for s in samples]), torch.long),
        gt_class=as_t(np.array([s.gt_class for s in samples]), torch.long),
        query_ids=as_t(query_ids, torch.long),
        query_real=as_t(query_real, torch.bool),
        input_ids=as_t(input_ids, torch.long),
        input_real=as_t(in_real, torch.bool),
        target_ids=as_t(target_ids, torch.long),
        target_real=as_t(in_real, torch.bool),
    )


class BatchSampler:
    """Deterministic with-replacement batch sampler."""

    def __init__(self, n_samples: int, batch_size: int, seed: int):
        if n_samples < 1 or batch_size < 1:
            raise ValueError("need at least one sample and a positive batch size")
        self.n_samples = n_samples
        self.batch_size = batch_size
        self._rng = np.random.default_rng([seed, n_samples])

    def next_indices(self) -> np.ndarray:
        return self._rng.integers(self.n_samples, size=self.batch_size)
