"""Task losses and stage-specific compositions.

Three ingredients: a grounding cross-entropy against the argmax-IoU proposal,
a query-class cross-entropy on the [CLS] encoding, and a caption
cross-entropy averaged per sequence over non-pad teacher-forcing positions.
``compose_loss`` sums the active subset for each training stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .geometry import AABB, iou

__all__ = [
    "LossBundle",
    "STAGES",
    "target_box_index",
    "grounding_nll",
    "grounding_loss",
    "class_loss",
    "caption_loss",
    "stage_terms",
    "compose_loss",
]

STAGES = ("pretrain", "joint", "finetune_grounding", "finetune_captioning")


@dataclass(frozen=True)
class LossBundle:
    """Per-term loss values for one step; terms a stage does not use are None.

    l_pg is the proposal-generation (detection) term, fixed at 0 here: box
    proposals come from instance masks, not a trained detector.
    """

    stage: str
    total: torch.Tensor
    l_g: torch.Tensor | None = None
    l_cls: torch.Tensor | None = None
    l_c: torch.Tensor | None = None
    l_pg: float = 0.0

    def detached(self) -> dict:
        """Plain floats for logging."""
        pick = lambda t: float(t.detach()) if t is not None else None
        return {
            "stage": self.stage,
            "total": float(self.total.detach()),
            "l_g": pick(self.l_g),
            "l_cls": pick(self.l_cls),
            "l_c": pick(self.l_c),
            "l_pg": self.l_pg,
        }


def target_box_index(proposals: list[AABB], gt_box: AABB) -> int:
    """Index of the proposal with highest IoU against the ground-truth box;
    ties resolve to the lowest index."""
    if not proposals:
        raise ValueError("no proposals")
    best_i, best_v = 0, -1.0
    for i, box in enumerate(proposals):
        v = iou(box, gt_box)
        if v > best_v:
            best_i, best_v = i, v
    return best_i


def grounding_nll(scores: torch.Tensor, target: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Cross-entropy against target proposal indices, taking the head's
    probabilities directly: mean over the batch of -log p[target].

    A probability of exactly 1 on the target yields a loss of 0.
    """
    if scores.dim() == 1:
        scores = scores.unsqueeze(0)
        target = target.reshape(1)
    picked = scores.gather(1, target.unsqueeze(1)).squeeze(1)
    return -(picked.clamp_min(eps)).log().mean()


def grounding_loss(scores: torch.Tensor, proposal_boxes: list[AABB], gt_box: AABB) -> torch.Tensor:
    """Cross-entropy of one query's score distribution against the proposal
    with highest IoU to the GT box (ties to the lowest index)."""
    if scores.dim() != 1 or scores.shape[0] != len(proposal_boxes):
        raise ValueError("scores must be one distribution over the proposals")
    target = torch.tensor(target_box_index(proposal_boxes, gt_box), device=scores.device)
    return grounding_nll(scores, target)


def class_loss(class_logits: torch.Tensor, target_class: torch.Tensor) -> torch.Tensor:
    """Cross-entropy on the semantic class of the query's subject."""
    if class_logits.dim() == 1:
        class_logits = class_logits.unsqueeze(0)
        target_class = target_class.reshape(1)
    return F.cross_entropy(class_logits, target_class)


def caption_loss(logits: torch.Tensor, targets: torch.Tensor, real: torch.Tensor) -> torch.Tensor:
    """Teacher-forcing cross-entropy: -log softmax(logits)[target] averaged
    over each sequence's non-pad positions, then averaged over the batch.

    logits (B, T, V) or (T, V); targets (B, T) or (T,); real marks positions
    that contribute (pads excluded).
    """
    if logits.dim() == 2:
        logits, targets, real = logits.unsqueeze(0), targets.unsqueeze(0), real.unsqueeze(0)
    logp = logits.log_softmax(dim=-1)
    picked = logp.gather(2, targets.unsqueeze(-1).clamp_min(0)).squeeze(-1)  # (B, T)
    w = real.to(picked.dtype)
    counts = w.sum(dim=1)
    if (counts == 0).any():
        raise ValueError("a sequence has no real teacher-forcing positions")
    per_seq = -(picked * w).sum(dim=1) / counts
    return per_seq.mean()


def stage_terms(stage: str) -> tuple[str, ...]:
    """Which loss terms a stage's total sums (the proposal term is always 0)."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    if stage == "finetune_grounding":
        return ("l_g", "l_cls")
    if stage == "finetune_captioning":
        return ("l_c",)
    return ("l_g", "l_cls", "l_c")  # joint and pretrain


def compose_loss(stage: str, l_g: torch.Tensor | None = None,
                 l_cls: torch.Tensor | None = None,
                 l_c: torch.Tensor | None = None) -> LossBundle:
    """Stage total: grounding + class terms for grounding fine-tuning, the
    caption term for caption fine-tuning, and all three for joint training
    and pre-training. Raises ValueError when a required term is missing.
    """
    provided = {"l_g": l_g, "l_cls": l_cls, "l_c": l_c}
    parts = []
    for name in stage_terms(stage):
        term = provided[name]
        if term is None:
            raise ValueError(f"stage {stage!r} requires the {name} term")
        parts.append(term)
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return LossBundle(stage=stage, total=total, l_g=l_g, l_cls=l_cls, l_c=l_c)
