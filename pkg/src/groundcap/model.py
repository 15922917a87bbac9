"""Unified grounding/captioning architecture stem.

An instance encoder turns masked point-feature statistics into box tokens, a
causal text encoder (with the visual cue added to every position) produces
text tokens, and a shared fusion transformer enriches the concatenated
sequence under one of two attention-mask modes:

* ``bidirectional`` -- every token attends every non-pad token (grounding).
* ``seq2seq`` -- box tokens attend box tokens only; text tokens attend all
  box tokens and earlier text tokens (captioning).

Box tokens carry no positional encoding, so fusion outputs and grounding
scores are equivariant under box permutations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .geometry import AABB, InstanceMask, PointCloud, aabb_from_mask
from .text import TokenSeq

__all__ = [
    "ModelConfig",
    "BoxTokenSeq",
    "TextTokenSeq",
    "AttentionMask",
    "FusedSeq",
    "GroundingOutput",
    "pool_instance_features",
    "causal_mask",
    "fusion_mask",
    "GroundCapModel",
    "build_model",
]

MASK_MODES = ("bidirectional", "seq2seq")


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 32
    n_heads: int = 4
    n_fusion_layers: int = 2
    n_text_layers: int = 1
    vocab_size: int = 64
    max_boxes: int = 16
    max_len: int = 32
    n_semantic_classes: int = 8
    n_aux_channels: int = 6
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        counts = (
            self.d_model,
            self.n_heads,
            self.n_fusion_layers,
            self.n_text_layers,
            self.vocab_size,
            self.max_boxes,
            self.max_len,
            self.n_semantic_classes,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all model dimensions and counts must be >= 1")
        if self.n_aux_channels < 0:
            raise ValueError("n_aux_channels must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def point_feature_dim(self) -> int:
        return 3 + self.n_aux_channels

    @property
    def pooled_feature_dim(self) -> int:
        # mean and max pooled point features, concatenated
        return 2 * self.point_feature_dim


@dataclass
class BoxTokenSeq:
    """M box tokens with their boxes and a validity mask."""

    tokens: torch.Tensor           # (M, d_model)
    boxes: list[AABB]
    valid: torch.Tensor            # (M,) bool


@dataclass
class TextTokenSeq:
    tokens: torch.Tensor           # (L, d_model)
    real: torch.Tensor             # (L,) bool, False at pads


@dataclass
class AttentionMask:
    """Row i marks the positions token i may attend; pad columns are never
    allowed. mode is "bidirectional" or "seq2seq"."""

    allowed: torch.Tensor          # (M+L, M+L) bool
    mode: str


@dataclass
class FusedSeq:
    fused_box: torch.Tensor        # (M, d_model)
    fused_text: torch.Tensor       # (L, d_model)


@dataclass
class GroundingOutput:
    scores: torch.Tensor           # (B, M) probabilities, pads exactly 0
    score_logits: torch.Tensor     # (B, M), -inf at pads
    class_logits: torch.Tensor     # (B, n_semantic_classes)
    fused_box: torch.Tensor        # (B, M, d_model)
    fused_text: torch.Tensor       # (B, L, d_model)


def pool_instance_features(cloud: PointCloud, masks: list[InstanceMask]) -> np.ndarray:
    """Per-instance pooled point features: mean and max of (xyz + aux) over the
    masked points, concatenated. Shape (M, 2 * (3 + K))."""
    feats = cloud.features()
    rows = []
    for mask in masks:
        sub = feats[mask.point_indices]
        rows.append(np.concatenate([sub.mean(axis=0), sub.max(axis=0)]))
    return np.stack(rows)


def causal_mask(real: torch.Tensor) -> torch.Tensor:
    """(B, L) real-token mask -> (B, L, L) allowed mask where position i
    attends non-pad positions <= i."""
    L = real.shape[-1]
    tri = torch.tril(torch.ones(L, L, dtype=torch.bool, device=real.device))
    return tri.unsqueeze(0) & real.unsqueeze(1)


def fusion_mask(mode: str, box_valid: torch.Tensor, text_real: torch.Tensor) -> torch.Tensor:
    """Batched (B, M+L, M+L) allowed mask for the fusion module.

    bidirectional: all rows attend all non-pad columns. seq2seq: box rows
    attend valid box columns only; text rows attend valid box columns and
    non-pad text columns at positions <= their own.
    """
    if mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mode!r}")
    B, M = box_valid.shape
    L = text_real.shape[1]
    key_ok = torch.cat([box_valid, text_real], dim=1)            # (B, S)
    if mode == "bidirectional":
        return key_ok.unsqueeze(1).expand(B, M + L, M + L)
    allowed = torch.zeros(B, M + L, M + L, dtype=torch.bool, device=box_valid.device)
    allowed[:, :M, :M] = box_valid.unsqueeze(1)                  # box -> box
    allowed[:, M:, :M] = box_valid.unsqueeze(1)                  # text -> box
    allowed[:, M:, M:] = causal_mask(text_real)                  # text -> earlier text
    return allowed


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.attn_drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        # x: (B, S, D); allowed: (B, S, S) with >= 1 allowed column per row
        B, S, _ = x.shape
        qkv = self.qkv(x).view(B, S, 3, self.n_heads, self.d_head)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))   # (B, H, S, d_head)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~allowed.unsqueeze(1), float("-inf"))
        weights = self.attn_drop(scores.softmax(dim=-1))
        out = (weights @ v).transpose(1, 2).reshape(B, S, -1)
        return self.proj(out)


class TransformerLayer(nn.Module):
    """Pre-norm self-attention block: residual attention then residual MLP."""

    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadSelfAttention(d_model, n_heads, dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 4 * d_model),
            nn.GELU(),
            nn.Linear(4 * d_model, d_model),
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        x = x + self.drop(self.attn(self.norm1(x), allowed))
        x = x + self.drop(self.mlp(self.norm2(x)))
        return x


class GroundCapModel(nn.Module):
    """Instance encoder + causal text encoder + fusion stack + three heads."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.instance_mlp = nn.Sequential(
            nn.Linear(config.pooled_feature_dim, d),
            nn.GELU(),
            nn.Linear(d, d),
        )
        self.word_emb = nn.Embedding(config.vocab_size, d)
        self.pos_emb = nn.Embedding(config.max_len, d)
        self.emb_drop = nn.Dropout(config.dropout)
        self.text_layers = nn.ModuleList(
            TransformerLayer(d, config.n_heads, config.dropout)
            for _ in range(config.n_text_layers)
        )
        self.text_norm = nn.LayerNorm(d)
        self.fusion_layers = nn.ModuleList(
            TransformerLayer(d, config.n_heads, config.dropout)
            for _ in range(config.n_fusion_layers)
        )
        self.fusion_norm = nn.LayerNorm(d)
        self.ground_proj = nn.Linear(d, 1, bias=False)
        self.caption_proj = nn.Linear(d, config.vocab_size)
        self.class_mlp = nn.Sequential(
            nn.Linear(d, d),
            nn.GELU(),
            nn.Linear(d, config.n_semantic_classes),
        )

    @property
    def dtype(self) -> torch.dtype:
        return self.ground_proj.weight.dtype

    @property
    def device(self) -> torch.device:
        return self.ground_proj.weight.device

    def backbone_parameters(self):
        """Instance-encoder parameters (the detector stand-in's group)."""
        return list(self.instance_mlp.parameters())

    def rest_parameters(self):
        backbone = {id(p) for p in self.instance_mlp.parameters()}
        return [p for p in self.parameters() if id(p) not in backbone]

    # ---- batched internals -------------------------------------------------

    def _text_hidden(self, ids: torch.Tensor, real: torch.Tensor, cue: torch.Tensor) -> torch.Tensor:
        B, L = ids.shape
        if L > self.config.max_len:
            raise ValueError(f"sequence length {L} exceeds max_len {self.config.max_len}")
        pos = torch.arange(L, device=ids.device)
        h = self.word_emb(ids) + self.pos_emb(pos).unsqueeze(0) + cue.unsqueeze(1)
        h = self.emb_drop(h)
        allowed = causal_mask(real)
        for layer in self.text_layers:
            h = layer(h, allowed)
        return self.text_norm(h)

    def _fuse(self, box_tokens: torch.Tensor, text_tokens: torch.Tensor,
              allowed: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        M = box_tokens.shape[1]
        x = torch.cat([box_tokens, text_tokens], dim=1)
        if allowed.shape[-1] != x.shape[1]:
            raise ValueError(
                f"mask size {tuple(allowed.shape[-2:])} does not match M+L={x.shape[1]}"
            )
        for layer in self.fusion_layers:
            x = layer(x, allowed)
        x = self.fusion_norm(x)
        return x[:, :M], x[:, M:]

    def _global_cue(self, box_tokens: torch.Tensor, box_valid: torch.Tensor) -> torch.Tensor:
        w = box_valid.to(box_tokens.dtype)
        return (box_tokens * w.unsqueeze(-1)).sum(dim=1) / w.sum(dim=1, keepdim=True)

    def grounding_pass(self, box_feats: torch.Tensor, box_valid: torch.Tensor,
                       ids: torch.Tensor, real: torch.Tensor) -> GroundingOutput:
        """Bidirectional pass: global box token as the visual cue, grounding
        scores over valid proposals, plus the query-class logits."""
        box_tokens = self.instance_mlp(box_feats)
        cue = self._global_cue(box_tokens, box_valid)
        text_h = self._text_hidden(ids, real, cue)
        class_logits = self.class_mlp(text_h[:, 0])
        allowed = fusion_mask("bidirectional", box_valid, real)
        fused_box, fused_text = self._fuse(box_tokens, text_h, allowed)
        logits = self.ground_proj(fused_box).squeeze(-1)
        logits = logits.masked_fill(~box_valid, float("-inf"))
        return GroundingOutput(
            scores=logits.softmax(dim=-1),
            score_logits=logits,
            class_logits=class_logits,
            fused_box=fused_box,
            fused_text=fused_text,
        )

    def caption_pass(self, box_feats: torch.Tensor, box_valid: torch.Tensor,
                     target_index: torch.Tensor, input_ids: torch.Tensor,
                     input_real: torch.Tensor) -> torch.Tensor:
        """Seq2seq pass: target box token as the visual cue; returns next-word
        logits of shape (B, T, vocab_size), position i scoring word i+1."""
        box_tokens = self.instance_mlp(box_feats)
        cue = box_tokens[torch.arange(box_tokens.shape[0]), target_index]
        text_h = self._text_hidden(input_ids, input_real, cue)
        allowed = fusion_mask("seq2seq", box_valid, input_real)
        _, fused_text = self._fuse(box_tokens, text_h, allowed)
        return self.caption_proj(fused_text)

    # ---- single-sample operations ------------------------------------------

    def encode_instances(self, cloud: PointCloud, masks: list[InstanceMask]) -> BoxTokenSeq:
        """Box tokens from pooled per-instance point features, with each
        instance's AABB. Masks beyond max_boxes are dropped (first M_max kept)."""
        if not masks:
            raise ValueError("no proposals")
        masks = masks[: self.config.max_boxes]
        feats = pool_instance_features(cloud, masks)
        x = torch.as_tensor(feats, dtype=self.dtype, device=self.device)
        tokens = self.instance_mlp(x)
        boxes = [aabb_from_mask(cloud, m) for m in masks]
        valid = torch.ones(len(masks), dtype=torch.bool, device=self.device)
        return BoxTokenSeq(tokens=tokens, boxes=boxes, valid=valid)

    def global_box_token(self, bts: BoxTokenSeq) -> torch.Tensor:
        """Arithmetic mean over valid box tokens."""
        return self._global_cue(bts.tokens.unsqueeze(0), bts.valid.unsqueeze(0))[0]

    def encode_text(self, seq: TokenSeq, visual_cue: torch.Tensor) -> TextTokenSeq:
        """Word + positional embedding, visual cue added to every position,
        then the causal text-encoder layers."""
        ids = torch.tensor([seq.ids], dtype=torch.long, device=self.device)
        real = torch.tensor([[i != 2 for i in seq.ids]], dtype=torch.bool, device=self.device)
        h = self._text_hidden(ids, real, visual_cue.unsqueeze(0))
        return TextTokenSeq(tokens=h[0], real=real[0])

    def build_mask(self, mode: str, box_valid, text_real) -> AttentionMask:
        """Single-sample (M+L, M+L) mask; ints mean "all valid" of that size."""
        if isinstance(box_valid, int):
            box_valid = torch.ones(box_valid, dtype=torch.bool, device=self.device)
        if isinstance(text_real, int):
            text_real = torch.ones(text_real, dtype=torch.bool, device=self.device)
        allowed = fusion_mask(mode, box_valid.unsqueeze(0), text_real.unsqueeze(0))[0]
        return AttentionMask(allowed=allowed, mode=mode)

    def fuse(self, bts: BoxTokenSeq, tts: TextTokenSeq, mask: AttentionMask) -> FusedSeq:
        fused_box, fused_text = self._fuse(
            bts.tokens.unsqueeze(0), tts.tokens.unsqueeze(0), mask.allowed.unsqueeze(0)
        )
        return FusedSeq(fused_box=fused_box[0], fused_text=fused_text[0])

    def grounding_head(self, fused_box: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        """Per-token bias-free logit, softmax over valid proposals; pads get
        probability exactly 0."""
        logits = self.ground_proj(fused_box).squeeze(-1)
        if valid is not None:
            logits = logits.masked_fill(~valid, float("-inf"))
        return logits.softmax(dim=-1)

    def caption_head(self, fused_text: torch.Tensor) -> torch.Tensor:
        """(L, vocab_size) next-word logits; position i scores word i+1."""
        return self.caption_proj(fused_text)

    def lang_class_head(self, cls_encoding: torch.Tensor) -> torch.Tensor:
        """Semantic-class logits from the pre-fusion [CLS] encoding."""
        return self.class_mlp(cls_encoding)


def build_model(config: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> GroundCapModel:
    """Deterministically initialized model: same config and seed, same weights."""
    torch.manual_seed(seed)
    return GroundCapModel(config).to(dtype)
