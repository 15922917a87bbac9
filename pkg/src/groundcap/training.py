"""Staged training: synthetic pre-train, clean joint train, task fine-tunes.

The joint (and pre-train) step makes two forward passes through the fusion
module — a bidirectional pass for the grounding and class terms, then a
seq2seq pass for the caption term — accumulating gradients from both before
one parameter update. Everything is deterministic under a fixed seed.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import asdict, dataclass, field

import torch

from .data import Batch, BatchSampler, TrainSample, collate
from .losses import (
    LossBundle,
    STAGES,
    caption_loss,
    class_loss,
    compose_loss,
    grounding_nll,
)
from .model import GroundCapModel, ModelConfig, build_model

__all__ = [
    "TrainConfig",
    "StageResult",
    "make_optimizer",
    "grounding_step",
    "caption_step",
    "joint_step",
    "run_stage",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_roundtrip",
]


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "joint"
    backbone_lr: float = 1e-4      # instance-encoder group
    lr: float = 1e-5               # everything else
    batch_size: int = 128
    max_steps: int = 1000
    seed: int = 0
    descriptions_per_cloud: int = 16
    plateau_window: int = 500
    plateau_rel_improvement: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.backbone_lr < 0 or self.lr < 0:
            raise ValueError("learning rates must be >= 0")
        positives = (self.batch_size, self.max_steps, self.descriptions_per_cloud,
                     self.plateau_window)
        if any(v < 1 for v in positives):
            raise ValueError("counts must be >= 1")
        if self.plateau_rel_improvement <= 0:
            raise ValueError("plateau_rel_improvement must be > 0")


@dataclass
class StageResult:
    stage: str
    steps_run: int
    converged: bool
    curve: list[dict] = field(default_factory=list)   # step/l_g/l_cls/l_c/total
    checkpoint_path: str | None = None
    stopped_early: bool = False                        # stop_fn fired


def make_optimizer(model: GroundCapModel, config: TrainConfig) -> torch.optim.Adam:
    """Two parameter groups: the instance encoder at the backbone rate, the
    rest of the model at the base rate."""
    return torch.optim.Adam(
        [
            {"params": model.backbone_parameters(), "lr": config.backbone_lr},
            {"params": model.rest_parameters(), "lr": config.lr},
        ],
        betas=config.adam_betas,
        eps=config.adam_eps,
    )


def _check_finite(name: str, value: torch.Tensor) -> None:
    if not math.isfinite(float(value.detach())):
        raise RuntimeError(f"non-finite {name} loss ({float(value.detach())}); step aborted")


def grounding_step(model: GroundCapModel, optimizer: torch.optim.Optimizer,
                   batch: Batch, apply_update: bool = True) -> LossBundle:
    out = model.grounding_pass(batch.box_feats, batch.box_valid,
                               batch.query_ids, batch.query_real)
    l_g = grounding_nll(out.scores, batch.target_index)
    l_cls = class_loss(out.class_logits, batch.gt_class)
    bundle = compose_loss("finetune_grounding", l_g=l_g, l_cls=l_cls)
    _check_finite("grounding", bundle.total)
    bundle.total.backward()
    if apply_update:
        optimizer.step()
        optimizer.zero_grad()
    return bundle


def caption_step(model: GroundCapModel, optimizer: torch.optim.Optimizer,
                 batch: Batch, apply_update: bool = True) -> LossBundle:
    logits = model.caption_pass(batch.box_feats, batch.box_valid, batch.target_index,
                                batch.input_ids, batch.input_real)
    l_c = caption_loss(logits, batch.target_ids, batch.target_real)
    bundle = compose_loss("finetune_captioning", l_c=l_c)
    _check_finite("caption", bundle.total)
    bundle.total.backward()
    if apply_update:
        optimizer.step()
        optimizer.zero_grad()
    return bundle


def joint_step(model: GroundCapModel, optimizer: torch.optim.Optimizer, batch: Batch,
               stage: str = "joint", apply_update: bool = True) -> LossBundle:
    """Two fusion passes, one update.

    Pass 1 (global box token, bidirectional mask) yields the grounding and
    class terms; pass 2 (target box token, seq2seq mask) yields the caption
    term. Each term's backward accumulates into the same gradient buffers, so
    the step's gradient is exactly the sum of the two objectives' gradients.
    With apply_update=False the accumulated gradients are left in place.
    """
    out = model.grounding_pass(batch.box_feats, batch.box_valid,
                               batch.query_ids, batch.query_real)
    l_g = grounding_nll(out.scores, batch.target_index)
    l_cls = class_loss(out.class_logits, batch.gt_class)
    _check_finite("grounding", l_g)
    _check_finite("class", l_cls)
    (l_g + l_cls).backward()

    logits = model.caption_pass(batch.box_feats, batch.box_valid, batch.target_index,
                                batch.input_ids, batch.input_real)
    l_c = caption_loss(logits, batch.target_ids, batch.target_real)
    _check_finite("caption", l_c)
    l_c.backward()

    if apply_update:
        optimizer.step()
        optimizer.zero_grad()
    return compose_loss(stage, l_g=l_g.detach(), l_cls=l_cls.detach(), l_c=l_c.detach())


_STEP_FN = {
    "pretrain": joint_step,
    "joint": joint_step,
    "finetune_grounding": grounding_step,
    "finetune_captioning": caption_step,
}


def _plateaued(totals: list[float], window: int, rel_tol: float) -> bool:
    """Relative improvement of the trailing window mean over the preceding
    window mean below rel_tol means convergence."""
    if len(totals) < 2 * window:
        return False
    recent = sum(totals[-window:]) / window
    prev = sum(totals[-2 * window: -window]) / window
    if prev <= 0:
        return True
    return (prev - recent) / prev < rel_tol


def curve_to_csv(curve: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "l_g", "l_cls", "l_c", "total"])
    for row in curve:
        writer.writerow([
            row["step"],
            "" if row["l_g"] is None else repr(row["l_g"]),
            "" if row["l_cls"] is None else repr(row["l_cls"]),
            "" if row["l_c"] is None else repr(row["l_c"]),
            repr(row["total"]),
        ])
    return buf.getvalue()


def run_stage(model: GroundCapModel, config: TrainConfig, samples: list[TrainSample],
              out_dir: str | None = None, stop_fn=None, stop_every: int = 25) -> StageResult:
    """Run one stage to max_steps or to a loss plateau.

    stop_fn(model, step) -> bool, polled every stop_every steps, supports
    target-accuracy experiments; a True return ends the stage early. With an
    out_dir, writes <stage>_loss.csv and <stage>.ckpt there.
    """
    if not samples:
        raise ValueError(f"stage {config.stage!r} has no training samples")
    step_fn = _STEP_FN[config.stage]
    torch.manual_seed(config.seed)
    sampler = BatchSampler(len(samples), config.batch_size, config.seed)
    optimizer = make_optimizer(model, config)
    result = StageResult(stage=config.stage, steps_run=0, converged=False)
    totals: list[float] = []
    for step in range(1, config.max_steps + 1):
        batch = collate([samples[i] for i in sampler.next_indices()],
                        dtype=model.dtype, device=model.device)
        if step_fn is joint_step:
            bundle = step_fn(model, optimizer, batch, stage=config.stage)
        else:
            bundle = step_fn(model, optimizer, batch)
        row = bundle.detached()
        row["step"] = step
        result.curve.append(row)
        totals.append(row["total"])
        result.steps_run = step
        if _plateaued(totals, config.plateau_window, config.plateau_rel_improvement):
            result.converged = True
            break
        if stop_fn is not None and step % stop_every == 0 and stop_fn(model, step):
            result.stopped_early = True
            break
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, f"{config.stage}_loss.csv")
        with open(csv_path, "w") as fh:
            fh.write(curve_to_csv(result.curve))
        ckpt_path = os.path.join(out_dir, f"{config.stage}.ckpt")
        save_checkpoint(model, ckpt_path, stage=config.stage, step=result.steps_run)
        result.checkpoint_path = ckpt_path
    return result


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: GroundCapModel, path: str, stage: str = "",
                    step: int = 0) -> None:
    torch.save(
        {
            "model_config": asdict(model.config),
            "state": model.state_dict(),
            "stage": stage,
            "step": step,
        },
        path,
    )


def load_checkpoint(path: str, model: GroundCapModel | None = None) -> GroundCapModel:
    """Load into a fresh model built from the stored config, or into the given
    model. Shape/key mismatches fail with the offending tensor named."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    stored = ModelConfig(**payload["model_config"])
    state = payload["state"]
    if model is None:
        model = build_model(stored, dtype=next(iter(state.values())).dtype)
    own = model.state_dict()
    for name, tensor in state.items():
        if name not in own:
            raise ValueError(f"checkpoint tensor {name!r} not present in model")
        if tuple(own[name].shape) != tuple(tensor.shape):
            raise ValueError(
                f"checkpoint tensor {name!r} has shape {tuple(tensor.shape)}, "
                f"model expects {tuple(own[name].shape)}"
            )
    missing = set(own) - set(state)
    if missing:
        raise ValueError(f"checkpoint is missing tensor {sorted(missing)[0]!r}")
    model.load_state_dict(state)
    return model


def checkpoint_roundtrip(model: GroundCapModel, path: str) -> GroundCapModel:
    """Save then load into a fresh model; parameters round-trip bit-exactly."""
    save_checkpoint(model, path)
    return load_checkpoint(path)
