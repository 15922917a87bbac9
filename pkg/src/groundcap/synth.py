"""Procedural scenes and the synthetic caption-pair factory.

A scene is a small room of class/color/size-tagged boxes with sampled
surface points. An orbit of cameras yields frames; every ``frame_stride``-th
frame contributes up to ``top_k`` dominant visible objects, each captioned by
a (pluggable, noisy) captioner and scored by a (pluggable) similarity scorer.
Pairs survive iff the crop is non-empty and similarity >= the threshold.

The clean-dataset role is served directly by the scenes: each object carries
a noise-free template caption (with a nearest-neighbour relation phrase when
the scene has more than one object).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import (
    AABB,
    CameraPose,
    InstanceMask,
    PointCloud,
    dominant_objects,
    frustum_mask,
)
from .text import tokenize

__all__ = [
    "CLASS_NAMES",
    "COLOR_NAMES",
    "SIZE_NAMES",
    "SceneObject",
    "Scene",
    "FrameRecord",
    "ObjectView",
    "SynthPair",
    "SkippedAttempt",
    "PipelineResult",
    "generate_scene",
    "orbit_cameras",
    "render_frame",
    "template_captioner",
    "mock_similarity",
    "attempt_pair",
    "synth_pipeline",
    "dataset_stats",
]

CLASS_NAMES = ("chair", "table", "sofa", "bed", "cabinet", "lamp", "shelf", "desk")
COLOR_NAMES = ("red", "green", "blue", "yellow", "white", "black")
SIZE_NAMES = ("small", "large", "tall", "wide")

_COLOR_RGB = {
    "red": (0.80, 0.15, 0.15),
    "green": (0.15, 0.70, 0.20),
    "blue": (0.15, 0.25, 0.80),
    "yellow": (0.85, 0.80, 0.15),
    "white": (0.92, 0.92, 0.92),
    "black": (0.08, 0.08, 0.08),
}

# half-extent ranges (x, y, z) per size tag
_SIZE_RANGES = {
    "small": ((0.20, 0.35), (0.20, 0.35), (0.20, 0.35)),
    "large": ((0.55, 0.80), (0.55, 0.80), (0.55, 0.80)),
    "tall": ((0.20, 0.35), (0.20, 0.35), (0.60, 0.90)),
    "wide": ((0.55, 0.80), (0.20, 0.35), (0.25, 0.40)),
}

MIN_OBJECT_POINTS = 30


@dataclass(frozen=True)
class SceneObject:
    instance_id: int
    semantic_class: str
    color: str
    size: str
    box: AABB

    @property
    def class_index(self) -> int:
        return CLASS_NAMES.index(self.semantic_class)

    @property
    def tags(self) -> tuple[str, str, str]:
        return (self.color, self.size, self.semantic_class)


@dataclass
class Scene:
    scene_id: str
    seed: int
    room: AABB
    objects: list[SceneObject]
    cloud: PointCloud
    masks: list[InstanceMask]              # aligned with objects
    captions: dict[int, str]               # instance_id -> clean GT caption

    def __post_init__(self):
        for obj, mask in zip(self.objects, self.masks):
            if mask.instance_id != obj.instance_id:
                raise ValueError("masks misaligned with objects")
            if mask.size < MIN_OBJECT_POINTS:
                raise ValueError(
                    f"instance {obj.instance_id} has {mask.size} points (< {MIN_OBJECT_POINTS})"
                )
        tag_set = {obj.tags for obj in self.objects}
        if len(tag_set) != len(self.objects):
            raise ValueError("duplicate (color, size, class) combination in scene")

    def object_by_id(self, instance_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.instance_id == instance_id:
                return obj
        raise KeyError(instance_id)

    def mask_by_id(self, instance_id: int) -> InstanceMask:
        for mask in self.masks:
            if mask.instance_id == instance_id:
                return mask
        raise KeyError(instance_id)


@dataclass
class FrameRecord:
    frame_index: int
    camera: CameraPose
    visible: list[InstanceMask]            # per-instance visible subsets, non-empty only

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")


@dataclass
class ObjectView:
    """One object as seen from one frame — the captioner/scorer input."""

    scene_id: str
    frame_index: int
    instance_id: int
    semantic_class: str
    color: str
    size: str
    crop: PointCloud | None                # object's points inside the frustum
    visible_points: int

    @property
    def tags(self) -> tuple[str, str, str]:
        return (self.color, self.size, self.semantic_class)


@dataclass
class SynthPair:
    crop: PointCloud                       # scene points inside the frustum
    crop_masks: list[InstanceMask]         # instance masks re-indexed into crop
    caption: str
    similarity: float
    scene_id: str
    frame_index: int
    instance_id: int                       # the captioned (target) instance

    def __post_init__(self):
        if not self.caption:
            raise ValueError("caption must be non-empty")
        if not -1.0 <= self.similarity <= 1.0:
            raise ValueError("similarity must lie in [-1, 1]")


@dataclass(frozen=True)
class SkippedAttempt:
    scene_id: str
    frame_index: int
    instance_id: int
    reason: str                            # "empty_crop" | "filtered"
    similarity: float | None               # recorded for filtered attempts


@dataclass
class PipelineResult:
    pairs: list[SynthPair] = field(default_factory=list)
    skipped: list[SkippedAttempt] = field(default_factory=list)
    scenes_processed: int = 0
    frames_processed: int = 0

    @property
    def attempted(self) -> int:
        return len(self.pairs) + len(self.skipped)


def _view_rng(noise_seed: int, scene_id: str, frame_index: int, instance_id: int) -> np.random.Generator:
    """Independent stream per (seed, scene, frame, object)."""
    return np.random.default_rng(
        [noise_seed, zlib.crc32(scene_id.encode()), frame_index, instance_id]
    )


# ---------------------------------------------------------------------------
# scene generation


def _sample_box_points(rng: np.random.Generator, box: AABB, color: str, n_points: int) -> np.ndarray:
    """Points on the box surface with [r, g, b, nx, ny, nz] aux channels."""
    lo, hi = box.lo, box.hi
    ext = hi - lo
    # two faces per axis; face area drives the sampling weights
    areas = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]])
    weights = np.repeat(areas, 2)
    weights = weights / weights.sum()
    faces = rng.choice(6, size=n_points, p=weights)
    u = rng.uniform(size=(n_points, 3))
    xyz = lo + u * ext
    normals = np.zeros((n_points, 3))
    for f in range(6):
        axis, side = divmod(f, 2)
        sel = faces == f
        xyz[sel, axis] = hi[axis] if side else lo[axis]
        normals[sel, axis] = 1.0 if side else -1.0
    base = np.array(_COLOR_RGB[color])
    rgb = np.clip(base + rng.uniform(-0.05, 0.05, size=(n_points, 3)), 0.0, 1.0)
    return np.concatenate([xyz, rgb, normals], axis=1)


def _clean_caption(obj: SceneObject, objects: list[SceneObject]) -> str:
    head = f"a {obj.color} {obj.size} {obj.semantic_class}"
    others = [o for o in objects if o.instance_id != obj.instance_id]
    if not others:
        return f"{head} ."
    center = (obj.box.lo + obj.box.hi) / 2.0
    # nearest neighbour by box-center distance; ties resolve to lower id
    def key(o: SceneObject):
        c = (o.box.lo + o.box.hi) / 2.0
        return (float(np.linalg.norm(c - center)), o.instance_id)
    near = min(others, key=key)
    return f"{head} . it is near the {near.color} {near.semantic_class} ."


def generate_scene(seed: int, n_objects: int | None = None, points_per_object: int = 60) -> Scene:
    """Deterministic room of tagged, non-overlapping boxes with surface points.

    Tag combinations (color, size, class) are distinct within a scene. Every
    object carries a clean template caption; scenes with a single object omit
    the relation phrase.
    """
    if points_per_object < MIN_OBJECT_POINTS:
        raise ValueError(f"points_per_object must be >= {MIN_OBJECT_POINTS}")
    scene_id = f"scene{seed:04d}"
    rng = np.random.default_rng([seed, zlib.crc32(scene_id.encode())])
    if n_objects is None:
        n_objects = int(rng.integers(4, 9))
    if not 1 <= n_objects <= 16:
        raise ValueError("n_objects must be in [1, 16]")

    # distinct tag triples
    n_combo = len(CLASS_NAMES) * len(COLOR_NAMES) * len(SIZE_NAMES)
    combo_ids = rng.choice(n_combo, size=n_objects, replace=False)

    # one grid cell (2x2 m) per object keeps boxes disjoint by construction
    cells = rng.choice(16, size=n_objects, replace=False)
    objects, rows, masks = [], [], []
    offset = 0
    for instance_id, (combo, cell) in enumerate(zip(combo_ids, cells)):
        klass = CLASS_NAMES[combo % len(CLASS_NAMES)]
        color = COLOR_NAMES[(combo // len(CLASS_NAMES)) % len(COLOR_NAMES)]
        size = SIZE_NAMES[combo // (len(CLASS_NAMES) * len(COLOR_NAMES))]
        cx = -3.0 + 2.0 * (cell % 4) + rng.uniform(-0.15, 0.15)
        cy = -3.0 + 2.0 * (cell // 4) + rng.uniform(-0.15, 0.15)
        half = np.array([rng.uniform(*_SIZE_RANGES[size][a]) for a in range(3)])
        lo = np.array([cx - half[0], cy - half[1], 0.0])
        hi = np.array([cx + half[0], cy + half[1], 2.0 * half[2]])
        box = AABB(lo=lo, hi=hi)
        objects.append(SceneObject(instance_id, klass, color, size, box))
        rows.append(_sample_box_points(rng, box, color, points_per_object))
        masks.append(
            InstanceMask(
                point_indices=np.arange(offset, offset + points_per_object),
                semantic_class=klass,
                instance_id=instance_id,
            )
        )
        offset += points_per_object

    allpts = np.concatenate(rows, axis=0)
    cloud = PointCloud(xyz=allpts[:, :3], aux=allpts[:, 3:])
    captions = {obj.instance_id: _clean_caption(obj, objects) for obj in objects}
    room = AABB(lo=np.array([-5.0, -5.0, 0.0]), hi=np.array([5.0, 5.0, 4.0]))
    return Scene(
        scene_id=scene_id, seed=seed, room=room, objects=objects,
        cloud=cloud, masks=masks, captions=captions,
    )


# ---------------------------------------------------------------------------
# cameras and frames


def orbit_cameras(n_frames: int, radius: float = 8.0, height: float = 3.0,
                  target: tuple[float, float, float] = (0.0, 0.0, 0.5),
                  width: int = 128, height_px: int = 96,
                  focal: float = 100.0, near: float = 0.1, far: float = 25.0) -> list[CameraPose]:
    """Cameras on a circle around the target, all looking at it.

    Camera convention: +x right, +y down, +z forward. The world up axis is +z.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    tgt = np.asarray(target, dtype=np.float64)
    up = np.array([0.0, 0.0, 1.0])
    cams = []
    for i in range(n_frames):
        theta = 2.0 * np.pi * i / n_frames
        eye = np.array([radius * np.cos(theta), radius * np.sin(theta), height])
        forward = tgt - eye
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, up)
        norm = np.linalg.norm(right)
        if norm < 1e-9:
            raise ValueError("camera forward axis parallel to world up")
        right = right / norm
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        mat = np.eye(4)
        mat[:3, :3] = rot
        mat[:3, 3] = -rot @ eye
        cams.append(
            CameraPose(
                fx=focal, fy=focal, cx=width / 2.0, cy=height_px / 2.0,
                width=width, height=height_px, near=near, far=far,
                world_to_camera=mat,
            )
        )
    return cams


def render_frame(scene: Scene, camera: CameraPose, frame_index: int) -> FrameRecord:
    """Visible per-instance masks: each instance's points inside the frustum.

    Instances with no visible point are omitted.
    """
    inside = frustum_mask(scene.cloud, camera)
    visible = []
    for mask in scene.masks:
        keep = mask.point_indices[inside[mask.point_indices]]
        if keep.size:
            visible.append(
                InstanceMask(point_indices=keep, semantic_class=mask.semantic_class,
                             instance_id=mask.instance_id)
            )
    return FrameRecord(frame_index=frame_index, camera=camera, visible=visible)


# ---------------------------------------------------------------------------
# captioner / scorer stand-ins


def template_captioner(view: ObjectView, noise_seed: int, noise_prob: float = 0.3) -> str:
    """"a {color} {size} {class}", corrupted with probability ``noise_prob``.

    A corruption event rewrites 1, 2 or 3 slots (probabilities 0.6/0.25/0.15),
    each to a different word of the same slot vocabulary, so downstream
    similarities land on exactly {0, 1/3, 2/3}. Deterministic per
    (noise_seed, scene, frame, instance).
    """
    if not 0.0 <= noise_prob <= 1.0:
        raise ValueError("noise_prob must lie in [0, 1]")
    rng = _view_rng(noise_seed, view.scene_id, view.frame_index, view.instance_id)
    words = [view.color, view.size, view.semantic_class]
    vocabs = (COLOR_NAMES, SIZE_NAMES, CLASS_NAMES)
    if rng.random() < noise_prob:
        n_slots = int(rng.choice([1, 2, 3], p=[0.60, 0.25, 0.15]))
        slots = sorted(rng.choice(3, size=n_slots, replace=False).tolist())
        for s in slots:
            options = [w for w in vocabs[s] if w != words[s]]
            words[s] = options[int(rng.integers(len(options)))]
    return f"a {words[0]} {words[1]} {words[2]}"


def mock_similarity(view: ObjectView, caption: str) -> float:
    """Fraction of the object's (color, size, class) tags present in the
    caption's tokens. Stand-in for an image-text similarity score."""
    tokens = set(tokenize(caption))
    return sum(tag in tokens for tag in view.tags) / 3.0


# ---------------------------------------------------------------------------
# the pipeline


def attempt_pair(scene: Scene, camera: CameraPose, frame_index: int, instance_id: int,
                 sim_threshold: float,
                 captioner: Callable[[ObjectView], str],
                 scorer: Callable[[ObjectView, str], float]) -> SynthPair | SkippedAttempt:
    """One object/frame attempt.

    The emitted cloud is the frustum crop of the whole scene; its emptiness is
    checked before any similarity judgment, so the two skip reasons are
    mutually exclusive. The captioner/scorer see an ObjectView holding the
    target object's own visible points.
    """
    obj = scene.object_by_id(instance_id)
    obj_mask = scene.mask_by_id(instance_id)
    inside = frustum_mask(scene.cloud, camera)
    vis_obj = obj_mask.point_indices[inside[obj_mask.point_indices]]
    view = ObjectView(
        scene_id=scene.scene_id, frame_index=frame_index, instance_id=instance_id,
        semantic_class=obj.semantic_class, color=obj.color, size=obj.size,
        crop=scene.cloud.select(vis_obj) if vis_obj.size else None,
        visible_points=int(vis_obj.size),
    )
    idx = np.flatnonzero(inside)
    if idx.size == 0:
        return SkippedAttempt(scene.scene_id, frame_index, instance_id,
                              reason="empty_crop", similarity=None)
    caption = captioner(view)
    sim = float(scorer(view, caption))
    if sim < sim_threshold:
        return SkippedAttempt(scene.scene_id, frame_index, instance_id,
                              reason="filtered", similarity=sim)
    # re-index the visible part of every instance mask into crop coordinates
    pos = np.full(scene.cloud.xyz.shape[0], -1, dtype=np.int64)
    pos[idx] = np.arange(idx.size)
    crop_masks = []
    for m in scene.masks:
        keep = m.point_indices[inside[m.point_indices]]
        if keep.size:
            crop_masks.append(
                InstanceMask(point_indices=pos[keep], semantic_class=m.semantic_class,
                             instance_id=m.instance_id)
            )
    return SynthPair(crop=scene.cloud.select(idx), crop_masks=crop_masks,
                     caption=caption, similarity=sim,
                     scene_id=scene.scene_id, frame_index=frame_index,
                     instance_id=instance_id)


def synth_pipeline(scenes: list[Scene], frame_stride: int = 20, top_k: int = 3,
                   sim_threshold: float = 0.3,
                   captioner: Callable[[ObjectView], str] | None = None,
                   scorer: Callable[[ObjectView, str], float] | None = None,
                   n_frames: int = 100, noise_seed: int = 0,
                   noise_prob: float = 0.3,
                   cameras: list[CameraPose] | None = None) -> PipelineResult:
    """Run the factory over every scene.

    Frames with index ``% frame_stride == 0`` are processed; per frame, the
    ``top_k`` dominant visible objects (by visible point count, ties to the
    smaller instance id) are attempted in rank order. Emission order is
    deterministic: scene order, then frame, then rank.
    """
    if frame_stride < 1:
        raise ValueError("frame_stride must be >= 1")
    if not 0.0 <= sim_threshold <= 1.0:
        raise ValueError("sim_threshold must lie in [0, 1]")
    if captioner is None:
        captioner = lambda view: template_captioner(view, noise_seed, noise_prob)
    if scorer is None:
        scorer = mock_similarity
    cams = cameras if cameras is not None else orbit_cameras(n_frames)
    result = PipelineResult()
    for scene in scenes:
        result.scenes_processed += 1
        for frame_index in range(len(cams)):
            if frame_index % frame_stride != 0:
                continue
            result.frames_processed += 1
            frame = render_frame(scene, cams[frame_index], frame_index)
            for instance_id in dominant_objects(frame.visible, top_k):
                out = attempt_pair(scene, cams[frame_index], frame_index, instance_id,
                                   sim_threshold, captioner, scorer)
                if isinstance(out, SynthPair):
                    result.pairs.append(out)
                else:
                    result.skipped.append(out)
    return result


def dataset_stats(result: PipelineResult) -> dict:
    """Counters for a pipeline run; emitted + filtered + empty_crop = attempted."""
    filtered = sum(1 for s in result.skipped if s.reason == "filtered")
    empty = sum(1 for s in result.skipped if s.reason == "empty_crop")
    return {
        "scenes": result.scenes_processed,
        "frames_processed": result.frames_processed,
        "attempted": result.attempted,
        "emitted": len(result.pairs),
        "filtered": filtered,
        "empty_crop": empty,
    }
