"""Line-delimited JSON record files shared across the pipeline.

Every file starts with a header line naming its format and version; scene and
pair files additionally record the auxiliary channel count K in the header.
Field names are fixed in docs/formats.md.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator

import numpy as np

from .geometry import AABB, InstanceMask, PointCloud

SCENES_FORMAT = "groundcap.scenes"
PAIRS_FORMAT = "groundcap.pairs"
GROUNDING_PREDS_FORMAT = "groundcap.grounding_preds"
DENSECAP_PREDS_FORMAT = "groundcap.densecap_preds"
DENSECAP_GTS_FORMAT = "groundcap.densecap_gts"
DETECTIONS_FORMAT = "groundcap.detections"
DETECTION_GTS_FORMAT = "groundcap.detection_gts"
VERSION = 1


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def box_to_json(box: AABB) -> dict:
    return {"min": list(box.lo), "max": list(box.hi)}


def box_from_json(d: dict) -> AABB:
    return AABB(np.array(d["min"]), np.array(d["max"]))


def cloud_to_json(cloud: PointCloud) -> dict:
    return {"xyz": cloud.xyz.tolist(), "aux": cloud.aux.tolist()}


def cloud_from_json(d: dict) -> PointCloud:
    xyz = np.array(d["xyz"], dtype=np.float64)
    return PointCloud(xyz, np.array(d["aux"], dtype=np.float64).reshape(len(xyz), -1))


def mask_to_json(mask: InstanceMask) -> dict:
    return {
        "instance_id": mask.instance_id,
        "semantic_class": mask.semantic_class,
        "point_indices": mask.point_indices.tolist(),
    }


def mask_from_json(d: dict) -> InstanceMask:
    return InstanceMask(
        point_indices=np.array(d["point_indices"], dtype=np.int64),
        semantic_class=str(d["semantic_class"]),
        instance_id=int(d["instance_id"]),
    )


def write_records(path: str | Path, fmt: str, records: list[dict], header_extra: dict | None = None) -> None:
    """Write a header line followed by one JSON record per line."""
    header = {"format": fmt, "version": VERSION}
    if header_extra:
        header.update(header_extra)
    lines = [_dump(header)] + [_dump(r) for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_records(path: str | Path, expected_format: str) -> tuple[dict, list[dict]]:
    """Read a record file, returning (header, records). Raises on a format
    mismatch so callers never consume the wrong kind of file."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines:
        raise ValueError(f"{path}: empty record file")
    header = json.loads(lines[0])
    if header.get("format") != expected_format:
        raise ValueError(
            f"{path}: expected format {expected_format!r}, found {header.get('format')!r}"
        )
    return header, [json.loads(ln) for ln in lines[1:]]


def iter_records(path: str | Path, expected_format: str) -> Iterator[dict]:
    _, records = read_records(path, expected_format)
    return iter(records)


# ---------------------------------------------------------------------------
# domain object codecs (scenes, pairs, predictions)


def scene_to_json(scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "room": box_to_json(scene.room),
        "objects": [
            {
                "instance_id": o.instance_id,
                "semantic_class": o.semantic_class,
                "color": o.color,
                "size": o.size,
                "box": box_to_json(o.box),
            }
            for o in scene.objects
        ],
        "cloud": cloud_to_json(scene.cloud),
        "masks": [mask_to_json(m) for m in scene.masks],
        "captions": {str(k): v for k, v in scene.captions.items()},
    }


def scene_from_json(d: dict):
    from .geometry import AABB  # noqa: F401  (codec-local import keeps cycles out)
    from .synth import Scene, SceneObject

    objects = [
        SceneObject(
            instance_id=int(o["instance_id"]),
            semantic_class=o["semantic_class"],
            color=o["color"],
            size=o["size"],
            box=box_from_json(o["box"]),
        )
        for o in d["objects"]
    ]
    return Scene(
        scene_id=d["scene_id"],
        seed=int(d["seed"]),
        room=box_from_json(d["room"]),
        objects=objects,
        cloud=cloud_from_json(d["cloud"]),
        masks=[mask_from_json(m) for m in d["masks"]],
        captions={int(k): v for k, v in d["captions"].items()},
    )


def pair_to_json(pair) -> dict:
    return {
        "scene_id": pair.scene_id,
        "frame_index": pair.frame_index,
        "instance_id": pair.instance_id,
        "caption": pair.caption,
        "similarity": pair.similarity,
        "crop": cloud_to_json(pair.crop),
        "crop_masks": [mask_to_json(m) for m in pair.crop_masks],
    }


def pair_from_json(d: dict):
    from .synth import SynthPair

    return SynthPair(
        crop=cloud_from_json(d["crop"]),
        crop_masks=[mask_from_json(m) for m in d["crop_masks"]],
        caption=d["caption"],
        similarity=float(d["similarity"]),
        scene_id=d["scene_id"],
        frame_index=int(d["frame_index"]),
        instance_id=int(d["instance_id"]),
    )


def grounding_pred_to_json(p) -> dict:
    return {
        "query_id": p.query_id,
        "scene_id": p.scene_id,
        "pred_box": box_to_json(p.pred_box),
        "gt_box": box_to_json(p.gt_box),
        "gt_class": p.gt_class,
    }


def grounding_pred_from_json(d: dict):
    from .metrics import GroundingPrediction

    return GroundingPrediction(
        query_id=d["query_id"],
        scene_id=d["scene_id"],
        pred_box=box_from_json(d["pred_box"]),
        gt_box=box_from_json(d["gt_box"]),
        gt_class=d["gt_class"],
    )


def densecap_pred_to_json(p) -> dict:
    return {
        "scene_id": p.scene_id,
        "items": [
            {"box": box_to_json(i.box), "caption": i.caption, "confidence": i.confidence}
            for i in p.items
        ],
    }


def densecap_pred_from_json(d: dict):
    from .metrics import CaptionedBox, DenseCapPrediction

    return DenseCapPrediction(
        scene_id=d["scene_id"],
        items=[
            CaptionedBox(box=box_from_json(i["box"]), caption=i["caption"],
                         confidence=float(i["confidence"]))
            for i in d["items"]
        ],
    )


def densecap_gt_to_json(g) -> dict:
    return {
        "scene_id": g.scene_id,
        "items": [
            {
                "box": box_to_json(i.box),
                "references": list(i.references),
                "semantic_class": i.semantic_class,
            }
            for i in g.items
        ],
    }


def densecap_gt_from_json(d: dict):
    from .metrics import DenseCapGroundTruth, GTObject

    return DenseCapGroundTruth(
        scene_id=d["scene_id"],
        items=[
            GTObject(box=box_from_json(i["box"]), references=list(i["references"]),
                     semantic_class=i["semantic_class"])
            for i in d["items"]
        ],
    )


def detection_to_json(det) -> dict:
    return {
        "scene_id": det.scene_id,
        "box": box_to_json(det.box),
        "semantic_class": det.semantic_class,
        "confidence": det.confidence,
    }


def detection_from_json(d: dict):
    from .metrics import Detection

    return Detection(
        scene_id=d["scene_id"],
        box=box_from_json(d["box"]),
        semantic_class=d["semantic_class"],
        confidence=float(d["confidence"]),
    )


def detection_gt_to_json(g) -> dict:
    return {
        "scene_id": g.scene_id,
        "box": box_to_json(g.box),
        "semantic_class": g.semantic_class,
    }


def detection_gt_from_json(d: dict):
    from .metrics import DetectionGT

    return DetectionGT(
        scene_id=d["scene_id"],
        box=box_from_json(d["box"]),
        semantic_class=d["semantic_class"],
    )
