import numpy as np
import pytest

from groundcap.geometry import CameraPose, frustum_mask, iou
from groundcap.synth import (
    CLASS_NAMES,
    COLOR_NAMES,
    MIN_OBJECT_POINTS,
    SIZE_NAMES,
    ObjectView,
    SynthPair,
    attempt_pair,
    dataset_stats,
    generate_scene,
    mock_similarity,
    orbit_cameras,
    render_frame,
    synth_pipeline,
    template_captioner,
)


def away_camera():
    """Pose whose frustum contains none of the room (everything far behind far-plane)."""
    T = np.eye(4)
    T[2, 3] = 1000.0
    return CameraPose(fx=100.0, fy=100.0, cx=64.0, cy=48.0, world_to_camera=T,
                      width=128, height=96, near=0.1, far=25.0)


def make_view(scene_id="scene0000", frame_index=0, instance_id=0,
              semantic_class="chair", color="red", size="small"):
    return ObjectView(scene_id=scene_id, frame_index=frame_index,
                      instance_id=instance_id, semantic_class=semantic_class,
                      color=color, size=size, crop=None, visible_points=40)


# ---------------------------------------------------------------------------
# scene generation


def test_generate_scene_is_deterministic():
    a = generate_scene(5)
    b = generate_scene(5)
    assert a.scene_id == "scene0005"
    assert np.array_equal(a.cloud.xyz, b.cloud.xyz)
    assert [o.tags for o in a.objects] == [o.tags for o in b.objects]
    assert a.captions == b.captions


def test_generate_scene_invariants():
    for seed in range(8):
        scene = generate_scene(seed)
        assert 4 <= len(scene.objects) <= 8
        # tags distinct (Scene validates, but pin it here too)
        tags = [o.tags for o in scene.objects]
        assert len(set(tags)) == len(tags)
        # boxes pairwise disjoint and inside the room
        for i, a in enumerate(scene.objects):
            assert scene.room.contains(np.stack([a.box.lo, a.box.hi])).all()
            for b in scene.objects[i + 1:]:
                assert iou(a.box, b.box) == 0.0
        # masks partition the cloud; each object has enough points
        seen = np.concatenate([m.point_indices for m in scene.masks])
        assert np.array_equal(np.sort(seen), np.arange(scene.cloud.n_points))
        for obj, mask in zip(scene.objects, scene.masks):
            assert mask.size >= MIN_OBJECT_POINTS
            # the sampled surface points stay on the box surface
            assert obj.box.contains(scene.cloud.xyz[mask.point_indices]).all()
        # aux features are [rgb, normal]
        assert scene.cloud.n_aux == 6


def test_generate_scene_caption_templates():
    scene = generate_scene(2)
    for obj in scene.objects:
        cap = scene.captions[obj.instance_id]
        head = f"a {obj.color} {obj.size} {obj.semantic_class} ."
        assert cap.startswith(head)
        if len(scene.objects) > 1:
            assert " it is near the " in cap


def test_generate_scene_single_object_caption():
    scene = generate_scene(0, n_objects=1)
    obj = scene.objects[0]
    assert scene.captions[obj.instance_id] == f"a {obj.color} {obj.size} {obj.semantic_class} ."


def test_generate_scene_validation():
    with pytest.raises(ValueError):
        generate_scene(0, points_per_object=10)
    with pytest.raises(ValueError):
        generate_scene(0, n_objects=17)


# ---------------------------------------------------------------------------
# cameras


def test_orbit_cameras_count_and_geometry():
    cams = orbit_cameras(12)
    assert len(cams) == 12
    target = np.array([0.0, 0.0, 0.5])
    for cam in cams:
        # CameraPose validates rigidity on construction; check the aim:
        # the target must sit on the optical axis, in front of the camera
        t = cam.world_to_camera @ np.array([*target, 1.0])
        assert t[2] > 0
        assert abs(t[0]) < 1e-9 and abs(t[1]) < 1e-9


def test_orbit_cameras_see_the_room():
    scene = generate_scene(1)
    cams = orbit_cameras(10)
    for cam in cams:
        assert frustum_mask(scene.cloud, cam).any()


def test_render_frame_omits_invisible_instances():
    scene = generate_scene(1)
    frame = render_frame(scene, away_camera(), 0)
    assert frame.visible == []
    cams = orbit_cameras(4)
    frame2 = render_frame(scene, cams[0], 0)
    assert len(frame2.visible) >= 1
    for m in frame2.visible:
        assert m.size >= 1


# ---------------------------------------------------------------------------
# captioner / similarity


def test_template_captioner_clean_format():
    view = make_view()
    cap = template_captioner(view, noise_seed=0, noise_prob=0.0)
    assert cap == "a red small chair"


def test_template_captioner_deterministic():
    view = make_view(frame_index=17)
    a = template_captioner(view, noise_seed=3)
    b = template_captioner(view, noise_seed=3)
    assert a == b


def test_template_captioner_corruption_statistics():
    noise_prob = 0.3
    n = 10_000
    view0 = make_view()
    clean_words = [view0.color, view0.size, view0.semantic_class]
    corrupted = 0
    slot_counts = {1: 0, 2: 0, 3: 0}
    for frame in range(n):
        view = make_view(frame_index=frame)
        cap = template_captioner(view, noise_seed=0, noise_prob=noise_prob)
        words = cap.split()
        assert words[0] == "a" and len(words) == 4
        changed = sum(w != c for w, c in zip(words[1:], clean_words))
        if changed:
            corrupted += 1
            slot_counts[changed] += 1
            # every rewritten slot stays within its own vocabulary
            for w, vocab in zip(words[1:], (COLOR_NAMES, SIZE_NAMES, CLASS_NAMES)):
                assert w in vocab
            # similarity mirrors the number of surviving tags exactly
            assert mock_similarity(view, cap) == pytest.approx((3 - changed) / 3.0)
        else:
            assert mock_similarity(view, cap) == 1.0
    rate = corrupted / n
    assert abs(rate - noise_prob) < 0.02
    # slot counts given corruption: 0.60 / 0.25 / 0.15
    for k, want in ((1, 0.60), (2, 0.25), (3, 0.15)):
        assert abs(slot_counts[k] / corrupted - want) < 0.03


def test_template_captioner_rejects_bad_noise_prob():
    with pytest.raises(ValueError):
        template_captioner(make_view(), noise_seed=0, noise_prob=1.5)


def test_mock_similarity_levels():
    view = make_view()
    assert mock_similarity(view, "a red small chair") == 1.0
    assert mock_similarity(view, "a blue small chair") == pytest.approx(2 / 3)
    assert mock_similarity(view, "a blue large chair") == pytest.approx(1 / 3)
    assert mock_similarity(view, "a blue large sofa") == 0.0
    # token membership, not order
    assert mock_similarity(view, "chair small red a") == 1.0


# ---------------------------------------------------------------------------
# attempt accounting


def test_attempt_pair_empty_crop_short_circuits():
    scene = generate_scene(0)
    exploding = lambda view: 1 / 0
    out = attempt_pair(scene, away_camera(), 0, scene.objects[0].instance_id,
                       0.3, exploding, mock_similarity)
    assert out.reason == "empty_crop"
    assert out.similarity is None


def test_attempt_pair_filtered_records_similarity():
    scene = generate_scene(0)
    cam = orbit_cameras(4)[0]
    out = attempt_pair(scene, cam, 0, scene.objects[0].instance_id, 0.3,
                       lambda view: "zzz yyy xxx", mock_similarity)
    assert out.reason == "filtered"
    assert out.similarity == 0.0


def test_attempt_pair_emits_scene_crop_with_reindexed_masks():
    scene = generate_scene(3)
    cam = orbit_cameras(4)[0]
    target = scene.objects[0].instance_id
    out = attempt_pair(scene, cam, 0, target, 0.3,
                       lambda view: f"a {view.color} {view.size} {view.semantic_class}",
                       mock_similarity)
    assert isinstance(out, SynthPair)
    assert out.similarity == 1.0
    inside = frustum_mask(scene.cloud, cam)
    idx = np.flatnonzero(inside)
    # the pair's cloud is the whole-scene frustum crop, order preserved
    assert np.array_equal(out.crop.xyz, scene.cloud.xyz[idx])
    # re-indexed masks point at the same physical points
    for cm in out.crop_masks:
        orig = scene.mask_by_id(cm.instance_id)
        keep = orig.point_indices[inside[orig.point_indices]]
        assert np.array_equal(out.crop.xyz[cm.point_indices], scene.cloud.xyz[keep])
        assert cm.semantic_class == orig.semantic_class


def test_threshold_is_inclusive():
    scene = generate_scene(0)
    cam = orbit_cameras(4)[0]
    # one corrupted slot -> similarity exactly 2/3; threshold 2/3 must pass
    view_caption = lambda view: f"a {view.color} {view.size} bogusclass"
    out = attempt_pair(scene, cam, 0, scene.objects[0].instance_id, 2 / 3,
                       view_caption, mock_similarity)
    assert isinstance(out, SynthPair)
    assert out.similarity == pytest.approx(2 / 3)


# ---------------------------------------------------------------------------
# pipeline


def test_synth_pipeline_stride_topk_and_conservation():
    scenes = [generate_scene(s) for s in range(3)]
    result = synth_pipeline(scenes, frame_stride=20, top_k=3, n_frames=100)
    stats = dataset_stats(result)
    assert stats["scenes"] == 3
    assert stats["frames_processed"] == 3 * 5  # frames 0, 20, 40, 60, 80
    assert stats["emitted"] + stats["filtered"] + stats["empty_crop"] == stats["attempted"]
    # at most top_k attempts per processed frame
    per_frame = {}
    for p in result.pairs:
        per_frame[(p.scene_id, p.frame_index)] = per_frame.get((p.scene_id, p.frame_index), 0) + 1
    for s in result.skipped:
        per_frame[(s.scene_id, s.frame_index)] = per_frame.get((s.scene_id, s.frame_index), 0) + 1
    assert all(v <= 3 for v in per_frame.values())
    assert all(p.frame_index % 20 == 0 for p in result.pairs)
    # every emitted pair clears the similarity gate
    assert all(p.similarity >= 0.3 for p in result.pairs)


def test_synth_pipeline_deterministic():
    scenes = [generate_scene(s) for s in range(2)]
    a = synth_pipeline(scenes, n_frames=40, noise_seed=7)
    b = synth_pipeline(scenes, n_frames=40, noise_seed=7)
    assert [(p.scene_id, p.frame_index, p.instance_id, p.caption) for p in a.pairs] == \
           [(p.scene_id, p.frame_index, p.instance_id, p.caption) for p in b.pairs]
    assert len(a.skipped) == len(b.skipped)


def test_synth_pipeline_filter_rate_tracks_noise():
    # only 3-slot corruptions land under the 0.3 gate, so the filtered share
    # is near noise_prob * 0.15
    scenes = [generate_scene(s) for s in range(6)]
    result = synth_pipeline(scenes, frame_stride=5, n_frames=100, noise_prob=0.4)
    stats = dataset_stats(result)
    judged = stats["emitted"] + stats["filtered"]
    assert judged > 200
    rate = stats["filtered"] / judged
    assert abs(rate - 0.4 * 0.15) < 0.04
    for s in result.skipped:
        if s.reason == "filtered":
            assert s.similarity is not None and s.similarity < 0.3


def test_synth_pipeline_validation():
    with pytest.raises(ValueError):
        synth_pipeline([], frame_stride=0)
    with pytest.raises(ValueError):
        synth_pipeline([], sim_threshold=2.0)


def test_vocab_constants():
    assert len(CLASS_NAMES) == 8
    assert len(COLOR_NAMES) == 6
    assert len(SIZE_NAMES) == 4
    assert len(set(CLASS_NAMES + COLOR_NAMES + SIZE_NAMES)) == 18
