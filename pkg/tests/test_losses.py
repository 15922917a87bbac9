import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from groundcap.geometry import AABB
from groundcap.losses import (
    STAGES,
    LossBundle,
    caption_loss,
    class_loss,
    compose_loss,
    grounding_loss,
    grounding_nll,
    target_box_index,
)


def unit_box(x):
    return AABB((x, 0, 0), (x + 1, 1, 1))


# ---------------------------------------------------------------------------
# target selection


def test_target_box_index_picks_highest_iou():
    proposals = [unit_box(0), unit_box(0.5), unit_box(3)]
    assert target_box_index(proposals, unit_box(0.4)) == 1
    assert target_box_index(proposals, unit_box(0)) == 0


def test_target_box_index_tie_goes_low():
    proposals = [unit_box(0), unit_box(0)]
    assert target_box_index(proposals, unit_box(0)) == 0
    # no overlap anywhere: everything ties at zero -> index 0
    assert target_box_index(proposals, unit_box(50)) == 0
    with pytest.raises(ValueError):
        target_box_index([], unit_box(0))


# ---------------------------------------------------------------------------
# grounding / class losses


def test_grounding_nll_uniform_is_log_m():
    scores = torch.full((4,), 0.25)
    loss = grounding_nll(scores, torch.tensor(2))
    assert loss.item() == pytest.approx(math.log(4.0), abs=1e-6)


def test_grounding_nll_perfect_is_zero():
    scores = torch.tensor([[0.0, 1.0, 0.0]])
    loss = grounding_nll(scores, torch.tensor([1]))
    assert loss.item() == 0.0


def test_grounding_nll_batch_mean():
    scores = torch.tensor([[0.5, 0.5], [0.25, 0.75]])
    loss = grounding_nll(scores, torch.tensor([0, 1]))
    want = (-math.log(0.5) - math.log(0.75)) / 2.0
    assert loss.item() == pytest.approx(want, abs=1e-6)


def test_grounding_nll_clamps_zero_probability():
    scores = torch.tensor([[1.0, 0.0]])
    loss = grounding_nll(scores, torch.tensor([1]))
    assert torch.isfinite(loss)
    assert loss.item() == pytest.approx(-math.log(1e-12), rel=1e-6)


def test_grounding_loss_routes_through_target_index():
    proposals = [unit_box(0), unit_box(5)]
    scores = torch.tensor([0.9, 0.1])
    loss = grounding_loss(scores, proposals, unit_box(5.2))
    assert loss.item() == pytest.approx(-math.log(0.1), abs=1e-5)
    with pytest.raises(ValueError):
        grounding_loss(torch.tensor([0.5, 0.5, 0.0]), proposals, unit_box(0))


def test_class_loss_matches_cross_entropy():
    logits = torch.tensor([[2.0, 0.0, -1.0]])
    want = torch.nn.functional.cross_entropy(logits, torch.tensor([0]))
    got = class_loss(logits[0], torch.tensor(0))
    assert got.item() == pytest.approx(want.item(), abs=1e-7)
    # uniform logits over V classes -> ln V
    v = 5
    got = class_loss(torch.zeros(v), torch.tensor(3))
    assert got.item() == pytest.approx(math.log(v), abs=1e-6)


# ---------------------------------------------------------------------------
# caption loss


def test_caption_loss_per_sequence_then_batch_mean():
    # two sequences with different real lengths; hand-computed normalization
    logits = torch.zeros(2, 3, 4)  # uniform -> every position costs ln 4
    targets = torch.zeros(2, 3, dtype=torch.long)
    real = torch.tensor([[True, True, True], [True, False, False]])
    loss = caption_loss(logits, targets, real)
    assert loss.item() == pytest.approx(math.log(4.0), abs=1e-6)

    # make position costs differ to verify per-sequence-first averaging
    logits = torch.zeros(2, 2, 2)
    logits[0, 0] = torch.tensor([10.0, 0.0])  # seq 0, pos 0: ~0 cost on target 0
    targets = torch.zeros(2, 2, dtype=torch.long)
    real = torch.tensor([[True, True], [True, False]])
    # seq0: (0 + ln2)/2, seq1: ln2 -> mean = 0.75 ln2 (plus tiny softmax tail)
    loss = caption_loss(logits, targets, real)
    assert loss.item() == pytest.approx(0.75 * math.log(2.0), abs=1e-4)


def test_caption_loss_rejects_all_pad_sequence():
    logits = torch.zeros(1, 2, 4)
    targets = torch.zeros(1, 2, dtype=torch.long)
    real = torch.zeros(1, 2, dtype=torch.bool)
    with pytest.raises(ValueError):
        caption_loss(logits, targets, real)


# ---------------------------------------------------------------------------
# stage composition


def test_stages_tuple():
    assert STAGES == ("pretrain", "joint", "finetune_grounding", "finetune_captioning")


def test_compose_loss_stage_formulas():
    g, c_cls, c = torch.tensor(1.0), torch.tensor(0.5), torch.tensor(2.0)
    fg = compose_loss("finetune_grounding", l_g=g, l_cls=c_cls)
    assert fg.total.item() == pytest.approx(1.5)
    fc = compose_loss("finetune_captioning", l_c=c)
    assert fc.total.item() == pytest.approx(2.0)
    jt = compose_loss("joint", l_g=g, l_cls=c_cls, l_c=c)
    assert jt.total.item() == pytest.approx(3.5)
    pt = compose_loss("pretrain", l_g=g, l_cls=c_cls, l_c=c)
    assert pt.total.item() == pytest.approx(3.5)
    assert jt.l_pg == 0.0
    assert fc.l_g is None and fc.l_cls is None


def test_compose_loss_missing_term_raises():
    g = torch.tensor(1.0)
    with pytest.raises(ValueError):
        compose_loss("joint", l_g=g, l_cls=g)  # no l_c
    with pytest.raises(ValueError):
        compose_loss("finetune_grounding", l_g=g)  # no l_cls
    with pytest.raises(ValueError):
        compose_loss("warmup", l_g=g, l_cls=g, l_c=g)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
@settings(max_examples=60, deadline=None)
def test_compose_loss_total_is_plain_sum(a, b, c):
    g, c_cls, cc = (torch.tensor(x, dtype=torch.float64) for x in (a, b, c))
    jt = compose_loss("joint", l_g=g, l_cls=c_cls, l_c=cc)
    # left-associated addition, bit-for-bit
    assert jt.total.item() == ((g + c_cls) + cc).item()
    fg = compose_loss("finetune_grounding", l_g=g, l_cls=c_cls)
    assert fg.total.item() == (g + c_cls).item()


def test_loss_bundle_detached():
    g = torch.tensor(1.0, requires_grad=True)
    bundle = compose_loss("finetune_grounding", l_g=g, l_cls=g * 2)
    d = bundle.detached()
    assert isinstance(d, dict)
    assert d["total"] == pytest.approx(3.0)
    assert d["l_c"] is None


def test_loss_bundle_is_frozen():
    bundle = LossBundle(stage="joint", total=torch.tensor(0.0))
    with pytest.raises(AttributeError):
        bundle.total = torch.tensor(1.0)
