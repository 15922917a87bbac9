"""Evaluation protocol: grounding accuracy, dense-captioning P/R/F1 at IoU
thresholds, sentence metrics (BLEU-4, ROUGE-L, CIDEr), detection mAP, and the
box-deduplication rule used before detection/captioning evaluation.

Conventions baked in here:

* Thresholded "positive" always means IoU strictly greater than k.
* Captioning precision matches every prediction to its argmax-IoU GT and
  recall matches every GT to its argmax-IoU prediction (independent sides).
* All values are fractions in [0, 1], except CIDEr scores in [0, 10].
  CSV export scales to the percent-style numbers used in result tables
  (x100; CIDEr x10).
"""

from __future__ import annotations

import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .geometry import AABB, iou
from .text import tokenize

__all__ = [
    "GroundingPrediction",
    "CaptionedBox",
    "DenseCapPrediction",
    "GTObject",
    "DenseCapGroundTruth",
    "Detection",
    "DetectionGT",
    "CiderIdf",
    "MetricReport",
    "SENTENCE_METRICS",
    "acc_at_kiou",
    "sentence_metric",
    "caption_prf",
    "map_at_k",
    "dedup_boxes",
    "grounding_report",
    "captioning_report",
]

SENTENCE_METRICS = ("cider", "bleu4", "rougel")


# ---------------------------------------------------------------------------
# record types


@dataclass(frozen=True)
class GroundingPrediction:
    query_id: str
    scene_id: str
    pred_box: AABB
    gt_box: AABB
    gt_class: str


@dataclass(frozen=True)
class CaptionedBox:
    box: AABB
    caption: str
    confidence: float

    def __post_init__(self):
        if not self.caption:
            raise ValueError("caption must be non-empty")


@dataclass
class DenseCapPrediction:
    scene_id: str
    items: list[CaptionedBox]


@dataclass
class GTObject:
    box: AABB
    references: list[str]
    semantic_class: str

    def __post_init__(self):
        if not self.references:
            raise ValueError("references must be non-empty")


@dataclass
class DenseCapGroundTruth:
    scene_id: str
    items: list[GTObject]


@dataclass(frozen=True)
class Detection:
    scene_id: str
    box: AABB
    semantic_class: str
    confidence: float


@dataclass(frozen=True)
class DetectionGT:
    scene_id: str
    box: AABB
    semantic_class: str


# ---------------------------------------------------------------------------
# grounding accuracy


def acc_at_kiou(preds: list[GroundingPrediction], k: float) -> dict:
    """Acc@kIoU with Unique/Multiple/Overall splits.

    A prediction is positive iff iou(pred, gt) > k. A query is Unique when
    its scene holds exactly one distinct GT box of the query's class (derived
    from the prediction records themselves); Multiple otherwise. Empty splits
    report 0 accuracy with a 0 count; Overall is the query-weighted pool.
    """
    if not 0.0 < k < 1.0:
        raise ValueError("k must lie in (0, 1)")
    distinct: dict[tuple[str, str], set] = defaultdict(set)
    for p in preds:
        key = (p.scene_id, p.gt_class)
        distinct[key].add((tuple(p.gt_box.lo.tolist()), tuple(p.gt_box.hi.tolist())))
    hits = {"unique": 0, "multiple": 0}
    counts = {"unique": 0, "multiple": 0}
    for p in preds:
        split = "unique" if len(distinct[(p.scene_id, p.gt_class)]) == 1 else "multiple"
        counts[split] += 1
        if iou(p.pred_box, p.gt_box) > k:
            hits[split] += 1
    total = counts["unique"] + counts["multiple"]
    return {
        "unique": hits["unique"] / counts["unique"] if counts["unique"] else 0.0,
        "multiple": hits["multiple"] / counts["multiple"] if counts["multiple"] else 0.0,
        "overall": (hits["unique"] + hits["multiple"]) / total if total else 0.0,
        "n_unique": counts["unique"],
        "n_multiple": counts["multiple"],
    }


# ---------------------------------------------------------------------------
# sentence metrics


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _bleu4(candidate: str, references: list[str]) -> float:
    """Corpus-style BLEU-4 on one sentence: clipped modified n-gram precision,
    geometric mean over n=1..4, add-one smoothing only where the clipped match
    count is zero, brevity penalty against the closest reference length."""
    cand = tokenize(candidate)
    refs = [tokenize(r) for r in references]
    if not cand or not refs:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        cand_counts = _ngrams(cand, n)
        total = sum(cand_counts.values())
        if total == 0:
            return 0.0  # candidate too short to form n-grams
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, c in _ngrams(ref, n).items():
                if c > max_ref[gram]:
                    max_ref[gram] = c
        matched = sum(min(c, max_ref[g]) for g, c in cand_counts.items())
        p = matched / total if matched > 0 else 1.0 / (total + 1.0)
        log_sum += 0.25 * math.log(p)
    c = len(cand)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def _rouge_l(candidate: str, references: list[str], beta: float = 1.2) -> float:
    """LCS F-measure: max precision and max recall over references, combined
    with beta weighting recall."""
    cand = tokenize(candidate)
    if not cand:
        return 0.0
    prec_max = rec_max = 0.0
    for r in references:
        ref = tokenize(r)
        if not ref:
            continue
        lcs = _lcs_len(cand, ref)
        prec_max = max(prec_max, lcs / len(cand))
        rec_max = max(rec_max, lcs / len(ref))
    if prec_max == 0.0 or rec_max == 0.0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * prec_max * rec_max / (rec_max + b2 * prec_max)


class CiderIdf:
    """Frozen document frequencies from the GT reference corpus.

    One "document" is one GT object's reference set; an n-gram's df counts the
    documents containing it. Weights are tf x log(N / max(1, df)).
    """

    def __init__(self, reference_sets: list[list[str]], max_n: int = 4):
        self.max_n = max_n
        self.n_docs = len(reference_sets)
        self.df: Counter = Counter()
        for refs in reference_sets:
            grams = set()
            for r in refs:
                toks = tokenize(r)
                for n in range(1, max_n + 1):
                    grams.update(_ngrams(toks, n).keys())
            self.df.update(grams)

    def weight_vector(self, sentence: str) -> tuple[list[dict], list[float]]:
        """Per-n TF-IDF vectors and their L2 norms."""
        toks = tokenize(sentence)
        log_n = math.log(max(self.n_docs, 1))
        vecs, norms = [], []
        for n in range(1, self.max_n + 1):
            vec = {}
            for gram, tf in _ngrams(toks, n).items():
                vec[gram] = tf * (log_n - math.log(max(1.0, self.df[gram])))
            vecs.append(vec)
            norms.append(math.sqrt(sum(v * v for v in vec.values())))
        return vecs, norms


def _cider(candidate: str, references: list[str], idf: CiderIdf) -> float:
    """Clipped TF-IDF cosine per n, averaged over references and n, x10."""
    cvecs, cnorms = idf.weight_vector(candidate)
    per_ref = []
    for r in references:
        rvecs, rnorms = idf.weight_vector(r)
        sims = []
        for n in range(idf.max_n):
            num = sum(
                min(w, rvecs[n].get(g, 0.0)) * rvecs[n].get(g, 0.0)
                for g, w in cvecs[n].items()
            )
            denom = cnorms[n] * rnorms[n]
            sims.append(num / denom if denom > 0 else 0.0)
        per_ref.append(sum(sims) / idf.max_n)
    return 10.0 * sum(per_ref) / len(per_ref)


def sentence_metric(metric: str, candidate: str, references: list[str],
                    corpus_context: CiderIdf | None = None) -> float:
    """One candidate against its references. "cider" requires corpus_context
    (the frozen GT-corpus IDF); "bleu4" and "rougel" ignore it."""
    if not references:
        raise ValueError("references must be non-empty")
    if metric == "bleu4":
        return _bleu4(candidate, references)
    if metric == "rougel":
        return _rouge_l(candidate, references)
    if metric == "cider":
        if corpus_context is None:
            raise ValueError("cider needs a corpus_context (CiderIdf)")
        return _cider(candidate, references, corpus_context)
    raise ValueError(f"unknown sentence metric {metric!r}")


# ---------------------------------------------------------------------------
# dense-captioning precision / recall / F1


def f1_score(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def build_cider_idf(gts: list[DenseCapGroundTruth]) -> CiderIdf:
    return CiderIdf([item.references for g in gts for item in g.items])


def caption_prf(preds: list[DenseCapPrediction], gts: list[DenseCapGroundTruth],
                metric: str, k: float,
                corpus_context: CiderIdf | None = None) -> dict:
    """Precision over predictions, recall over GTs, per-side argmax-IoU
    matching within each scene, u = [IoU > k], F1 = 2PR/(P+R) (0 at P+R=0)."""
    if metric not in SENTENCE_METRICS:
        raise ValueError(f"unknown sentence metric {metric!r}")
    n_gt = sum(len(g.items) for g in gts)
    if n_gt == 0:
        raise ValueError("empty ground-truth set")
    if metric == "cider" and corpus_context is None:
        corpus_context = build_cider_idf(gts)
    gt_by_scene = {g.scene_id: g.items for g in gts}
    pred_by_scene = {p.scene_id: p.items for p in preds}

    n_pred = sum(len(p.items) for p in preds)
    p_sum = 0.0
    for p in preds:
        gt_items = gt_by_scene.get(p.scene_id, [])
        for item in p.items:
            best, best_iou = None, -1.0
            for g in gt_items:
                v = iou(item.box, g.box)
                if v > best_iou:
                    best, best_iou = g, v
            if best is not None and best_iou > k:
                p_sum += sentence_metric(metric, item.caption, best.references, corpus_context)
    if n_pred == 0:
        warnings.warn("empty prediction set; precision reported as 0")
        precision = 0.0
    else:
        precision = p_sum / n_pred

    r_sum = 0.0
    for g in gts:
        pred_items = pred_by_scene.get(g.scene_id, [])
        for gt in g.items:
            best, best_iou = None, -1.0
            for item in pred_items:
                v = iou(item.box, gt.box)
                if v > best_iou:
                    best, best_iou = item, v
            if best is not None and best_iou > k:
                r_sum += sentence_metric(metric, best.caption, gt.references, corpus_context)
    recall = r_sum / n_gt
    return {"precision": precision, "recall": recall, "f1": f1_score(precision, recall)}


# ---------------------------------------------------------------------------
# detection mAP


def _average_precision(flags: list[bool], n_gt: int) -> float:
    """All-point interpolated AP from confidence-ordered TP/FP flags."""
    if n_gt == 0:
        return 0.0
    precisions, recalls = [], []
    tp = fp = 0
    for is_tp in flags:
        tp += is_tp
        fp += not is_tp
        precisions.append(tp / (tp + fp))
        recalls.append(tp / n_gt)
    ap = 0.0
    prev_r = 0.0
    for i, r in enumerate(recalls):
        if r > prev_r:
            ap += (r - prev_r) * max(precisions[i:])
            prev_r = r
    return ap


def map_at_k(dets: list[Detection], gts: list[DetectionGT], k: float) -> float:
    """Per class: sort detections by confidence descending (stable), greedily
    match each to the unmatched same-scene GT of highest IoU requiring
    IoU > k; AP is the all-point interpolated PR area. mAP averages classes
    with at least one GT."""
    if not 0.0 < k < 1.0:
        raise ValueError("k must lie in (0, 1)")
    classes = sorted({g.semantic_class for g in gts})
    if not classes:
        return 0.0
    aps = []
    for klass in classes:
        class_gts = [g for g in gts if g.semantic_class == klass]
        class_dets = sorted(
            (d for d in dets if d.semantic_class == klass),
            key=lambda d: -d.confidence,
        )
        matched: set[int] = set()
        flags = []
        for d in class_dets:
            best_j, best_iou = None, -1.0
            for j, g in enumerate(class_gts):
                if j in matched or g.scene_id != d.scene_id:
                    continue
                v = iou(d.box, g.box)
                if v > best_iou:
                    best_j, best_iou = j, v
            if best_j is not None and best_iou > k:
                matched.add(best_j)
                flags.append(True)
            else:
                flags.append(False)
        aps.append(_average_precision(flags, len(class_gts)))
    return sum(aps) / len(aps)


# ---------------------------------------------------------------------------
# box deduplication


def dedup_boxes(pred_boxes: list[AABB], gt_boxes: list[AABB]) -> list[int]:
    """Indices of surviving predictions, in original order.

    Each prediction is assigned to its argmax-IoU GT when that IoU is > 0
    (ties to the lower GT index); per GT only the highest-IoU prediction
    survives (ties to the lower prediction index). Predictions overlapping no
    GT are retained.
    """
    best_for_gt: dict[int, tuple[float, int]] = {}
    unassigned = []
    for i, pb in enumerate(pred_boxes):
        best_j, best_iou = None, 0.0
        for j, gb in enumerate(gt_boxes):
            v = iou(pb, gb)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j is None:
            unassigned.append(i)
            continue
        cur = best_for_gt.get(best_j)
        if cur is None or best_iou > cur[0]:
            best_for_gt[best_j] = (best_iou, i)
    keep = set(unassigned) | {i for _, i in best_for_gt.values()}
    return [i for i in range(len(pred_boxes)) if i in keep]


# ---------------------------------------------------------------------------
# report assembly


@dataclass
class MetricReport:
    """Full evaluation table. Values are fractions ([0,1]; CIDEr [0,10]).

    grounding: k -> {unique, multiple, overall}; captioning:
    (metric, k) -> {precision, recall, f1}; detection: k -> mAP. METEOR is
    carried as a null column in CSV output for table parity.
    """

    grounding: dict = field(default_factory=dict)
    captioning: dict = field(default_factory=dict)
    detection: dict = field(default_factory=dict)

    def validate(self) -> None:
        for k, row in self.grounding.items():
            for split in ("unique", "multiple", "overall"):
                if not 0.0 <= row[split] <= 1.0:
                    raise ValueError(f"grounding {split}@{k} out of range")
        for (metric, k), row in self.captioning.items():
            hi = 10.0 if metric == "cider" else 1.0
            for name in ("precision", "recall", "f1"):
                if not 0.0 <= row[name] <= hi:
                    raise ValueError(f"{metric}@{k} {name} out of range")
            if abs(row["f1"] - f1_score(row["precision"], row["recall"])) > 1e-9:
                raise ValueError(f"{metric}@{k} F1 inconsistent with P/R")
        for k, v in self.detection.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"mAP@{k} out of range")


def _pct(metric: str, value: float) -> str:
    scale = 10.0 if metric == "cider" else 100.0
    return f"{scale * value:.2f}"


def grounding_csv(report: MetricReport, ks: tuple[float, ...] = (0.25, 0.5)) -> str:
    lines = ["split," + ",".join(f"acc@{k}" for k in ks)]
    for split in ("unique", "multiple", "overall"):
        row = [f"{100.0 * report.grounding[k][split]:.2f}" for k in ks]
        lines.append(f"{split}," + ",".join(row))
    return "\n".join(lines) + "\n"


def captioning_csv(report: MetricReport, ks: tuple[float, ...] = (0.25, 0.5)) -> str:
    header = ["metric"]
    for k in ks:
        header += [f"p@{k}", f"r@{k}", f"f1@{k}"]
    lines = [",".join(header)]
    for metric in ("cider", "bleu4", "meteor", "rougel"):
        row = [metric]
        for k in ks:
            if metric == "meteor":
                row += ["", "", ""]  # omitted metric, null column for parity
            else:
                cell = report.captioning[(metric, k)]
                row += [_pct(metric, cell[n]) for n in ("precision", "recall", "f1")]
        lines.append(",".join(row))
    if report.detection:
        for k in sorted(report.detection):
            lines.append(f"map@{k},{100.0 * report.detection[k]:.2f}")
    return "\n".join(lines) + "\n"


def grounding_report(preds: list[GroundingPrediction],
                     ks: tuple[float, ...] = (0.25, 0.5)) -> MetricReport:
    report = MetricReport(grounding={k: acc_at_kiou(preds, k) for k in ks})
    report.validate()
    return report


def captioning_report(preds: list[DenseCapPrediction], gts: list[DenseCapGroundTruth],
                      dets: list[Detection] | None = None,
                      det_gts: list[DetectionGT] | None = None,
                      ks: tuple[float, ...] = (0.25, 0.5)) -> MetricReport:
    idf = build_cider_idf(gts)
    captioning = {
        (metric, k): caption_prf(preds, gts, metric, k, corpus_context=idf)
        for metric in SENTENCE_METRICS
        for k in ks
    }
    detection = {}
    if dets is not None and det_gts is not None:
        detection = {0.5: map_at_k(dets, det_gts, 0.5)}
    report = MetricReport(captioning=captioning, detection=detection)
    report.validate()
    return report
