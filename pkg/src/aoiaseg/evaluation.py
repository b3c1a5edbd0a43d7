"""Instance segmentation metrics: AP over IoU thresholds, mean precision/recall."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .pcio import CategoryConfig, Clustering

AP_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2).tolist())


@dataclass
class EvalReport:
    thresholds: tuple
    ap: dict                     # category -> {threshold: AP}
    mAP: float
    ap50: float
    ap25: float
    precision: dict              # category -> precision at IoU 0.5
    recall: dict                 # category -> recall at IoU 0.5
    mPrec: float
    mRec: float
    gt_counts: dict = field(default_factory=dict)
    pred_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mAP": self.mAP, "AP50": self.ap50, "AP25": self.ap25,
            "mPrec": self.mPrec, "mRec": self.mRec,
            "per_category": {
                str(c): {
                    "AP": float(np.mean([self.ap[c][t] for t in self.thresholds])),
                    "AP50": self.ap[c][0.5], "AP25": self.ap[c][0.25],
                    "gt": self.gt_counts.get(c, 0), "pred": self.pred_counts.get(c, 0),
                }
                for c in sorted(self.ap)
            },
        }

    def to_keyvalue(self) -> str:
        lines = [f"{k}={v:.6f}" for k, v in (
            ("mAP", self.mAP), ("AP50", self.ap50), ("AP25", self.ap25),
            ("mPrec", self.mPrec), ("mRec", self.mRec))]
        for c in sorted(self.ap):
            ap = float(np.mean([self.ap[c][t] for t in self.thresholds]))
            lines.append(f"cat.{c}.AP={ap:.6f}")
            lines.append(f"cat.{c}.AP50={self.ap[c][0.5]:.6f}")
            lines.append(f"cat.{c}.AP25={self.ap[c][0.25]:.6f}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def table(self, names: Optional[dict] = None) -> str:
        rows = [f"{'category':<16}{'AP':>8}{'AP50':>8}{'AP25':>8}{'gt':>6}{'pred':>6}"]
        for c in sorted(self.ap):
            label = (names or {}).get(c, str(c))
            ap = float(np.mean([self.ap[c][t] for t in self.thresholds]))
            rows.append(f"{label:<16}{ap:8.3f}{self.ap[c][0.5]:8.3f}{self.ap[c][0.25]:8.3f}"
                        f"{self.gt_counts.get(c, 0):6d}{self.pred_counts.get(c, 0):6d}")
        rows.append(f"{'average':<16}{self.mAP:8.3f}{self.ap50:8.3f}{self.ap25:8.3f}")
        rows.append(f"mPrec={self.mPrec:.3f} mRec={self.mRec:.3f}")
        return "\n".join(rows)


def _position_map(assignment: np.ndarray, ids) -> np.ndarray:
    """Per point: position of its cluster id within ``ids``, or -1."""
    ids = np.asarray(ids, dtype=np.int64)
    lut = np.full(max(int(assignment.max(initial=-1)), int(ids.max(initial=-1))) + 2, -1, dtype=np.int64)
    lut[ids + 1] = np.arange(len(ids))
    return lut[assignment + 1]


def iou_matrix(pred: Clustering, gt: Clustering, pred_ids=None, gt_ids=None) -> np.ndarray:
    """IoU between point sets of every (pred, gt) cluster pair, rows/cols in id order."""
    if len(pred) != len(gt):
        raise ValueError(f"prediction covers {len(pred)} points, ground truth {len(gt)}")
    pred_ids = list(pred.categories) if pred_ids is None else list(pred_ids)
    gt_ids = list(gt.categories) if gt_ids is None else list(gt_ids)
    if not pred_ids or not gt_ids:
        return np.zeros((len(pred_ids), len(gt_ids)))
    p_map = _position_map(pred.assignment, pred_ids)
    g_map = _position_map(gt.assignment, gt_ids)
    p_size = np.bincount(p_map[p_map >= 0], minlength=len(pred_ids)).astype(np.float64)
    g_size = np.bincount(g_map[g_map >= 0], minlength=len(gt_ids)).astype(np.float64)
    both = (p_map >= 0) & (g_map >= 0)
    inter = np.zeros((len(pred_ids), len(gt_ids)))
    np.add.at(inter, (p_map[both], g_map[both]), 1.0)
    union = p_size[:, None] + g_size[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def _ranked(pred: Clustering, ids) -> list:
    """Prediction order: confidence desc, then size desc, then id."""
    sizes = np.bincount(pred.assignment[pred.assignment >= 0], minlength=max(ids, default=-1) + 1)
    return sorted(ids, key=lambda c: (-pred.score(c), -int(sizes[c]), c))


def _category_iou(pred: Clustering, gt: Clustering, category: int):
    """IoU table for one category, rows in ranked prediction order."""
    p_ids = _ranked(pred, [c for c, cat in pred.categories.items() if cat == category])
    g_ids = sorted(c for c, cat in gt.categories.items() if cat == category)
    return iou_matrix(pred, gt, p_ids, g_ids)


def greedy_match(iou: np.ndarray, threshold: float) -> np.ndarray:
    """TP flag per prediction row, rows already in ranked order."""
    n_pred, n_gt = iou.shape
    taken = np.zeros(n_gt, dtype=bool)
    tp = np.zeros(n_pred, dtype=bool)
    if n_gt == 0:
        return tp
    for k in range(n_pred):
        cand = np.where(taken | (iou[k] < threshold), -1.0, iou[k])
        j = int(np.argmax(cand))
        if cand[j] >= 0:
            taken[j] = True
            tp[k] = True
    return tp


def match(pred: Clustering, gt: Clustering, category: int, threshold: float):
    """Greedy one-to-one matching for one category.

    Predictions in ranked order each claim the unmatched ground-truth
    instance with the highest IoU >= threshold (lowest id on ties).  Returns
    (per-prediction TP flags in ranked order, number of GT instances).
    """
    iou = _category_iou(pred, gt, category)
    return greedy_match(iou, threshold), iou.shape[1]


def ap_from_matches(tp: np.ndarray, n_gt: int) -> float:
    """Area under the precision envelope (all-point interpolation)."""
    if n_gt == 0:
        return float("nan")
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def average_precision(pred: Clustering, gt: Clustering, iou_threshold: float, category: int) -> float:
    """AP for one category; NaN when the category has no ground-truth instance."""
    tp, n_gt = match(pred, gt, category, iou_threshold)
    return ap_from_matches(tp, n_gt)


def precision_recall(pred: Clustering, gt: Clustering, iou_threshold: float = 0.5, categories=None):
    """Mean per-category precision and recall.

    Returns (mPrec, mRec, per-category precision, per-category recall).
    Categories without GT but with predictions count toward mPrec only
    (precision 0); categories with GT but no predictions have precision 0.
    """
    cats = set(pred.categories.values()) | set(gt.categories.values())
    if categories is not None:
        cats &= set(categories)
    prec, rec = {}, {}
    for cat in sorted(cats):
        tp, n_gt = match(pred, gt, cat, iou_threshold)
        n_pred = len(tp)
        prec[cat] = float(tp.sum()) / n_pred if n_pred else 0.0
        if n_gt:
            rec[cat] = float(tp.sum()) / n_gt
    m_prec = float(np.mean(list(prec.values()))) if prec else 0.0
    m_rec = float(np.mean(list(rec.values()))) if rec else 0.0
    return m_prec, m_rec, prec, rec


def evaluate(pred: Clustering, gt: Clustering, config: Optional[CategoryConfig] = None) -> EvalReport:
    if len(pred) != len(gt):
        raise ValueError(f"prediction covers {len(pred)} points, ground truth {len(gt)}")
    fg = None if config is None else config.foreground
    gt_cats = sorted({c for c in gt.categories.values() if fg is None or c in fg})
    thresholds = AP_THRESHOLDS
    ap = {}
    for cat in gt_cats:
        iou = _category_iou(pred, gt, cat)
        ap[cat] = {t: ap_from_matches(greedy_match(iou, t), iou.shape[1]) for t in thresholds + (0.25,)}
    if ap:
        per_t = {t: float(np.mean([ap[c][t] for c in ap])) for t in thresholds + (0.25,)}
        m_ap = float(np.mean([per_t[t] for t in thresholds]))
        ap50, ap25 = per_t[0.5], per_t[0.25]
    else:
        m_ap = ap50 = ap25 = 0.0
    m_prec, m_rec, prec, rec = precision_recall(pred, gt, 0.5, fg)
    gt_counts: dict = {}
    for c in gt.categories.values():
        gt_counts[c] = gt_counts.get(c, 0) + 1
    pred_counts: dict = {}
    for c in pred.categories.values():
        pred_counts[c] = pred_counts.get(c, 0) + 1
    return EvalReport(thresholds, ap, m_ap, ap50, ap25, prec, rec, m_prec, m_rec, gt_counts, pred_counts)
