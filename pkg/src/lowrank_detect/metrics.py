"""Detection metrics: target-level Pd, pixel false-alarm rate, ROC/AUC,
object-level recall / false alarms / F1, IoU and binary cross-entropy."""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .detector import video_components
from .errors import InvalidArgument

FA_UNIT = 1e-5


def _same_shape(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def greedy_match(pred, gt, radius):
    """One-to-one matching of components in the same frame by ascending centroid distance.

    Returns a list of ``(pred_index, gt_index)`` pairs.
    """
    cands = []
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            if p.frame != g.frame:
                continue
            d = float(np.hypot(p.centroid[0] - g.centroid[0], p.centroid[1] - g.centroid[1]))
            if d <= radius:
                cands.append((d, i, j))
    cands.sort()
    used_p, used_g, pairs = set(), set(), []
    for _, i, j in cands:
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
            pairs.append((i, j))
    return pairs


def _disk(radius):
    r = int(np.floor(radius))
    d = np.arange(-r, r + 1)
    return (d[:, None] ** 2 + d[None, :] ** 2) <= radius ** 2


def dilate_frames(gt, radius):
    """Per-frame dilation of a ``(H, W, T)`` mask by a Euclidean disk."""
    gt = np.asarray(gt, dtype=bool)
    if radius <= 0 or not gt.any():
        return gt.copy()
    return ndimage.binary_dilation(gt, structure=_disk(radius)[:, :, None])


def pixel_pd_fa(mask, gt, match_radius=3.0):
    """Target-level detection probability and pixel false-alarm rate.

    A ground-truth component is detected when a predicted component centroid
    in the same frame lies within `match_radius` (greedy one-to-one). False
    alarms are predicted pixels outside the ground truth dilated by
    `match_radius`, divided by the total pixel count.
    """
    mask, gt = _same_shape(mask, gt)
    mask, gt = mask.astype(bool), gt.astype(bool)
    if mask.ndim == 2:
        mask, gt = mask[..., None], gt[..., None]
    pc, gc = video_components(mask), video_components(gt)
    pd = len(greedy_match(pc, gc, match_radius)) / len(gc) if gc else 1.0
    fa = np.count_nonzero(mask & ~dilate_frames(gt, match_radius)) / mask.size
    return pd, fa


def roc_auc(confidence, gt, n_thresholds=256, match_radius=3.0):
    """Pixel ROC over confidence thresholds and its trapezoidal area.

    Each sample is ``(threshold, fa, pd)``: `fa` is the false-alarm pixel
    rate as in :func:`pixel_pd_fa` and `pd` the fraction of ground-truth
    pixels at or above the threshold. The false-alarm axis is normalised by
    its maximum and the curve is closed with (0, 0) and (1, 1).
    """
    conf, gt = _same_shape(confidence, gt)
    conf = conf.astype(float)
    gt = gt.astype(bool)
    if conf.ndim == 2:
        conf, gt = conf[..., None], gt[..., None]
    far = ~dilate_frames(gt, match_radius)
    pos = np.sort(conf[gt])
    neg = np.sort(conf[far])
    thr = np.unique(conf)[::-1]
    if n_thresholds and thr.size > n_thresholds:
        thr = thr[np.round(np.linspace(0, thr.size - 1, n_thresholds)).astype(int)]
    n_pos = np.searchsorted(pos, thr, side="left")
    n_neg = np.searchsorted(neg, thr, side="left")
    pd = (pos.size - n_pos) / pos.size if pos.size else np.ones(thr.size)
    fa_count = neg.size - n_neg
    fa = fa_count / conf.size
    x = fa_count / neg.size if neg.size else np.zeros(thr.size)
    xs = np.concatenate([[0.0], x, [1.0]])
    ys = np.concatenate([[0.0], pd, [1.0]])
    auc = float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2))
    samples = [(float(a), float(b), float(c)) for a, b, c in zip(thr, fa, pd)]
    return samples, auc


def object_metrics(components_pred, components_gt, match_radius=3.0):
    """Object-level recall, false-alarm rate ``FP / (TP + FP)`` and F1."""
    tp = len(greedy_match(components_pred, components_gt, match_radius))
    fp = len(components_pred) - tp
    fn = len(components_gt) - tp
    if not components_gt and not components_pred:
        return 1.0, 0.0, 1.0
    recall = tp / (tp + fn) if components_gt else 1.0
    precision = tp / (tp + fp) if components_pred else 0.0
    fa = fp / (tp + fp) if components_pred else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return recall, fa, f1


def iou(mask, gt):
    mask, gt = _same_shape(mask, gt)
    mask, gt = mask.astype(bool), gt.astype(bool)
    union = np.count_nonzero(mask | gt)
    return 1.0 if union == 0 else np.count_nonzero(mask & gt) / union


def bce_loss(confidence, gt, eps=1e-7):
    """Summed binary cross-entropy with the confidence clamped to ``[eps, 1 - eps]``."""
    p, y = _same_shape(confidence, gt)
    p = np.clip(p.astype(float), eps, 1 - eps)
    y = y.astype(float)
    return float(-np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)))


@dataclass
class MetricsReport:
    pd: float
    fa: float
    auc: float
    rt: float
    fat: float
    f1t: float
    iou: float
    roc: list = field(default_factory=list)

    def to_text(self):
        lines = [
            f"pd={self.pd:.6f}",
            f"fa={self.fa:.9g}",
            f"fa_1e-5={self.fa / FA_UNIT:.6f}",
            f"auc={self.auc:.6f}",
            f"rt={self.rt:.6f}",
            f"fat={self.fat:.6f}",
            f"f1t={self.f1t:.6f}",
            f"iou={self.iou:.6f}",
        ]
        return "\n".join(lines) + "\n"

    def roc_csv(self):
        rows = ["threshold,fa,pd"] + [f"{t:.9g},{f:.9g},{p:.9g}" for t, f, p in self.roc]
        return "\n".join(rows) + "\n"


def evaluate(mask, gt, confidence=None, match_radius=3.0, n_thresholds=256):
    """All metrics for one sequence. Without `confidence` the mask itself is scored for AUC."""
    mask, gt = _same_shape(mask, gt)
    mask, gt = mask.astype(bool), gt.astype(bool)
    pd, fa = pixel_pd_fa(mask, gt, match_radius)
    conf = mask.astype(float) if confidence is None else confidence
    roc, auc = roc_auc(conf, gt, n_thresholds, match_radius)
    rt, fat, f1t = object_metrics(video_components(mask), video_components(gt), match_radius)
    return MetricsReport(pd=pd, fa=fa, auc=auc, rt=rt, fat=fat, f1t=f1t, iou=iou(mask, gt), roc=roc)
