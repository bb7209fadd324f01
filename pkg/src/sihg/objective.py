"""Fermi-Dirac edge decoder, the training losses and evaluation metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import Tensor, as_tensor

PROB_CLIP = 1e-7


class NonFiniteLossError(FloatingPointError):
    def __init__(self, component: str, value: float):
        super().__init__(f"loss component {component!r} is not finite ({value})")
        self.component = component


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderParams:
    r: float = 2.0
    t: float = 1.0

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"temperature t must be positive, got {self.t}")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.83
    gamma: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


def fermi_dirac_logit(d, dec: DecoderParams = DecoderParams()) -> Tensor:
    """(r - d^2) / t, the log-odds of the Fermi-Dirac edge probability."""
    return (dec.r - ad.square(as_tensor(d))) / dec.t


def fermi_dirac_from_dist(d, dec: DecoderParams = DecoderParams()) -> Tensor:
    """1 / (exp((d^2 - r) / t) + 1), computed as a stable sigmoid."""
    return ad.sigmoid(fermi_dirac_logit(d, dec))


def fermi_dirac(z_i, z_j, manifold, dec: DecoderParams = DecoderParams()) -> Tensor:
    return fermi_dirac_from_dist(manifold.dist(z_i, z_j), dec)


def classification_loss(p, labels) -> Tensor:
    """Mean binary cross-entropy with probabilities clipped to [1e-7, 1 - 1e-7]."""
    p = as_tensor(p)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("classification loss needs at least one labelled edge")
    pc = ad.clamp(p, PROB_CLIP, 1.0 - PROB_CLIP)
    ll = labels * ad.log(pc) + (1.0 - labels) * ad.log(1.0 - pc)
    return -ll.mean()


def classification_loss_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy evaluated from log-odds.

    Equal to :func:`classification_loss` on ``sigmoid(logits)`` whenever the
    probabilities lie inside the clip range. Outside it the value keeps
    growing and, unlike a clipped probability, still has a gradient, so
    confidently wrong edges keep contributing to training.
    """
    x = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("classification loss needs at least one labelled edge")
    return (labels * ad.softplus(-x) + (1.0 - labels) * ad.softplus(x)).mean()


def hinge_mean(closer, farther) -> Tensor:
    """mean(max(0, closer - farther)); zero for an empty population."""
    closer = as_tensor(closer)
    if closer.shape[0] == 0:
        return Tensor(0.0)
    return ad.relu(closer - farther).mean()


def ranking_losses(z, pos_pairs: np.ndarray, pos_neutral: np.ndarray,
                   neg_pairs: np.ndarray, neg_neutral: np.ndarray, manifold):
    """Hinge losses: friends closer than a neutral node, foes farther than one.

    Pairs whose neutral draw failed (neutral index -1) are skipped.

    Returns:
        (L_pos, L_neg, skipped) where ``skipped`` counts dropped pairs.
    """
    z = as_tensor(z)
    pos_ok = pos_neutral >= 0
    neg_ok = neg_neutral >= 0
    skipped = int((~pos_ok).sum() + (~neg_ok).sum())
    pp, pk = pos_pairs[pos_ok], pos_neutral[pos_ok]
    npairs, nk = neg_pairs[neg_ok], neg_neutral[neg_ok]
    l_pos = hinge_mean(manifold.dist(z[pp[:, 0]], z[pp[:, 1]]),
                       manifold.dist(z[pp[:, 0]], z[pk])) if len(pp) else Tensor(0.0)
    l_neg = hinge_mean(manifold.dist(z[npairs[:, 0]], z[nk]),
                       manifold.dist(z[npairs[:, 0]], z[npairs[:, 1]])) if len(npairs) else Tensor(0.0)
    return l_pos, l_neg, skipped


def total_loss(cls, pos, neg, mim, w: LossWeights) -> Tensor:
    for name, part in (("cls", cls), ("pos", pos), ("neg", neg), ("mim", mim)):
        value = float(np.asarray(as_tensor(part).data))
        if not math.isfinite(value):
            raise NonFiniteLossError(name, value)
    return as_tensor(cls) + w.alpha * as_tensor(pos) + w.beta * as_tensor(neg) + w.gamma * as_tensor(mim)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    auc: float | None
    f1: float
    macro_f1: float
    micro_f1: float
    threshold: float = 0.5
    n_edges: int = 0

    def to_dict(self, **extra) -> dict:
        out = asdict(self)
        out.update(extra)
        return out

    def to_json(self, **extra) -> str:
        return json.dumps(self.to_dict(**extra), indent=2, sort_keys=True)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes in the evaluation set")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def evaluate(scores, labels, threshold: float = 0.5, require_auc: bool = False) -> EvalReport:
    """AUC, positive-class F1, macro-F1 and micro-F1 of link-sign predictions.

    A single-class evaluation set has no AUC; it is reported as ``None``
    unless ``require_auc`` is set, in which case the error propagates.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pred = scores >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    f1_pos = _f1(tp, fp, fn)
    f1_neg = _f1(tn, fn, fp)
    micro = _f1(tp + tn, fp + fn, fn + fp)
    try:
        auc = roc_auc(scores, y)
    except UndefinedMetricError:
        if require_auc:
            raise
        auc = None
    return EvalReport(auc, f1_pos, 0.5 * (f1_pos + f1_neg), micro, threshold, len(y))
