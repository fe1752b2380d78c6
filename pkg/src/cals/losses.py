"""Calibration-aware classification losses with analytic logit gradients.

Every per-sample loss returns ``(values, grad)`` where ``values`` has shape
``(B,)`` and ``grad[i]`` is the gradient of ``values[i]`` with respect to the
logits of sample ``i`` (shape ``(B, K)``). ``total_loss`` reduces to the batch
mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .nn import log_softmax
from .penalties import PenaltyKind, penalty_derivative, penalty_value


class LossKind(str, Enum):
    CE = "ce"
    LS = "ls"
    FL = "fl"
    FLSD = "flsd"
    ECP = "ecp"
    MBLS = "mbls"
    CALS_ALM = "cals_alm"
    CALS_HR = "cals_hr"

    @classmethod
    def parse(cls, value: "str | LossKind") -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown loss kind {value!r}; expected one of {choices}") from None

    @property
    def is_cals(self) -> bool:
        return self in (LossKind.CALS_ALM, LossKind.CALS_HR)


@dataclass
class LossSelection:
    kind: LossKind = LossKind.CALS_ALM
    smoothing_alpha: float = 0.05
    focal_gamma: float = 3.0
    ecp_weight: float = 0.1
    mbls_weight: float = 0.1
    margin_m: float = 10.0

    def __post_init__(self):
        self.kind = LossKind.parse(self.kind)
        if not 0.0 <= self.smoothing_alpha < 1.0:
            raise ValueError("smoothing_alpha must lie in [0, 1)")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be non-negative")
        if self.ecp_weight < 0 or self.mbls_weight < 0:
            raise ValueError("penalty weights must be non-negative")
        if not self.margin_m > 0:
            raise ValueError("margin_m must be positive")


def _check(logits, labels=None):
    l = np.asarray(logits, dtype=np.float64)
    if l.ndim != 2:
        raise ValueError("logits must be a (batch, K) matrix")
    if not np.all(np.isfinite(l)):
        raise ValueError("logits must be finite")
    if labels is None:
        return l
    y = np.asarray(labels)
    if y.shape != (l.shape[0],):
        raise ValueError("labels must be a vector with one entry per logit row")
    if y.size and (y.min() < 0 or y.max() >= l.shape[1]):
        raise ValueError(f"labels must lie in [0, {l.shape[1]})")
    return l, y.astype(np.int64)


def _onehot(labels, k):
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy(logits, labels):
    l, y = _check(logits, labels)
    logp = log_softmax(l)
    rows = np.arange(l.shape[0])
    return -logp[rows, y], np.exp(logp) - _onehot(y, l.shape[1])


def label_smoothing_loss(logits, labels, alpha: float):
    """Cross-entropy against ``(1 - alpha) * onehot + alpha / K``."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    l, y = _check(logits, labels)
    k = l.shape[1]
    logp = log_softmax(l)
    target = (1.0 - alpha) * _onehot(y, k) + alpha / k
    return -(target * logp).sum(axis=1), np.exp(logp) - target


def _focal(l, y, gamma):
    # gamma is a per-sample vector
    logp = log_softmax(l)
    s = np.exp(logp)
    rows = np.arange(l.shape[0])
    logpt = logp[rows, y]
    pt = s[rows, y]
    # 1 - p_t as the sum of the other probabilities keeps precision near p_t = 1
    rest = s.sum(axis=1) - pt
    rest = np.where(rest > 0, rest, 0.0)
    weight = np.where(gamma > 0, rest ** gamma, 1.0)
    values = -weight * logpt
    # d/dl_j of -(1-p)^g log p = (delta_jy - s_j) * (g (1-p)^(g-1) p log p - (1-p)^g)
    with np.errstate(divide="ignore", invalid="ignore"):
        dweight = np.where((gamma > 0) & (rest > 0), gamma * rest ** (gamma - 1.0), 0.0)
    coeff = dweight * pt * logpt - weight
    grad = (_onehot(y, l.shape[1]) - s) * coeff[:, None]
    return values, grad


def focal_loss(logits, labels, gamma: float):
    """``-(1 - s_y)^gamma * log s_y``."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    l, y = _check(logits, labels)
    return _focal(l, y, np.full(l.shape[0], float(gamma)))


FLSD_LOW_PROB = 0.2
FLSD_GAMMA_LOW = 5.0
FLSD_GAMMA_HIGH = 3.0


def flsd_gamma(true_class_probs) -> np.ndarray:
    p = np.asarray(true_class_probs, dtype=np.float64)
    return np.where(p < FLSD_LOW_PROB, FLSD_GAMMA_LOW, FLSD_GAMMA_HIGH)


def flsd_loss(logits, labels):
    """Focal loss with gamma=5 when ``s_y < 0.2`` and gamma=3 otherwise.

    gamma is treated as piecewise constant; no gradient flows through the switch.
    """
    l, y = _check(logits, labels)
    pt = np.exp(log_softmax(l)[np.arange(l.shape[0]), y])
    return _focal(l, y, flsd_gamma(pt))


def entropy(logits) -> np.ndarray:
    logp = log_softmax(_check(logits))
    return -(np.exp(logp) * logp).sum(axis=1)


def ecp_loss(logits, labels, weight: float):
    """Cross-entropy minus ``weight`` times the Shannon entropy of the prediction."""
    if weight < 0:
        raise ValueError("weight must be non-negative")
    l, y = _check(logits, labels)
    ce, ce_grad = cross_entropy(l, y)
    if weight == 0:
        return ce, ce_grad
    logp = log_softmax(l)
    s = np.exp(logp)
    h = -(s * logp).sum(axis=1)
    # dH/dl_j = -s_j (log s_j + H)
    dh = -s * (logp + h[:, None])
    return ce - weight * h, ce_grad - weight * dh


def logit_distances(logits) -> np.ndarray:
    """``d_k = max_j l_j - l_k``; zero at the argmax, non-negative elsewhere."""
    l = _check(logits)
    return l.max(axis=1, keepdims=True) - l


def _distance_backward(l, upstream):
    # d_k = l_a - l_k with a the argmax (lowest index on ties)
    a = np.argmax(l, axis=1)
    grad = -upstream
    grad[np.arange(l.shape[0]), a] += upstream.sum(axis=1)
    return grad


def mbls_penalty(logits, margin_m: float):
    """``sum_j max(0, d_j - m)`` per sample."""
    if not margin_m > 0:
        raise ValueError("margin_m must be positive")
    l = _check(logits)
    excess = logit_distances(l) - margin_m
    active = excess > 0
    values = np.where(active, excess, 0.0).sum(axis=1)
    return values, _distance_backward(l, active.astype(np.float64))


def normalized_constraints(logits, margin_m: float) -> np.ndarray:
    """``d_k / m - 1``: non-positive exactly when the margin constraint holds."""
    return logit_distances(logits) / margin_m - 1.0


def cals_penalty(logits, margin_m: float, lambdas, rhos, kind: PenaltyKind | str = PenaltyKind.PHR):
    """``(1/K) sum_k P(d_k / m - 1, rho_k, lam_k)`` per sample.

    Multipliers are indexed by logit position, independently of the label.
    """
    if not margin_m > 0:
        raise ValueError("margin_m must be positive")
    l = _check(logits)
    k = l.shape[1]
    lam = np.asarray(lambdas, dtype=np.float64)
    rho = np.asarray(rhos, dtype=np.float64)
    if lam.shape != (k,) or rho.shape != (k,):
        raise ValueError(f"lambdas and rhos must have length K={k}")
    z = normalized_constraints(l, margin_m)
    values = penalty_value(kind, z, rho, lam).sum(axis=1) / k
    upstream = penalty_derivative(kind, z, rho, lam) / (k * margin_m)
    return np.asarray(values).reshape(-1), _distance_backward(l, np.asarray(upstream))


def per_sample_loss(selection: LossSelection, logits, labels, multipliers=None,
                    penalty_kind: PenaltyKind | str = PenaltyKind.PHR):
    """Per-sample values and logit gradients of the selected training objective."""
    kind = selection.kind
    if kind is LossKind.CE:
        return cross_entropy(logits, labels)
    if kind is LossKind.LS:
        return label_smoothing_loss(logits, labels, selection.smoothing_alpha)
    if kind is LossKind.FL:
        return focal_loss(logits, labels, selection.focal_gamma)
    if kind is LossKind.FLSD:
        return flsd_loss(logits, labels)
    if kind is LossKind.ECP:
        return ecp_loss(logits, labels, selection.ecp_weight)
    ce, ce_grad = cross_entropy(logits, labels)
    if kind is LossKind.MBLS:
        pen, pen_grad = mbls_penalty(logits, selection.margin_m)
        return ce + selection.mbls_weight * pen, ce_grad + selection.mbls_weight * pen_grad
    if multipliers is None:
        raise ValueError(f"loss kind {kind.value!r} requires class-wise multipliers")
    pen, pen_grad = cals_penalty(logits, selection.margin_m, multipliers.lambdas,
                                 multipliers.rhos, penalty_kind)
    return ce + pen, ce_grad + pen_grad


def total_loss(selection: LossSelection, logits, labels, multipliers: Optional[object] = None,
               penalty_kind: PenaltyKind | str = PenaltyKind.PHR) -> tuple[float, np.ndarray]:
    """Batch mean of the per-sample objective, ``(1/B)(L_c + L_p)``, and its logit gradient."""
    values, grad = per_sample_loss(selection, logits, labels, multipliers, penalty_kind)
    b = values.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    return float(values.sum() / b), grad / b
