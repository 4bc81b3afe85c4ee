"""The three training losses and their weighted combination.

All losses are means over their own token counts so the default unit weights
keep the terms on comparable scales across batch sizes. The joint value is
formed by the same additions that the report stores; no re-derivation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class ObjectiveConfig:
    alpha: float = 1.0  # weight of the drop-detection loss
    beta: float = 1.0  # weight of the dropped-token prediction loss

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("objective weights must be >= 0")


@dataclass
class LossReport:
    l_m: float
    l_rtd: float
    l_dtp: float
    joint: float
    target_tokens: int = 0
    droppable_tokens: int = 0
    dropped_tokens: int = 0
    no_signal: bool = False

    def perplexity(self):
        return math.exp(self.l_m)

    def to_dict(self):
        return {
            "l_m": self.l_m,
            "l_rtd": self.l_rtd,
            "l_dtp": self.l_dtp,
            "joint": self.joint,
            "perplexity": self.perplexity(),
        }


class NonFiniteLossError(RuntimeError):
    """A loss component left the finite range; training must abort."""

    def __init__(self, component, value):
        super().__init__(f"loss component {component} is non-finite: {value}")
        self.component = component


_PROB_FLOOR = 1e-12


def translation_loss(logits, target_output, pad_id):
    """Mean negative log-likelihood over non-pad target positions."""
    b, length, v = logits.data.shape
    flat = ad.reshape(logits, (b * length, v))
    return ad.cross_entropy(flat, np.asarray(target_output).reshape(-1), ignore_id=pad_id)


def rtd_loss(probs, mask, droppable):
    """Binary cross-entropy of drop probabilities against the true mask,
    averaged over droppable positions. Returns a tensor carrying a
    `no_signal` flag when nothing was droppable."""
    droppable = np.asarray(droppable, dtype=bool)
    count = int(droppable.sum())
    if count == 0:
        out = ad.mul(ad.tsum(probs), 0.0)
        out.no_signal = True
        return out
    labels = np.asarray(mask, dtype=np.float64)
    p = ad.clip(probs, _PROB_FLOOR, 1.0 - _PROB_FLOOR)
    per_pos = ad.add(ad.mul(ad.log(p), labels),
                     ad.mul(ad.log(ad.sub(1.0, p)), 1.0 - labels))
    masked = ad.mul(per_pos, droppable.astype(np.float64))
    out = ad.mul(ad.tsum(masked), -1.0 / count)
    out.no_signal = False
    return out


def dtp_loss(dtp_logits, original_ids):
    """Mean NLL of the true original token at each dropped position."""
    original_ids = np.asarray(original_ids)
    if dtp_logits.data.shape[0] == 0:
        out = ad.mul(ad.tsum(dtp_logits), 0.0)
        out.no_signal = True
        return out
    return ad.cross_entropy(dtp_logits, original_ids)


def joint_loss(l_m, l_rtd, l_dtp, cfg):
    """Weighted sum of the three loss tensors plus its scalar report.

    Returns (joint tensor, LossReport). The report's `joint` field is the
    value of the returned tensor itself.
    """
    for name, t in (("l_m", l_m), ("l_rtd", l_rtd), ("l_dtp", l_dtp)):
        if not np.isfinite(t.data):
            raise NonFiniteLossError(name, float(t.data))
    joint = ad.add(ad.add(l_m, ad.mul(l_rtd, cfg.alpha)), ad.mul(l_dtp, cfg.beta))
    report = LossReport(
        l_m=float(l_m.data),
        l_rtd=float(l_rtd.data),
        l_dtp=float(l_dtp.data),
        joint=float(joint.data),
        no_signal=bool(getattr(l_rtd, "no_signal", False) or getattr(l_dtp, "no_signal", False)),
    )
    return joint, report
