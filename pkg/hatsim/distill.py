"""
Knowledge-distillation loss for the on-device draft adapter.

Loss = smooth_l1(f_target, f_draft) + w_ce * CE(softmax(H f_target), softmax(H f_draft))

Smooth-L1 uses transition 1.0 and a mean over the feature dimension; the
cross-entropy is the soft-label form with natural log.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DistillationInput:
    f_target: np.ndarray
    f_draft: np.ndarray
    head: np.ndarray
    w_ce: float = 0.1

    def __post_init__(self):
        f_target = np.asarray(self.f_target, dtype=np.float64)
        f_draft = np.asarray(self.f_draft, dtype=np.float64)
        head = np.atleast_2d(np.asarray(self.head, dtype=np.float64))
        if f_target.ndim != 1 or f_target.shape != f_draft.shape or f_target.size < 1:
            raise ValueError(f"feature vectors must share one dimension d >= 1, "
                             f"got {f_target.shape} and {f_draft.shape}")
        if head.shape[0] < 1 or head.shape[1] != f_target.size:
            raise ValueError(f"head must be v x {f_target.size} with v >= 1, got {head.shape}")
        if not (np.isfinite(f_target).all() and np.isfinite(f_draft).all()
                and np.isfinite(head).all() and np.isfinite(self.w_ce)):
            raise ValueError("distillation inputs must be finite")
        if self.w_ce < 0:
            raise ValueError(f"w_ce must be >= 0, got {self.w_ce}")
        object.__setattr__(self, 'f_target', f_target)
        object.__setattr__(self, 'f_draft', f_draft)
        object.__setattr__(self, 'head', head)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def smooth_l1(a: np.ndarray, b: np.ndarray) -> float:
    diff = np.abs(a - b)
    per_elem = np.where(diff < 1.0, 0.5 * diff ** 2, diff - 0.5)
    return float(per_elem.mean())


def soft_cross_entropy(p: np.ndarray, log_q: np.ndarray) -> float:
    return float(-(p * log_q).sum())


def distillation_loss(inp: DistillationInput) -> float:
    p = np.exp(_log_softmax(inp.head @ inp.f_target))
    log_q = _log_softmax(inp.head @ inp.f_draft)
    return smooth_l1(inp.f_target, inp.f_draft) + inp.w_ce * soft_cross_entropy(p, log_q)


def distillation_loss_grad(inp: DistillationInput) -> np.ndarray:
    """Analytic gradient of the loss with respect to f_draft."""
    x = inp.f_draft - inp.f_target
    grad_sl = np.where(np.abs(x) < 1.0, x, np.sign(x)) / x.size
    p = np.exp(_log_softmax(inp.head @ inp.f_target))
    q = np.exp(_log_softmax(inp.head @ inp.f_draft))
    return grad_sl + inp.w_ce * (inp.head.T @ (q - p))
