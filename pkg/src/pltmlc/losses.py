"""Imbalance-aware multi-label losses with analytic logit gradients.

Every loss treats the last axis as the class axis, sums over all elements,
and returns the gradient with respect to the logits that produced the
probabilities (p = sigmoid(z), so dp/dz = p * (1 - p)).  Probabilities are
clamped to [eps, 1 - eps] before any log/pow; entries whose incoming
probability already sits outside the clamp window get zero gradient, which
keeps analytic gradients consistent with finite differences of the clamped
loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_PROB_CLAMP = 1e-6


@dataclass(frozen=True)
class MfmConfig:
    """Decoupled focusing exponents and their per-class offset weights.

    gamma_pn_pos / gamma_pn_neg are the positive / negative base exponents;
    w_pos / w_neg scale the per-class head-tail factor added on top.
    Effective exponents are clamped at zero.
    """

    gamma_pn_pos: float = 1.0
    gamma_pn_neg: float = 4.0
    w_pos: float = -0.5
    w_neg: float = 1.0
    prob_clamp: float = DEFAULT_PROB_CLAMP

    def __post_init__(self) -> None:
        if self.gamma_pn_pos < 0 or self.gamma_pn_neg < 0:
            raise ValueError("base exponents must be >= 0")
        if self.gamma_pn_neg < self.gamma_pn_pos:
            raise ValueError("negative-side exponent must be >= positive-side exponent")
        if not (0.0 < self.prob_clamp < 0.1):
            raise ValueError("prob_clamp must lie in (0, 0.1)")


@dataclass(frozen=True)
class HeadTailFactor:
    """Per-class exponent offset, >= 1 everywhere, largest for rare classes."""

    gamma: np.ndarray

    def __post_init__(self) -> None:
        gamma = np.asarray(self.gamma, dtype=np.float64)
        object.__setattr__(self, "gamma", gamma)
        if gamma.ndim != 1:
            raise ValueError("head-tail factor must be a vector")
        if np.any(gamma < 1.0 - 1e-12):
            raise ValueError("head-tail factor entries must be >= 1")

    @classmethod
    def ones(cls, n_classes: int) -> "HeadTailFactor":
        return cls(np.ones(n_classes))


def compute_gamma_ht(class_counts: np.ndarray, scale: float) -> HeadTailFactor:
    """Map class counts to exponent offsets: 1 + scale * (1 - count / max).

    The most frequent class gets exactly 1; rarer classes get up to
    1 + scale.  scale = 0 disables the factor.
    """
    counts = np.asarray(class_counts, dtype=np.float64)
    if scale < 0:
        raise ValueError("scale must be >= 0")
    if counts.size == 0 or counts.max(initial=0.0) <= 0:
        raise ValueError("class counts must contain at least one positive entry")
    if np.any(counts < 0):
        raise ValueError("class counts must be non-negative")
    gamma = 1.0 + scale * (1.0 - counts / counts.max())
    return HeadTailFactor(gamma)


def _check_pair(p: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"probability/label shape mismatch: {p.shape} vs {y.shape}")
    return p, y


def pn_terms(
    p: np.ndarray,
    y: np.ndarray,
    gamma_pos: np.ndarray | float,
    gamma_neg: np.ndarray | float,
    prob_clamp: float = DEFAULT_PROB_CLAMP,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Element-wise focal terms and their derivative with respect to p.

    Positive term: (1-p)^g+ * (-ln p); negative term: p^g- * (-ln(1-p)).
    Returns (terms, dterms_dp, inside) where `inside` marks entries whose
    raw probability lies strictly inside the clamp window (entries outside
    carry zero gradient through the clamp).
    """
    p, y = _check_pair(p, y)
    eps = prob_clamp
    inside = (p > eps) & (p < 1.0 - eps)
    pc = np.clip(p, eps, 1.0 - eps)
    gp = np.broadcast_to(np.asarray(gamma_pos, dtype=np.float64), pc.shape)
    gn = np.broadcast_to(np.asarray(gamma_neg, dtype=np.float64), pc.shape)

    ln_p = np.log(pc)
    ln_q = np.log1p(-pc)
    q = 1.0 - pc

    pos = np.power(q, gp) * (-ln_p)
    neg = np.power(pc, gn) * (-ln_q)
    terms = y * pos + (1.0 - y) * neg

    dpos = gp * np.power(q, gp - 1.0) * ln_p - np.power(q, gp) / pc
    dneg = -gn * np.power(pc, gn - 1.0) * ln_q + np.power(pc, gn) / q
    dterms = y * dpos + (1.0 - y) * dneg
    return terms, dterms, inside


def _through_sigmoid(p: np.ndarray, dterms: np.ndarray, inside: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    pc = np.clip(p, 0.0, 1.0)
    return dterms * pc * (1.0 - pc) * inside


def focal(
    p: np.ndarray,
    y: np.ndarray,
    gamma: float,
    prob_clamp: float = DEFAULT_PROB_CLAMP,
) -> tuple[float, np.ndarray]:
    """Focal loss with a single focusing exponent; gamma = 0 is plain BCE."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    terms, dterms, inside = pn_terms(p, y, gamma, gamma, prob_clamp)
    return float(terms.sum()), _through_sigmoid(p, dterms, inside)


def bce(
    p: np.ndarray,
    y: np.ndarray,
    prob_clamp: float = DEFAULT_PROB_CLAMP,
) -> tuple[float, np.ndarray]:
    """Binary cross-entropy over all classes."""
    return focal(p, y, 0.0, prob_clamp)


def asl(
    p: np.ndarray,
    y: np.ndarray,
    gamma_pos: float,
    gamma_neg: float,
    prob_clamp: float = DEFAULT_PROB_CLAMP,
) -> tuple[float, np.ndarray]:
    """Asymmetric focal loss: separate positive/negative exponents."""
    if gamma_pos < 0 or gamma_neg < 0:
        raise ValueError("exponents must be >= 0")
    terms, dterms, inside = pn_terms(p, y, gamma_pos, gamma_neg, prob_clamp)
    return float(terms.sum()), _through_sigmoid(p, dterms, inside)


def mfm_exponents(cfg: MfmConfig, ht: HeadTailFactor) -> tuple[np.ndarray, np.ndarray]:
    """Per-class effective exponents, clamped at zero."""
    gp = np.maximum(0.0, cfg.gamma_pn_pos + cfg.w_pos * ht.gamma)
    gn = np.maximum(0.0, cfg.gamma_pn_neg + cfg.w_neg * ht.gamma)
    return gp, gn


def mfm_elementwise(
    p: np.ndarray,
    y: np.ndarray,
    cfg: MfmConfig,
    ht: HeadTailFactor,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Element-wise multi-focal terms (for callers that chain their own
    derivative, e.g. through a product of softmaxes)."""
    p, y = _check_pair(p, y)
    if p.shape[-1] != ht.gamma.shape[0]:
        raise ValueError(
            f"class-axis mismatch: {p.shape[-1]} probabilities vs "
            f"{ht.gamma.shape[0]} head-tail factors"
        )
    gp, gn = mfm_exponents(cfg, ht)
    return pn_terms(p, y, gp, gn, cfg.prob_clamp)


def mfm(
    p: np.ndarray,
    y: np.ndarray,
    cfg: MfmConfig,
    ht: HeadTailFactor,
) -> tuple[float, np.ndarray]:
    """Multi-focal loss: asymmetric exponents shifted per class by the
    head-tail factor."""
    terms, dterms, inside = mfm_elementwise(p, y, cfg, ht)
    return float(terms.sum()), _through_sigmoid(p, dterms, inside)
