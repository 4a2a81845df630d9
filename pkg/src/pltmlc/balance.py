"""Head/tail balancing: a moving average of the fused-feature gradient
biases two teacher models in opposite directions, and their knowledge is
distilled into the balanced model with adaptive loss-proportional weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import HeadTailFactor, MfmConfig, mfm_elementwise
from .network import NormalizedHead
from .numerics import ensure_2d, sigmoid, softmax, softmax_vjp


@dataclass
class MovingGradient:
    """Momentum accumulator of the batch-summed loss gradient at the fused
    feature: e <- mu * e + sum_over_batch(dL/df)."""

    e: np.ndarray
    mu: float

    @classmethod
    def zeros(cls, dim: int, mu: float) -> "MovingGradient":
        return cls(e=np.zeros(dim), mu=float(mu))


def update_moving_gradient(mg: MovingGradient, batch_grad_sum: np.ndarray) -> MovingGradient:
    batch_grad_sum = np.asarray(batch_grad_sum, dtype=np.float64)
    if batch_grad_sum.shape != mg.e.shape:
        raise ValueError(
            f"gradient dim {batch_grad_sum.shape} != accumulator dim {mg.e.shape}"
        )
    mg.e = mg.mu * mg.e + batch_grad_sum
    return mg


@dataclass(frozen=True)
class HtbConfig:
    """Distillation settings; rho/eta/n_groups live on the classifier heads."""

    alpha: float = 2.0
    prob_clamp: float = 1e-6
    fuse_activation: str = "softmax"

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.fuse_activation not in ("softmax", "sigmoid"):
            raise ValueError("fuse_activation must be 'softmax' or 'sigmoid'")


def kappa_weights(loss_head: float, loss_tail: float, alpha: float) -> tuple[float, float]:
    """Loss-proportional weights: kappa_x = L_x^alpha / (L_h^alpha + L_t^alpha).

    The worse teacher gets the larger weight; weights sum to 1.  Both
    losses zero degenerates to an even split.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if loss_head < 0 or loss_tail < 0:
        raise ValueError("losses must be non-negative")
    ph = loss_head**alpha
    pt = loss_tail**alpha
    total = ph + pt
    if total == 0.0:
        return 0.5, 0.5
    return ph / total, pt / total


def _similarity_parts(z2: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    nz = np.linalg.norm(z2, axis=1)
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return np.zeros(z2.shape[0]), nz, nb
    nz_safe = np.where(nz > 0, nz, 1.0)
    sim = (z2 @ b) / (nz_safe * nb)
    sim = np.where(nz > 0, sim, 0.0)
    return sim, nz, nb


def adjust_logits(
    z: np.ndarray, sign: int, head: NormalizedHead, mg: MovingGradient
) -> np.ndarray:
    """Bias logits by the moving-gradient direction:

        z_hat_c = z_c + sign * sim(z, z_e) * b_c

    where b is the raw head projection of e (no feature-norm division) and
    z_e = b / |e| is e pushed through the same head, so sim(z, z_e) equals
    the cosine between z and b.  sign=-1 biases toward head classes,
    sign=+1 toward tail classes; e = 0 leaves logits untouched.
    """
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 (head) or +1 (tail)")
    z2, was1d = ensure_2d(z)
    if z2.shape[1] != head.n_classes:
        raise ValueError("logit length does not match the head's class count")
    b = head.project_raw(mg.e)
    sim, _, nb = _similarity_parts(z2, b)
    if nb == 0.0:
        out = z2.copy()
    else:
        out = z2 + sign * sim[:, None] * b[None, :]
    return out[0] if was1d else out


def adjust_logits_backward(
    z: np.ndarray,
    sign: int,
    head: NormalizedHead,
    mg: MovingGradient,
    grad_adjusted: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the adjustment w.r.t. the incoming logits and the head
    weights (e is a running statistic, held constant)."""
    z2, was1d = ensure_2d(z)
    g, _ = ensure_2d(grad_adjusted)
    b = head.project_raw(mg.e)
    sim, nz, nb = _similarity_parts(z2, b)
    if nb == 0.0:
        dz = g.copy()
        return (dz[0] if was1d else dz), np.zeros_like(head.w)

    nz_safe = np.where(nz > 0, nz, 1.0)
    live = nz > 0
    gb = g @ b  # (B,)

    # through sim's z-dependence: dsim/dz = b/(|z||b|) - sim * z/|z|^2
    dsim_dz = b[None, :] / (nz_safe * nb)[:, None] - (sim / nz_safe**2)[:, None] * z2
    dz = g + sign * (gb * live)[:, None] * dsim_dz

    # through b: dzhat_c/db_j = sign * (sim * delta_cj + b_c * dsim/db_j)
    dsim_db = z2 / (nz_safe * nb)[:, None] - (sim / nb**2)[None if False else ...,][0][:, None] * b[None, :] if False else (
        z2 / (nz_safe * nb)[:, None] - np.outer(sim, b) / nb**2
    )
    db = sign * (
        (sim[:, None] * g).sum(axis=0)
        + ((gb * live)[:, None] * dsim_db * live[:, None]).sum(axis=0)
    )
    dw = head.project_raw_backward(mg.e, db)
    return (dz[0] if was1d else dz), dw


@dataclass
class HtbResult:
    loss: float
    grad_head: np.ndarray
    grad_tail: np.ndarray
    grad_balanced: np.ndarray
    loss_head: float
    loss_tail: float
    kappa_head: float
    kappa_tail: float


def htb_loss(
    z_head_adj: np.ndarray,
    z_tail_adj: np.ndarray,
    z_balanced: np.ndarray,
    targets: np.ndarray,
    cfg: HtbConfig,
    mfm_cfg: MfmConfig,
    ht: HeadTailFactor,
    kappa_override: tuple[float, float] | None = None,
) -> HtbResult:
    """Two-teacher distillation loss.

    Each teacher's activation is fused with the balanced model's by
    element-wise product, scored with the multi-focal terms against the
    corrected targets, and the two teacher losses are combined with
    kappa weights.  Kappas are treated as constants in the backward pass
    (pass kappa_override to freeze them, e.g. for finite differencing).
    Batched inputs are averaged over rows.
    """
    zh, was1d = ensure_2d(z_head_adj)
    zt, _ = ensure_2d(z_tail_adj)
    zb, _ = ensure_2d(z_balanced)
    y2, _ = ensure_2d(np.asarray(targets, dtype=np.float64))
    if not (zh.shape == zt.shape == zb.shape == y2.shape):
        raise ValueError("logit/target shapes must all match")
    n = zh.shape[0]
    eps = cfg.prob_clamp

    if cfg.fuse_activation == "softmax":
        act = softmax
    else:
        act = sigmoid
    ph, pt, pb = act(zh), act(zt), act(zb)

    def fused_terms(p_teacher):
        raw = p_teacher * pb
        inside = (raw > eps) & (raw < 1.0 - eps)
        terms, dterms, _ = mfm_elementwise(np.clip(raw, eps, 1.0 - eps), y2, mfm_cfg, ht)
        return float(terms.sum()) / n, dterms * inside / n

    loss_head, dh_dp = fused_terms(ph)
    loss_tail, dt_dp = fused_terms(pt)

    if kappa_override is not None:
        kh, kt = kappa_override
    else:
        kh, kt = kappa_weights(loss_head, loss_tail, cfg.alpha)
    total = kh * loss_head + kt * loss_tail

    def through_activation(p_out, grad_p):
        if cfg.fuse_activation == "softmax":
            return softmax_vjp(p_out, grad_p)
        return grad_p * p_out * (1.0 - p_out)

    grad_h = through_activation(ph, kh * dh_dp * pb)
    grad_t = through_activation(pt, kt * dt_dp * pb)
    grad_b = through_activation(pb, kh * dh_dp * ph + kt * dt_dp * pt)

    if was1d:
        grad_h, grad_t, grad_b = grad_h[0], grad_t[0], grad_b[0]
    return HtbResult(
        loss=total,
        grad_head=grad_h,
        grad_tail=grad_t,
        grad_balanced=grad_b,
        loss_head=loss_head,
        loss_tail=loss_tail,
        kappa_head=float(kh),
        kappa_tail=float(kt),
    )
