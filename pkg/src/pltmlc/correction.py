"""Online correction of missing labels.

An unknown label is recalled as positive when its predicted probability
exceeds both a fixed threshold tau and the running mean probability of
that class over annotated positives.  Corrections are monotone (0 -> 1
only), persist across epochs, and feed a dynamic class distribution used
to reweight the loss on corrected targets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .losses import HeadTailFactor, MfmConfig, mfm


@dataclass
class ClassStats:
    """Running per-class statistics owned by the training loop.

    P is the running mean predicted probability over annotated positives;
    counts_static holds the observed-positive counts, counts_dynamic adds
    corrected labels; tp/fp tally corrections against oracle labels.
    """

    P: np.ndarray
    counts_static: np.ndarray
    counts_dynamic: np.ndarray
    tp: np.ndarray
    fp: np.ndarray

    @classmethod
    def from_counts(cls, class_counts: np.ndarray) -> "ClassStats":
        counts = np.asarray(class_counts, dtype=np.int64).copy()
        c = counts.shape[0]
        return cls(
            P=np.zeros(c),
            counts_static=counts,
            counts_dynamic=counts.copy(),
            tp=np.zeros(c, dtype=np.int64),
            fp=np.zeros(c, dtype=np.int64),
        )

    @property
    def n_classes(self) -> int:
        return self.P.shape[0]


@dataclass(frozen=True)
class CorrectionRecord:
    """One recalled label: which sample/class, when, and how confident."""

    sample_id: str
    class_index: int
    epoch: int
    prob: float
    threshold: float
    was_true_positive: bool | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "sample_id": self.sample_id,
                "class_index": self.class_index,
                "epoch": self.epoch,
                "prob": self.prob,
                "threshold": self.threshold,
                "was_true_positive": self.was_true_positive,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "CorrectionRecord":
        d = json.loads(line)
        return cls(
            sample_id=d["sample_id"],
            class_index=int(d["class_index"]),
            epoch=int(d["epoch"]),
            prob=float(d["prob"]),
            threshold=float(d["threshold"]),
            was_true_positive=d.get("was_true_positive"),
        )


def update_stats(
    stats: ClassStats, p: np.ndarray, y_obs: np.ndarray, momentum: float
) -> ClassStats:
    """EMA update of P over this sample's annotated positives."""
    if not (0.0 <= momentum < 1.0):
        raise ValueError("momentum must lie in [0, 1)")
    p = np.asarray(p, dtype=np.float64)
    pos = np.asarray(y_obs) == 1
    stats.P[pos] = momentum * stats.P[pos] + (1.0 - momentum) * p[pos]
    return stats


def correct(
    p: np.ndarray,
    y_obs: np.ndarray,
    stats: ClassStats,
    tau: float,
    y_full: np.ndarray | None = None,
    sample_id: str = "",
    epoch: int = 0,
) -> tuple[np.ndarray, list[CorrectionRecord]]:
    """Apply the recall rule to one sample: set y_hat_c = 1 where
    p_c > max(tau, P_c) and y_obs_c = 0; never flips 1 -> 0.

    New corrections bump counts_dynamic and, when oracle labels are
    available, the tp/fp tallies.
    """
    if not (0.0 < tau < 1.0):
        raise ValueError("tau must lie in (0, 1)")
    p = np.asarray(p, dtype=np.float64)
    y_obs = np.asarray(y_obs)
    thresholds = np.maximum(tau, stats.P)
    new = (p > thresholds) & (y_obs == 0)
    y_hat = np.where(new, 1, y_obs).astype(y_obs.dtype)

    records: list[CorrectionRecord] = []
    for c in np.flatnonzero(new):
        c = int(c)
        truth = None if y_full is None else bool(y_full[c] == 1)
        records.append(
            CorrectionRecord(
                sample_id=sample_id,
                class_index=c,
                epoch=epoch,
                prob=float(p[c]),
                threshold=float(thresholds[c]),
                was_true_positive=truth,
            )
        )
        stats.counts_dynamic[c] += 1
        if truth is True:
            stats.tp[c] += 1
        elif truth is False:
            stats.fp[c] += 1
    return y_hat, records


def rlc_loss(
    p: np.ndarray,
    y_obs: np.ndarray,
    y_hat: np.ndarray,
    cfg: MfmConfig,
    ht_dynamic: HeadTailFactor,
    batch_size: int,
    n_corrected_in_batch: int,
) -> tuple[float, np.ndarray]:
    """Corrected-label loss: multi-focal terms against y_hat (recalled
    labels count as positives), scaled by batch_size / max(1, n_corrected)."""
    if n_corrected_in_batch < 0:
        raise ValueError("corrected-label count must be >= 0")
    y_obs = np.asarray(y_obs)
    y_hat = np.asarray(y_hat)
    if np.any(y_hat < y_obs):
        raise ValueError("corrected labels must never flip a positive to 0")
    scale = batch_size / max(1, n_corrected_in_batch)
    loss, grad = mfm(p, y_hat, cfg, ht_dynamic)
    return scale * loss, scale * grad


class LabelCorrector:
    """Stateful corrector: persists corrections per (sample, class) across
    epochs and owns the running class statistics."""

    def __init__(
        self,
        class_counts: np.ndarray,
        n_samples: int,
        tau: float = 0.7,
        momentum: float = 0.99,
        warmup_epochs: int = 2,
        enabled: bool = True,
    ):
        if not (0.0 < tau < 1.0):
            raise ValueError("tau must lie in (0, 1)")
        self.stats = ClassStats.from_counts(class_counts)
        self.tau = tau
        self.momentum = momentum
        self.warmup_epochs = warmup_epochs
        self.enabled = enabled
        self.corrected = np.zeros((n_samples, self.stats.n_classes), dtype=bool)

    def targets_for(self, indices: np.ndarray, y_obs: np.ndarray) -> np.ndarray:
        """Observed labels plus already-persisted corrections."""
        return np.where(self.corrected[indices], 1, y_obs).astype(y_obs.dtype)

    def apply_batch(
        self,
        indices: np.ndarray,
        probs: np.ndarray,
        y_obs: np.ndarray,
        ids: list[str],
        epoch: int,
        y_full: np.ndarray | None = None,
    ) -> tuple[np.ndarray, list[CorrectionRecord]]:
        """Correct each batch row in order; returns targets and new records."""
        y_hat = self.targets_for(indices, y_obs)
        if not self.enabled or epoch < self.warmup_epochs:
            return y_hat, []
        records: list[CorrectionRecord] = []
        for row, idx in enumerate(indices):
            full_row = None if y_full is None else y_full[row]
            new_targets, recs = correct(
                probs[row],
                y_hat[row],
                self.stats,
                self.tau,
                y_full=full_row,
                sample_id=ids[row],
                epoch=epoch,
            )
            if recs:
                y_hat[row] = new_targets
                self.corrected[idx, [r.class_index for r in recs]] = True
                records.extend(recs)
        return y_hat, records

    def update_stats_batch(self, probs: np.ndarray, y_obs: np.ndarray) -> None:
        """EMA update over the batch, row by row in batch order."""
        for row in range(probs.shape[0]):
            update_stats(self.stats, probs[row], y_obs[row], self.momentum)

    def batch_corrected_count(self, indices: np.ndarray) -> int:
        """Corrected labels active in this batch (persisted + new)."""
        return int(self.corrected[indices].sum())
