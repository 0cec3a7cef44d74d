"""Listwise softmax cross-entropy, KL co-training regularization, and the
combined training objective with analytic gradients.

Ranking mode works on score vectors over a candidate list. Classification mode
(list_size 1) is handled by scoring each list against a phantom zero-score
alternative: softmax([h, 0]) is exactly [sigmoid(h), 1 - sigmoid(h)], so the
binary cross-entropy and Bernoulli KL terms reuse the categorical code path
unchanged and gradients stay consistent with the sigmoid head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ValidationError
from .nn import masked_log_softmax

PROB_FLOOR = 1e-12   # guard for exact zeros from masked softmax


@dataclass
class LossConfig:
    reg_lambda: float = 1.0
    mode: str = "ranking"

    def __post_init__(self):
        if self.reg_lambda < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.reg_lambda}")
        if self.mode not in ("ranking", "classification"):
            raise ConfigError(f"unknown loss mode {self.mode!r}")


def _check_one_click(labels: np.ndarray, mask: np.ndarray) -> None:
    valid_labels = labels[mask]
    if not np.isin(valid_labels, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    clicks = int(valid_labels.sum())
    if clicks != 1:
        raise ValidationError(f"expected exactly one click among valid docs, got {clicks}")


def listwise_softmax_ce(scores, labels, mask=None) -> float:
    """-sum_i y_i log softmax(scores)_i over valid docs (exactly one click)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if mask is None:
        mask = np.ones(scores.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    _check_one_click(labels, mask)
    logp, _ = masked_log_softmax(scores[None, :], mask[None, :])
    return float(-(labels[mask] * logp[0][mask]).sum())


def _check_distribution(p: np.ndarray, name: str) -> None:
    if (p < 0).any():
        raise DataError(f"{name} has negative entries")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise DataError(f"{name} sums to {float(p.sum())}, not 1")


def kl_divergence(p, q) -> float:
    """sum_i p_i log(p_i / q_i) with 0 log 0 = 0 and q floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DataError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    _check_distribution(p, "p")
    _check_distribution(q, "q")
    support = p > 0
    return float((p[support] * np.log(p[support] / np.maximum(q[support], PROB_FLOOR))).sum())


def regularization_loss(p_final, p_sparse, p_dense, alpha_sparse: float,
                        alpha_dense: float) -> float:
    """alpha_s * KL(p_final || p_sparse) + alpha_d * KL(p_final || p_dense)."""
    return (alpha_sparse * kl_divergence(p_final, p_sparse)
            + alpha_dense * kl_divergence(p_final, p_dense))


def total_loss(listwise: float, reg: float, cfg: LossConfig) -> float:
    return float(listwise + cfg.reg_lambda * reg)


def binary_ce(prob: float, label: int) -> float:
    """-[y log p + (1-y) log(1-p)] with p clamped to [1e-12, 1 - 1e-12]."""
    p = min(max(float(prob), PROB_FLOOR), 1.0 - PROB_FLOOR)
    y = float(label)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


# ---------------------------------------------------------------------------
# Batched objectives (training path)
# ---------------------------------------------------------------------------

def _augment_binary(scores: np.ndarray) -> np.ndarray:
    """[h] -> [h, 0]; softmax over the pair equals the sigmoid head."""
    aug = np.zeros((scores.shape[0], 2))
    aug[:, 0] = scores[:, 0]
    return aug


def _prepare(scores: np.ndarray, labels: np.ndarray, mask: np.ndarray, mode: str):
    if mode == "classification":
        if scores.shape[1] != 1:
            raise ConfigError("classification objective requires list_size = 1")
        aug_labels = np.zeros((labels.shape[0], 2))
        aug_labels[:, 0] = labels[:, 0]
        aug_labels[:, 1] = 1.0 - labels[:, 0]
        return _augment_binary(scores), aug_labels, np.ones((scores.shape[0], 2), dtype=bool)
    return scores, labels, mask > 0


@dataclass(eq=False)
class ObjectiveResult:
    """Batch-mean loss pieces and the gradients the model backward needs.

    All gradient arrays are for the batch-mean total loss. ``g_h_sparse`` /
    ``g_h_dense`` are the direct KL paths only; the final-score mixing path is
    the model's job. Distributions are in the augmented space for
    classification mode (columns [p, 1-p]).
    """

    loss: float
    listwise: float
    reg: float
    g_h_final: np.ndarray
    g_h_sparse: np.ndarray
    g_h_dense: np.ndarray
    g_alpha_sparse: np.ndarray
    g_alpha_dense: np.ndarray
    p_final: np.ndarray
    p_sparse: np.ndarray | None
    p_dense: np.ndarray | None
    kl_sparse: np.ndarray | None
    kl_dense: np.ndarray | None


def _listwise_terms(scores, labels, mask_bool):
    logp, p = masked_log_softmax(scores, mask_bool)
    ce = -(np.where(labels > 0, logp, 0.0)).sum(axis=1)
    g = p - labels
    return logp, p, ce, g


def _validate_batch_labels(labels: np.ndarray, mask_bool: np.ndarray, mode: str) -> None:
    valid = np.where(mask_bool, labels, 0.0)
    if not np.isin(valid, (0.0, 1.0)).all():
        raise ValidationError("labels must be 0 or 1")
    clicks = valid.sum(axis=1)
    if mode == "ranking" and not (clicks == 1.0).all():
        bad = int(np.argmax(clicks != 1.0))
        raise ValidationError(f"example {bad}: expected exactly one click, "
                              f"got {int(clicks[bad])}")


def single_tower_objective(scores: np.ndarray, labels: np.ndarray, mask: np.ndarray,
                           mode: str) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean listwise (or binary) CE and its gradient on the scores.

    Returns (loss, g_scores, p) with p in the augmented space for
    classification mode.
    """
    _validate_batch_labels(labels, mask > 0, mode)
    s, y, m = _prepare(scores, labels, mask, mode)
    _, p, ce, g = _listwise_terms(s, y, m)
    b = scores.shape[0]
    g = g / b
    if mode == "classification":
        g = g[:, :1]
    return float(ce.mean()), g, p


def sepattn_objective(h_sparse: np.ndarray, h_dense: np.ndarray, h_final: np.ndarray,
                      alpha_sparse: np.ndarray, alpha_dense: np.ndarray,
                      labels: np.ndarray, mask: np.ndarray,
                      cfg: LossConfig) -> ObjectiveResult:
    """Mean of CE(h_final) + lambda * [a_s KL(p_f||p_s) + a_d KL(p_f||p_d)].

    Gradient notes (per example, categorical case; the augmented binary case is
    identical after the phantom-column mapping):

      dCE/dh_f            = p_f - y
      dKL_s/dh_f          = p_f * (log(p_f/p_s) - KL_s)      (through p_f)
      dKL_s/dh_s          = p_s - p_f                         (through p_s)
      dL_reg/dalpha_s     = KL_s                              (direct)

    lambda = 0 skips the regularizer entirely, so that run is bit-identical to
    a model trained without the regularization term.
    """
    _validate_batch_labels(labels, mask > 0, cfg.mode)
    b, n = h_final.shape
    s_f, y, m = _prepare(h_final, labels, mask, cfg.mode)
    logp_f, p_f, ce, g_f = _listwise_terms(s_f, y, m)

    lam = cfg.reg_lambda
    if lam == 0.0:
        g_hf = g_f / b
        if cfg.mode == "classification":
            g_hf = g_hf[:, :1]
        zeros = np.zeros((b, n))
        return ObjectiveResult(
            loss=float(ce.mean()), listwise=float(ce.mean()), reg=0.0,
            g_h_final=g_hf, g_h_sparse=zeros, g_h_dense=zeros.copy(),
            g_alpha_sparse=np.zeros(b), g_alpha_dense=np.zeros(b),
            p_final=p_f, p_sparse=None, p_dense=None, kl_sparse=None, kl_dense=None)

    s_s, _, _ = _prepare(h_sparse, labels, mask, cfg.mode)
    s_d, _, _ = _prepare(h_dense, labels, mask, cfg.mode)
    logp_s, p_s, _, _ = _listwise_terms(s_s, y, m)
    logp_d, p_d, _, _ = _listwise_terms(s_d, y, m)

    with np.errstate(invalid="ignore"):
        ratio_s = np.where(p_f > 0, logp_f - logp_s, 0.0)
        ratio_d = np.where(p_f > 0, logp_f - logp_d, 0.0)
    kl_s = (p_f * ratio_s).sum(axis=1)
    kl_d = (p_f * ratio_d).sum(axis=1)
    reg = alpha_sparse * kl_s + alpha_dense * kl_d

    g_hf = (g_f
            + lam * alpha_sparse[:, None] * p_f * (ratio_s - kl_s[:, None])
            + lam * alpha_dense[:, None] * p_f * (ratio_d - kl_d[:, None]))
    g_hs = lam * alpha_sparse[:, None] * (p_s - p_f)
    g_hd = lam * alpha_dense[:, None] * (p_d - p_f)

    g_hf = g_hf / b
    g_hs = g_hs / b
    g_hd = g_hd / b
    if cfg.mode == "classification":
        g_hf, g_hs, g_hd = g_hf[:, :1], g_hs[:, :1], g_hd[:, :1]

    return ObjectiveResult(
        loss=float((ce + lam * reg).mean()),
        listwise=float(ce.mean()),
        reg=float(reg.mean()),
        g_h_final=g_hf, g_h_sparse=g_hs, g_h_dense=g_hd,
        g_alpha_sparse=lam * kl_s / b, g_alpha_dense=lam * kl_d / b,
        p_final=p_f, p_sparse=p_s, p_dense=p_d, kl_sparse=kl_s, kl_dense=kl_d)
