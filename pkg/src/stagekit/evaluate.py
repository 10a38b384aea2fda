"""Stage 5: prediction metrics — accuracy, ROC-AUC, and the concordance index."""

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric has no defined value on this input (e.g. one class only)."""


def accuracy(pred_labels, true_labels) -> float:
    """Fraction of exact label matches."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError(f"label vectors must match in shape, got {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("accuracy is undefined on empty input")
    return float(np.mean(pred == true))


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative.

    Ties count one half: AUC = (#[s+ > s-] + 0.5 #[s+ = s-]) / (#pos * #neg).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores and labels must match in shape, got {scores.shape} vs {labels.shape}")
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("roc_auc needs both classes present")
    greater = np.sum(pos[:, None] > neg[None, :])
    equal = np.sum(pos[:, None] == neg[None, :])
    return float((greater + 0.5 * equal) / (pos.size * neg.size))


def concordance_index(predicted, observed) -> float:
    """Proportion of observed-ordered pairs whose predictions agree.

    Over all pairs with observed_i > observed_j: 1 for predicted_i >
    predicted_j, 0.5 for a predicted tie, 0 otherwise. Pairs tied in the
    observed values are excluded from the denominator.
    """
    pred = np.asarray(predicted, dtype=np.float64)
    obs = np.asarray(observed, dtype=np.float64)
    if pred.shape != obs.shape or pred.ndim != 1:
        raise ValueError(f"vectors must match in shape, got {pred.shape} vs {obs.shape}")
    if pred.size < 2:
        raise ValueError("concordance_index needs at least 2 entries")
    comparable = obs[:, None] > obs[None, :]
    n_pairs = int(np.sum(comparable))
    if n_pairs == 0:
        raise UndefinedMetricError("no pairs differ in observed value")
    concordant = np.sum(comparable & (pred[:, None] > pred[None, :]))
    tied = np.sum(comparable & (pred[:, None] == pred[None, :]))
    return float((concordant + 0.5 * tied) / n_pairs)
