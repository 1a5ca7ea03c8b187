"""Loss functions and the cost-weighted classification rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InputError

SQUARED_ERROR = "squared_error"
MISCLASSIFICATION = "misclassification"


@dataclass(frozen=True)
class LossSpec:
    """How predictions are scored.

    ``class_weights[t]`` is the cost of misclassifying an observation whose
    true class is ``t``. ``None`` means every error costs 1.
    """

    kind: str = SQUARED_ERROR
    class_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in (SQUARED_ERROR, MISCLASSIFICATION):
            raise InputError(f"unknown loss kind {self.kind!r}")
        if self.class_weights is not None:
            w = tuple(float(v) for v in self.class_weights)
            if any(not v > 0 for v in w):
                raise InputError("class weights must be positive")
            object.__setattr__(self, "class_weights", w)

    def weights(self, n_classes):
        if self.class_weights is None:
            return np.ones(n_classes)
        if len(self.class_weights) != n_classes:
            raise InputError(f"expected {n_classes} class weights, "
                             f"got {len(self.class_weights)}")
        return np.asarray(self.class_weights)

    def worst_case(self, n_classes=None):
        """Largest loss a single classification error can incur."""
        if self.class_weights is None:
            return 1.0
        return max(self.class_weights)


def evaluate_loss(spec, predictions, truths):
    """Summed loss of ``predictions`` against ``truths``."""
    pred = np.asarray(predictions)
    truth = np.asarray(truths)
    if pred.shape != truth.shape:
        raise InputError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if spec.kind == SQUARED_ERROR:
        return float(np.sum((pred.astype(float) - truth.astype(float)) ** 2))
    wrong = pred != truth
    if spec.class_weights is None:
        return float(np.count_nonzero(wrong))
    w = np.asarray(spec.class_weights)
    return float(np.sum(w[truth[wrong].astype(int)]))


def expected_costs(probabilities, class_weights=None):
    """Expected misclassification cost of predicting each class.

    For class ``c`` this is ``sum_{t != c} w[t] * p[t]``. Works on any
    array whose last axis indexes classes.
    """
    P = np.asarray(probabilities, dtype=float)
    w = np.ones(P.shape[-1]) if class_weights is None else np.asarray(class_weights, float)
    wp = P * w
    return wp.sum(axis=-1, keepdims=True) - wp


def weighted_class_decision(probabilities, spec=None):
    """Class minimizing expected misclassification cost.

    Accepts a single probability vector or an array with classes on the
    last axis. Ties go to the lower class index; with equal weights this is
    the usual argmax of probability.
    """
    weights = None if spec is None else spec.class_weights
    P = np.asarray(probabilities, dtype=float)
    decision = np.argmin(expected_costs(P, weights), axis=-1)
    if P.ndim == 1:
        return int(decision)
    return decision
