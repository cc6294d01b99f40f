"""Scalar losses ``l(p; y)`` with first and second derivatives in ``p``."""

import enum

import numpy as np

from .errors import EmptyInput, InvalidLabel


class LossKind(enum.Enum):
    SQUARED = "squared"
    LOGISTIC = "logistic"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(f"unknown loss {name!r}; expected 'squared' or 'logistic'") from None


def _check_labels(kind, y):
    if kind is LossKind.LOGISTIC and not np.all(np.abs(y) == 1.0):
        raise InvalidLabel("logistic loss needs labels in {-1, +1}")


def evaluate(kind: LossKind, p, y):
    """Return ``(value, d1, d2)``; works elementwise on arrays.

    Squared loss is ``(p - y)**2`` with no factor 1/2.
    """
    kind = LossKind.parse(kind)
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_labels(kind, y)
    if kind is LossKind.SQUARED:
        r = p - y
        return r * r, 2.0 * r, np.full(np.broadcast(p, y).shape, 2.0)
    margin = y * p
    value = np.logaddexp(0.0, -margin)
    s_neg = 0.5 * (1.0 - np.tanh(0.5 * margin))  # sigmoid(-y p), overflow-free
    s_pos = 1.0 - s_neg
    return value, -y * s_neg, s_pos * s_neg


def empirical_mu(kind: LossKind, predictions, labels) -> float:
    """Largest ``|l'(p_i; y_i)|`` over the sample.

    For the logistic loss this never exceeds the global constant 1.  For the
    squared loss no global constant exists, so this value only certifies the
    Lipschitz bound at the given predictions.
    """
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.size == 0:
        raise EmptyInput("empirical_mu needs at least one prediction")
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    _, d1, _ = evaluate(kind, p, y)
    mu = float(np.max(np.abs(d1)))
    if kind is LossKind.LOGISTIC:
        mu = min(1.0, mu)
    return mu
