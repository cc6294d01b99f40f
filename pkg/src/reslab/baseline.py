"""Best linear predictor ``inf_t mean_i l(t^T x_i; y_i)``."""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .data import Dataset
from .loss import LossKind, evaluate


@dataclass(frozen=True)
class LinearFit:
    t_hat: np.ndarray  # slope, followed by the intercept when with_bias
    risk: float
    grad_residual: float
    with_bias: bool = False
    attained: bool = True  # False: iteration cap hit, infimum may be unattained
    iterations: int = 0

    @property
    def slope(self) -> np.ndarray:
        return self.t_hat[:-1] if self.with_bias else self.t_hat


def design_matrix(X, with_bias: bool) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([X, np.ones((X.shape[0], 1))]) if with_bias else X


def linear_risk(dataset: Dataset, loss, t, with_bias: bool = False):
    """Risk and gradient of the linear predictor ``t`` (intercept last if with_bias)."""
    F = design_matrix(dataset.X, with_bias)
    value, d1, _ = evaluate(loss, F @ t, dataset.y)
    return float(value.mean()), F.T @ d1 / dataset.n


def fit_linear(dataset: Dataset, loss=LossKind.SQUARED, with_bias: bool = False,
               tol: float = 1e-10, max_iters: int = 500) -> LinearFit:
    """Exact least squares for the squared loss; damped Newton for the logistic loss.

    The logistic fit stops when the gradient norm drops to ``tol``.  When the
    cap is reached first, or the final iterate separates the data (the
    infimum 0 is then not attained), ``attained`` is False and the iterate is
    returned as is.
    """
    loss = LossKind.parse(loss)
    F = design_matrix(dataset.X, with_bias)
    if loss is LossKind.SQUARED:
        t = linalg.lstsq(F, dataset.y)
        r, g = linear_risk(dataset, loss, t, with_bias)
        return LinearFit(t, r, float(np.linalg.norm(g)), with_bias)

    def separated(t):
        # every margin positive: scaling t up lowers the risk, so no minimizer exists
        return bool(np.all(dataset.y * (F @ t) > 0.0))

    t = np.zeros(F.shape[1])
    r, g = linear_risk(dataset, loss, t, with_bias)
    for it in range(max_iters):
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return LinearFit(t, r, gn, with_bias, not separated(t), it)
        _, _, d2 = evaluate(loss, F @ t, dataset.y)
        Hm = (F * d2[:, None]).T @ F / dataset.n
        direction = -linalg.lstsq(Hm, g)
        slope = float(g @ direction)
        if not slope < 0.0:
            direction, slope = -g, -gn * gn
        s = 1.0
        while True:
            t_new = t + s * direction
            r_new, g_new = linear_risk(dataset, loss, t_new, with_bias)
            if r_new <= r + 1e-4 * s * slope:
                break
            s *= 0.5
            if s < 1e-20:
                return LinearFit(t, r, gn, with_bias, False, it)
        t, r, g = t_new, r_new, g_new
    gn = float(np.linalg.norm(g))
    return LinearFit(t, r, gn, with_bias, gn <= tol and not separated(t), max_iters)
