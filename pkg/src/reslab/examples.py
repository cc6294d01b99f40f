"""The two scalar motivating examples.

1. Six points on which every piecewise-linear fit of a one-hidden-unit ReLU
   network is no better than the best affine fit, while a one-block ResNet
   does strictly better.
2. A two-block ResNet at a global minimum whose first-block representation
   has a worse affine fit than the raw input.

Fits here are affine (slope plus intercept), unlike the bias-free linear
baseline used for the landscape checks.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .baseline import fit_linear
from .data import Dataset
from .errors import HypothesisViolated
from .loss import LossKind
from .model import ResNetSpec, SimpleVectorBlock, forward, risk_and_grad

RHO_MAX = math.sqrt(5.0 / 4.0)

INTERVALS = ("(-inf, 0)", "[0, 1)", "[1, 2)", "[2, 3)", "[3, 4)", "[4, 5)", "[5, inf)")


def prop1_dataset(rho: float) -> Dataset:
    X = np.arange(6.0)
    return Dataset(X, X + rho * np.array([-1.0, -1.0, 1.0, -1.0, 1.0, 1.0]))


def prop1_r_lin(rho: float) -> float:
    return 8.0 * rho * rho / 15.0


@dataclass(frozen=True)
class SplitFitBound:
    breakpoint_interval: str
    constant_error: float
    linear_error: float
    lower_bound: float


def _sse(A, y):
    if len(y) == 0:
        return 0.0
    r = A @ linalg.lstsq(A, y) - y
    return float(r @ r)


def prop1_table(rho: float) -> list:
    """Lower bounds for each position of the ReLU breakpoint.

    Row ``k`` fits a constant to the first ``k`` points and an unconstrained
    affine function to the rest; errors are divided by the full sample size.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    ds = prop1_dataset(rho)
    x, y = ds.X[:, 0], ds.y
    n = len(y)
    rows = []
    for k, label in enumerate(INTERVALS):
        const = _sse(np.ones((k, 1)), y[:k]) / n
        lin = _sse(np.column_stack([x[k:], np.ones(n - k)]), y[k:]) / n
        rows.append(SplitFitBound(label, const, lin, const + lin))
    return rows


def table1_closed_form(rho: float) -> list:
    """``(constant_error, linear_error)`` per row, as closed-form polynomials in rho."""
    r2 = rho * rho
    return [
        (0.0, 8 * r2 / 15),
        (0.0, 8 * r2 / 15),
        (1 / 12, 7 * r2 / 15),
        (4 * r2 / 9 + 2 * rho / 3 + 1 / 3, r2 / 9),
        (r2 / 2 + rho / 3 + 5 / 6, 0.0),
        (4 * r2 / 5 + 4 * rho / 3 + 5 / 3, 0.0),
        (r2 + 7 * rho / 3 + 35 / 12, 0.0),
    ]


def prop1_resnet_closed_form(rho: float) -> float:
    r2 = rho * rho
    return r2 * (12 * r2 + 82 * rho + 215) / (21 * r2 + 156 * rho + 420)


def scalar_resnet_spec(L: int) -> ResNetSpec:
    """``d_x = 1`` chain of ``h + v relu(u h + b)`` blocks with head ``w h + c``."""
    return ResNetSpec(1, tuple(SimpleVectorBlock(bias=True) for _ in range(L)), head_bias=True)


def scalar_resnet_theta(spec: ResNetSpec, blocks, w: float, c: float) -> np.ndarray:
    """``blocks`` is a list of ``(v, u, b)`` triples."""
    theta = spec.zeros()
    P = spec.unpack(theta)
    P.w[0], P.c[...] = w, c
    for bp, (v, u, b) in zip(P.blocks, blocks):
        bp.V[0, 0], bp.U[0, 0], bp.a[0] = v, u, b
    return theta


@dataclass
class Prop1Result:
    rho: float
    r_lin: float
    table: list
    all_bounds_ge_rlin: bool
    resnet_risk: float
    resnet_closed_form: float
    resnet_beats_linear: bool
    theta: np.ndarray

    @property
    def closed_form_error(self) -> float:
        return abs(self.resnet_risk - self.resnet_closed_form)


def prop1_verify(rho: float, tol: float = 1e-12) -> Prop1Result:
    """Check both halves of the six-point example at a given rho.

    Table rows are compared with ``8 rho^2 / 15`` up to ``tol``: at
    ``rho = sqrt(5/4)`` three rows tie with it in exact arithmetic.
    """
    if not 0.0 < rho <= RHO_MAX:
        raise HypothesisViolated(f"rho must lie in (0, sqrt(5/4)], got {rho}")
    ds = prop1_dataset(rho)
    r_lin = prop1_r_lin(rho)
    table = prop1_table(rho)
    all_ge = all(row.lower_bound >= r_lin - tol for row in table)

    spec = scalar_resnet_spec(1)
    theta = scalar_resnet_theta(spec, [(0.5 * rho, 1.0, -3.0)], 0.0, 0.0)
    H = forward(spec, theta, ds.X).hs[-1][:, 0]
    w, c = linalg.lstsq(np.column_stack([H, np.ones_like(H)]), ds.y)
    P = spec.unpack(theta)
    P.w[0], P.c[...] = w, c
    r, _ = risk_and_grad(spec, theta, ds, LossKind.SQUARED)
    return Prop1Result(rho, r_lin, table, all_ge, r, prop1_resnet_closed_form(rho), r < r_lin, theta)


def affine_fit_error(h, y) -> float:
    """Mean squared error of the best affine fit of ``y`` on ``h``."""
    return fit_linear(Dataset(np.asarray(h, dtype=float), y), LossKind.SQUARED, with_bias=True).risk


NONMONOTONE_X = np.array([1.0, 2.5, 3.0])
NONMONOTONE_Y = np.array([1.0, 3.0, 2.0])
NONMONOTONE_BLOCKS = [(1.0, 1.0, -2.0), (-4.0, 1.0, -3.5)]


@dataclass
class NonMonotoneResult:
    H1: np.ndarray
    H2: np.ndarray
    err_X: float
    err_H1: float
    err_H2: float
    risk: float
    grad_norm: float
    is_critical: bool
    spec: ResNetSpec
    theta: np.ndarray

    @property
    def dataset(self) -> Dataset:
        return Dataset(NONMONOTONE_X, NONMONOTONE_Y)


def nonmonotone_example() -> NonMonotoneResult:
    ds = Dataset(NONMONOTONE_X, NONMONOTONE_Y)
    spec = scalar_resnet_spec(2)
    theta = scalar_resnet_theta(spec, NONMONOTONE_BLOCKS, 1.0, 0.0)
    trace = forward(spec, theta, ds.X)
    H1, H2 = trace.hs[1][:, 0], trace.hs[2][:, 0]
    r, g = risk_and_grad(spec, theta, ds, LossKind.SQUARED)
    gn = float(np.linalg.norm(g))
    return NonMonotoneResult(
        H1, H2,
        affine_fit_error(ds.X, ds.y), affine_fit_error(H1, ds.y), affine_fit_error(H2, ds.y),
        r, gn, gn <= 1e-12, spec, theta,
    )
