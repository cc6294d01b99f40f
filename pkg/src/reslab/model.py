"""Deep residual networks with a linear head.

``h_0 = x``, ``h_l = h_{l-1} + V_l phi_l(U_l h_{l-1})``, ``f(x) = w^T h_L (+ c)``.

Parameters live in one flat float vector; :class:`ParamLayout` maps
``(block, name)`` to a slice of it.  Block indices are 1-based, index 0 holds
the head (``w`` and the optional scalar bias ``c``).  Inner parameters are
``Z`` (the weight of an :class:`AffineReLU`) and ``a`` (ReLU bias).
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

import numpy as np

from . import loss as losses
from .data import Dataset
from .errors import DimensionMismatch, KinkTooClose


@dataclass(frozen=True)
class ElementwiseReLU:
    """``phi(s) = relu(s + a)``; output width equals input width."""

    bias: bool = False


@dataclass(frozen=True)
class AffineReLU:
    """``phi(s) = relu(Z s + a)`` with ``Z`` of shape ``(width, m)``."""

    width: int
    bias: bool = False


Inner = Union[ElementwiseReLU, AffineReLU]


@dataclass(frozen=True)
class GeneralBlock:
    m: int
    inner: Inner = ElementwiseReLU()


@dataclass(frozen=True)
class SimpleVectorBlock:
    """``h -> h + v relu(u^T h (+ b))`` with ``u, v`` in ``R^{d_x}``."""

    bias: bool = False


@dataclass(frozen=True)
class FirstBlock:
    """``h -> h + V_1 phi(h)``: no input matrix, only allowed as block 1."""

    inner: Inner = ElementwiseReLU()


BlockSpec = Union[GeneralBlock, SimpleVectorBlock, FirstBlock]


@dataclass(frozen=True)
class BlockShape:
    has_u: bool
    m: int  # width entering phi
    k: int  # width leaving phi
    affine: bool
    bias: bool


def _shape_of(block: BlockSpec, d_x: int) -> BlockShape:
    if isinstance(block, SimpleVectorBlock):
        return BlockShape(True, 1, 1, False, block.bias)
    if isinstance(block, GeneralBlock):
        has_u, m, inner = True, block.m, block.inner
    elif isinstance(block, FirstBlock):
        has_u, m, inner = False, d_x, block.inner
    else:
        raise TypeError(f"unknown block type {type(block).__name__}")
    if m < 1:
        raise ValueError("block input width must be positive")
    if isinstance(inner, AffineReLU):
        if inner.width < 1:
            raise ValueError("AffineReLU width must be positive")
        return BlockShape(has_u, m, inner.width, True, inner.bias)
    return BlockShape(has_u, m, m, False, inner.bias)


@dataclass
class BlockParams:
    V: np.ndarray
    U: Optional[np.ndarray] = None
    Z: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None

    @property
    def u(self):
        return self.U[0]

    @property
    def v(self):
        return self.V[:, 0]


@dataclass
class Params:
    """Array views into a flat parameter vector (writes go through)."""

    w: np.ndarray
    c: Optional[np.ndarray]
    blocks: list = field(default_factory=list)


class ParamLayout:
    def __init__(self, d_x: int, shapes, head_bias: bool):
        self._entries = {}
        off = 0

        def add(key, shape):
            nonlocal off
            size = int(np.prod(shape))
            self._entries[key] = (off, shape)
            off += size

        add((0, "w"), (d_x,))
        if head_bias:
            add((0, "c"), ())
        for l, sh in enumerate(shapes, start=1):
            add((l, "V"), (d_x, sh.k))
            if sh.has_u:
                add((l, "U"), (sh.m, d_x))
        for l, sh in enumerate(shapes, start=1):
            if sh.affine:
                add((l, "Z"), (sh.k, sh.m))
            if sh.bias:
                add((l, "a"), (sh.k,))
        self.size = off
        self._shapes = list(shapes)
        self._head_bias = head_bias

    def __contains__(self, key):
        return key in self._entries

    def keys(self):
        return list(self._entries)

    def slice(self, block: int, name: str) -> slice:
        off, shape = self._entries[(block, name)]
        return slice(off, off + int(np.prod(shape)))

    def offset(self, block: int, name: str, row: int = 0, col: int = 0) -> int:
        off, shape = self._entries[(block, name)]
        if len(shape) == 2:
            if not (0 <= row < shape[0] and 0 <= col < shape[1]):
                raise IndexError(f"({row}, {col}) outside {shape}")
            return off + row * shape[1] + col
        if len(shape) == 1:
            if not 0 <= row < shape[0] or col != 0:
                raise IndexError(f"({row}, {col}) outside {shape}")
            return off + row
        return off

    def unpack(self, theta: np.ndarray) -> Params:
        if theta.shape != (self.size,):
            raise DimensionMismatch(f"theta has shape {theta.shape}, layout needs ({self.size},)")

        def view(key):
            if key not in self._entries:
                return None
            off, shape = self._entries[key]
            return theta[off:off + int(np.prod(shape))].reshape(shape)

        blocks = [
            BlockParams(V=view((l, "V")), U=view((l, "U")), Z=view((l, "Z")), a=view((l, "a")))
            for l in range(1, len(self._shapes) + 1)
        ]
        return Params(w=view((0, "w")), c=view((0, "c")), blocks=blocks)


@dataclass(frozen=True)
class ResNetSpec:
    d_x: int
    blocks: tuple = ()
    head_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.d_x < 1:
            raise ValueError("d_x must be positive")
        for i, b in enumerate(self.blocks):
            if isinstance(b, FirstBlock) and i != 0:
                raise ValueError("FirstBlock is only allowed as the first block")

    @property
    def L(self) -> int:
        return len(self.blocks)

    @cached_property
    def shapes(self):
        return [_shape_of(b, self.d_x) for b in self.blocks]

    @cached_property
    def layout(self) -> ParamLayout:
        return ParamLayout(self.d_x, self.shapes, self.head_bias)

    @property
    def n_params(self) -> int:
        return self.layout.size

    def zeros(self) -> np.ndarray:
        return np.zeros(self.layout.size)

    def unpack(self, theta) -> Params:
        return self.layout.unpack(np.asarray(theta))

    def input_widths(self, start: int = 2):
        """``m_l`` for blocks ``l >= start`` that carry an input matrix."""
        return [sh.m for l, sh in enumerate(self.shapes, start=1) if l >= start and sh.has_u]


def random_theta(spec: ResNetSpec, rng: np.random.Generator, scale: float = 0.5) -> np.ndarray:
    """Gaussian parameters, each matrix scaled by ``scale / sqrt(fan_in)``."""
    theta = spec.zeros()
    for key in spec.layout.keys():
        sl = spec.layout.slice(*key)
        size = sl.stop - sl.start
        theta[sl] = rng.standard_normal(size) * scale / np.sqrt(_fan_in(spec, key))
    return theta


def _fan_in(spec, key):
    l, name = key
    if l == 0:
        return spec.d_x if name == "w" else 1
    sh = spec.shapes[l - 1]
    return {"V": sh.k, "U": spec.d_x, "Z": sh.m, "a": 1}[name]


@dataclass
class ForwardTrace:
    hs: list  # h_0 .. h_L, each (n, d_x)
    inputs: list  # per block: the argument of phi, (n, m_l)
    pre: list  # per block: ReLU preactivations, (n, k_l)
    phis: list  # per block: phi outputs, (n, k_l)
    output: np.ndarray  # (n,)


def forward(spec: ResNetSpec, theta, x) -> ForwardTrace:
    """Evaluate the network on one input vector or on the rows of a matrix."""
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.d_x:
        raise DimensionMismatch(f"input has shape {np.shape(x)}, network expects d_x={spec.d_x}")
    P = spec.unpack(np.asarray(theta, dtype=float))
    H = X
    hs, inputs, pre, phis = [H], [], [], []
    for sh, bp in zip(spec.shapes, P.blocks):
        inp = H @ bp.U.T if sh.has_u else H
        s = inp @ bp.Z.T if sh.affine else inp
        if sh.bias:
            s = s + bp.a
        phi = np.maximum(s, 0.0)
        H = H + phi @ bp.V.T
        hs.append(H)
        inputs.append(inp)
        pre.append(s)
        phis.append(phi)
    out = H @ P.w
    if spec.head_bias:
        out = out + P.c
    return ForwardTrace(hs, inputs, pre, phis, out)


def output_grad(spec: ResNetSpec, theta, trace: ForwardTrace, coeffs) -> np.ndarray:
    """Gradient of ``sum_i coeffs[i] * f(x_i)`` with respect to the flat parameters.

    ReLU derivative is taken as 0 at 0.
    """
    theta = np.asarray(theta, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    P = spec.unpack(theta)
    grad = np.zeros_like(theta)
    G = spec.unpack(grad)
    G.w[:] = trace.hs[-1].T @ coeffs
    if spec.head_bias:
        G.c[...] = coeffs.sum()
    gH = np.outer(coeffs, P.w)
    for l in range(spec.L - 1, -1, -1):
        sh, bp, gp = spec.shapes[l], P.blocks[l], G.blocks[l]
        gp.V[:] = gH.T @ trace.phis[l]
        gs = (gH @ bp.V) * (trace.pre[l] > 0.0)
        if sh.bias:
            gp.a[:] = gs.sum(axis=0)
        if sh.affine:
            gp.Z[:] = gs.T @ trace.inputs[l]
            ginp = gs @ bp.Z
        else:
            ginp = gs
        if sh.has_u:
            gp.U[:] = ginp.T @ trace.hs[l]
            gH = gH + ginp @ bp.U
        else:
            gH = gH + ginp
    return grad


def _risk_grad_trace(spec, theta, dataset: Dataset, loss):
    trace = forward(spec, theta, dataset.X)
    value, d1, _ = losses.evaluate(loss, trace.output, dataset.y)
    n = dataset.n
    return float(value.mean()), output_grad(spec, theta, trace, d1 / n), trace


def risk(spec: ResNetSpec, theta, dataset: Dataset, loss) -> float:
    trace = forward(spec, theta, dataset.X)
    value, _, _ = losses.evaluate(loss, trace.output, dataset.y)
    return float(value.mean())


def risk_and_grad(spec: ResNetSpec, theta, dataset: Dataset, loss):
    """Empirical risk ``mean_i l(f(x_i); y_i)`` and its analytic gradient."""
    r, g, _ = _risk_grad_trace(spec, theta, dataset, loss)
    return r, g


def kink_margin(spec: ResNetSpec, theta, dataset: Dataset) -> float:
    """Smallest ``|preactivation|`` over all ReLUs and examples (inf without ReLUs)."""
    trace = forward(spec, theta, dataset.X)
    if not trace.pre:
        return float("inf")
    return float(min(np.min(np.abs(s)) for s in trace.pre))


def _pattern(trace):
    return [s > 0.0 for s in trace.pre]


def hessian_fd(spec: ResNetSpec, theta, dataset: Dataset, loss, step: float = 1e-5,
               max_params: int = 5000) -> np.ndarray:
    """Symmetrized central differences of the analytic gradient.

    Coordinate ``i`` moves by ``step * (1 + |theta_i|)``.  Raises
    :class:`KinkTooClose` if the kink margin is not above ``2 * step``, or if
    any probe flips a ReLU on or off (the stencil then straddles a kink and
    the result is not a Hessian).
    """
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    if p > max_params:
        raise ValueError(f"{p} parameters exceeds the finite-difference limit {max_params}")
    steps = step * (1.0 + np.abs(theta))
    margin = kink_margin(spec, theta, dataset)
    if not margin > 2.0 * step:
        raise KinkTooClose(f"kink margin {margin:.3e} <= 2 * step {step:.3e}")
    base = _pattern(forward(spec, theta, dataset.X))
    H = np.empty((p, p))
    for i in range(p):
        e = np.zeros(p)
        e[i] = steps[i]
        _, gp, tp = _risk_grad_trace(spec, theta + e, dataset, loss)
        _, gm, tm = _risk_grad_trace(spec, theta - e, dataset, loss)
        for ref, a, b in zip(base, _pattern(tp), _pattern(tm)):
            if not (np.array_equal(ref, a) and np.array_equal(ref, b)):
                raise KinkTooClose(f"finite-difference probe on parameter {i} crosses a ReLU kink")
        H[:, i] = (gp - gm) / (2.0 * steps[i])
    return 0.5 * (H + H.T)
