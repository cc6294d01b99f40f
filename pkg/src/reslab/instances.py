"""Seeded random architectures and datasets for property sweeps."""

import numpy as np

from .data import Dataset
from .loss import LossKind
from .model import AffineReLU, ElementwiseReLU, FirstBlock, GeneralBlock, ResNetSpec, SimpleVectorBlock


def trial_rng(master_seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent PCG64 stream keyed by ``(master_seed, index, stream)``."""
    return np.random.default_rng([int(master_seed), int(index), int(stream)])


def random_spec(rng: np.random.Generator, d_min: int = 2, d_max: int = 8,
                max_blocks: int = 4, inner_bias: bool = False) -> ResNetSpec:
    """Random ResNet with ``sum_{l>=2} m_l < d_x`` (parameter coverage by construction)."""
    d_x = int(rng.integers(d_min, d_max + 1))
    budget = d_x - 1  # total input width left for blocks 2..L
    if rng.random() < 0.5:
        first = FirstBlock(ElementwiseReLU(inner_bias))
    else:
        first = FirstBlock(AffineReLU(int(rng.integers(1, 4)), inner_bias))
    blocks = [first]
    n_more = int(rng.integers(0, min(max_blocks - 1, budget) + 1))
    for j in range(n_more):
        remaining_blocks = n_more - j - 1
        m = int(rng.integers(1, budget - remaining_blocks + 1))
        m = min(m, 3)
        budget -= m
        kind = rng.integers(3)
        if kind == 0 or m == 1 and kind == 1:
            blocks.append(SimpleVectorBlock(inner_bias))
            budget += m - 1
        elif kind == 1:
            blocks.append(GeneralBlock(m, ElementwiseReLU(inner_bias)))
        else:
            blocks.append(GeneralBlock(m, AffineReLU(int(rng.integers(1, 4)), inner_bias)))
    return ResNetSpec(d_x, tuple(blocks))


def random_dataset(rng: np.random.Generator, d_x: int, loss, n: int = None,
                   n_max: int = 64, label_noise: float = 0.2) -> Dataset:
    """Gaussian inputs with a nonlinear target; logistic labels get random flips."""
    loss = LossKind.parse(loss)
    if n is None:
        n = int(rng.integers(min(4 * d_x, n_max), n_max + 1))
    X = rng.standard_normal((n, d_x))
    X += 0.1 * np.sign(X)  # keep coordinates off zero: they are ReLU inputs in block 1
    a = rng.standard_normal(d_x)
    c = rng.standard_normal(d_x)
    signal = X @ a + np.abs(X @ c) - 0.5
    if loss is LossKind.SQUARED:
        y = signal + 0.3 * rng.standard_normal(n)
    else:
        y = np.where(signal > 0, 1.0, -1.0)
        flip = rng.random(n) < label_noise
        y[flip] *= -1.0
    return Dataset(X, y)
