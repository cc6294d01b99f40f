"""Risk bound at critical points and Rademacher complexity of norm-bounded ResNets."""

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import linalg
from .baseline import fit_linear
from .data import Dataset
from .errors import NotCritical, UnsupportedInner
from .landscape import slack
from .loss import LossKind, empirical_mu
from .model import ElementwiseReLU, GeneralBlock, ResNetSpec, forward, output_grad, risk_and_grad
from .instances import trial_rng


def lipschitz_rho(spec: ResNetSpec, theta) -> list:
    """Per-block certificate ``rho_l`` with ``|Phi_l(h)| <= rho_l |h|``.

    Product of spectral norms ``|V_l| |Z_l| |U_l|`` (missing factors are 1).
    Only valid when the residual map sends 0 to 0, i.e. every ReLU bias is
    nonpositive; a positive bias raises :class:`UnsupportedInner`.
    """
    P = spec.unpack(np.asarray(theta, dtype=float))
    rhos = []
    for l, (sh, bp) in enumerate(zip(spec.shapes, P.blocks), start=1):
        if sh.bias and np.any(bp.a > 0.0):
            raise UnsupportedInner(f"block {l}: positive ReLU bias, residual map does not fix 0")
        rho = linalg.spectral_norm(bp.V)
        if sh.affine:
            rho *= linalg.spectral_norm(bp.Z)
        if sh.has_u:
            rho *= linalg.spectral_norm(bp.U)
        rhos.append(rho)
    return rhos


def theorem2_bound(r_lin: float, mu: float, t_hat_norm: float, rho: Sequence[float],
                   mean_x_norm: float) -> float:
    """``r_lin + mu |t_hat| (prod(1 + rho_l) - 1) E|x|``."""
    growth = math.prod(1.0 + r for r in rho) - 1.0
    return r_lin + mu * t_hat_norm * growth * mean_x_norm


@dataclass
class Theorem2Report:
    rho: list
    mu: float
    mu_empirical: bool  # True: mu certified only at theta (squared loss)
    t_hat_norm: float
    mean_x_norm: float
    r_lin: float
    r_lin_attained: bool
    bound: float
    risk_at_theta: float
    grad_norm: float
    slack: float
    holds: bool
    notes: list = field(default_factory=list)


def theorem2_check(spec: ResNetSpec, theta_star, dataset: Dataset, loss,
                   critical_tol: float = 1e-6) -> Theorem2Report:
    loss = LossKind.parse(loss)
    theta = np.asarray(theta_star, dtype=float)
    r, g = risk_and_grad(spec, theta, dataset, loss)
    gn = float(np.linalg.norm(g))
    if gn > critical_tol:
        raise NotCritical(f"grad norm {gn:.3e} exceeds {critical_tol:g}")
    rho = lipschitz_rho(spec, theta)
    fit = fit_linear(dataset, loss, with_bias=spec.head_bias)
    if loss is LossKind.LOGISTIC:
        mu, empirical = 1.0, False
    else:
        preds = forward(spec, theta, dataset.X).output
        mu, empirical = empirical_mu(loss, preds, dataset.y), True
    t_norm = float(np.linalg.norm(fit.slope))
    mean_x = float(np.mean(np.linalg.norm(dataset.X, axis=1)))
    bound = theorem2_bound(fit.risk, mu, t_norm, rho, mean_x)
    sl = slack(gn, theta)
    notes = []
    if empirical:
        notes.append("mu is max |l'| at theta*, not a global Lipschitz constant")
    if not fit.attained:
        notes.append(f"best linear fit not attained; r_lin is the iterate value "
                     f"(grad residual {fit.grad_residual:.3e})")
    return Theorem2Report(rho, mu, empirical, t_norm, mean_x, fit.risk, fit.attained, bound,
                          r, gn, sl, r <= bound + sl, notes)


def theorem3_bound(B: float, n: int, M: Sequence[float]) -> float:
    """``B prod(1 + 2 M_l^2) / sqrt(n)``."""
    if B < 0 or n < 1 or any(m < 0 for m in M):
        raise ValueError("need B >= 0, n >= 1 and M_l >= 0")
    return B * math.prod(1.0 + 2.0 * m * m for m in M) / math.sqrt(n)


def rademacher_class(d_x: int, L: int, widths: Optional[Sequence[int]] = None) -> ResNetSpec:
    """Blocks ``h + V_l relu(U_l h)``, including an input matrix in block 1."""
    widths = list(widths) if widths is not None else [d_x] * L
    if len(widths) != L:
        raise ValueError("need one width per block")
    return ResNetSpec(d_x, tuple(GeneralBlock(k, ElementwiseReLU()) for k in widths))


def project(spec: ResNetSpec, theta, M: Sequence[float]) -> np.ndarray:
    """Rescale ``w`` into the unit ball, then each ``V_l`` and ``U_l`` into radius ``M_l``."""
    theta = np.array(theta, dtype=float)
    P = spec.unpack(theta)
    nw = np.linalg.norm(P.w)
    if nw > 1.0:
        P.w /= nw
    for bp, m in zip(P.blocks, M):
        for arr in (bp.V, bp.U):
            na = np.linalg.norm(arr)
            if na > m:
                arr *= (m / na) if na > 0 else 0.0
    return theta


def _correlation(spec, theta, X, signs):
    return float(signs @ forward(spec, theta, X).output) / X.shape[0]


def ascend(spec: ResNetSpec, X, signs, M, theta0, max_iters: int = 200, tol: float = 1e-10):
    """Projected gradient ascent on ``(1/n) sum_i signs_i f(x_i)``.

    Steps double after each success and halve on failure (sufficient-ascent
    test), so the objective never decreases.
    """
    n = X.shape[0]
    theta = project(spec, theta0, M)
    J = _correlation(spec, theta, X, signs)
    t = 1.0
    for _ in range(max_iters):
        g = output_grad(spec, theta, forward(spec, theta, X), signs / n)
        while True:
            cand = project(spec, theta + t * g, M)
            Jc = _correlation(spec, cand, X, signs)
            if Jc >= J + 1e-4 * float(g @ (cand - theta)):
                break
            t *= 0.5
            if t < 1e-14:
                return theta, J
        moved = float(np.linalg.norm(cand - theta))
        theta, J = cand, Jc
        if moved <= tol * (1.0 + float(np.linalg.norm(theta))):
            break
        t *= 2.0
    return theta, J


def _random_start(spec, M, rng):
    theta = rng.standard_normal(spec.n_params)
    P = spec.unpack(theta)
    P.w /= np.linalg.norm(P.w)
    for bp, m in zip(P.blocks, M):
        for arr in (bp.V, bp.U):
            arr *= m / np.linalg.norm(arr)
    return theta


@dataclass
class RademacherReport:
    n: int
    B: float
    M: list
    bound: float
    estimate: float
    stderr: float
    trials: int
    restarts: int
    exhaustive: bool
    values: np.ndarray  # per sign draw, best objective found
    thetas: list  # per sign draw, maximizing parameters

    @property
    def within_bound(self) -> bool:
        return self.estimate <= self.bound + 2.0 * self.stderr


def rademacher_estimate(S, M: Sequence[float], trials: int = 30, restarts: int = 8,
                        seed: int = 0, widths: Optional[Sequence[int]] = None,
                        max_iters: int = 200, exhaustive: bool = False,
                        warm_starts: Optional[list] = None) -> RademacherReport:
    """Monte-Carlo estimate of the empirical Rademacher complexity of the class.

    For each sign draw the supremum is approached by the best of ``restarts``
    projected ascents, so each per-draw value is a lower bound of the true
    supremum.  ``exhaustive=True`` replaces sampling by all ``2^n`` sign
    vectors.  Draw ``i`` uses stream ``(seed, i, 0)`` for its signs and
    ``(seed, i, 1 + r)`` for restart ``r``; ``warm_starts[i]`` is used as an
    extra start for draw ``i``.
    """
    X = np.asarray(S, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d_x = X.shape
    M = [float(m) for m in M]
    spec = rademacher_class(d_x, len(M), widths)
    B = float(np.max(np.linalg.norm(X, axis=1)))
    if exhaustive:
        if n > 16:
            raise ValueError("exhaustive enumeration is limited to n <= 16")
        sign_list = [np.array(s, dtype=float) for s in itertools.product((-1.0, 1.0), repeat=n)]
    else:
        if trials < 30:
            raise ValueError("need at least 30 trials")
        sign_list = [trial_rng(seed, i, 0).choice([-1.0, 1.0], size=n) for i in range(trials)]

    values, thetas = [], []
    for i, signs in enumerate(sign_list):
        starts = [_random_start(spec, M, trial_rng(seed, i, 1 + r)) for r in range(restarts)]
        if warm_starts is not None:
            starts.append(np.asarray(warm_starts[i], dtype=float))
        best = (None, -np.inf)
        for th0 in starts:
            th, J = ascend(spec, X, signs, M, th0, max_iters=max_iters)
            if J > best[1]:
                best = (th, J)
        thetas.append(best[0])
        values.append(best[1])
    values = np.array(values)
    k = len(values)
    if exhaustive:
        stderr = 0.0
    else:
        stderr = float(values.std(ddof=1) / math.sqrt(k))
    return RademacherReport(n, B, M, theorem3_bound(B, n, M), float(values.mean()), stderr,
                            k, restarts, exhaustive, values, thetas)
