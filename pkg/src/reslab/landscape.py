"""Critical points, the two coverage conditions and the saddle-escape construction.

At a critical point with representation coverage (``A = E[l'' h_L h_L^T]``
full rank) and parameter coverage (rows of ``U_2 .. U_L`` do not span
``R^{d_x}``), either the risk is no worse than the best linear predictor or
the Hessian has a negative eigenvalue.  The negative direction is explicit:
perturb ``V_l`` by ``alpha b^T`` with ``alpha`` orthogonal to every ``U_k``
and ``w`` by ``-A^{-1} alpha |b|^2``, where ``b = E[l' phi_l]``.
"""

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import linalg
from .baseline import fit_linear
from .data import Dataset
from .errors import CoverageViolated, KinkTooClose
from .loss import LossKind, evaluate
from .model import ResNetSpec, forward, hessian_fd, kink_margin, risk, risk_and_grad

PROBE_FACTORS = (1e-2, 1e-3, 1e-4)


def slack(grad_norm: float, theta) -> float:
    """Allowance on ``risk <= r_lin`` at an approximate critical point."""
    return 10.0 * grad_norm * (1.0 + float(np.linalg.norm(theta)))


def _descend(spec, dataset, loss, theta, tol, max_iters):
    r, g = risk_and_grad(spec, theta, dataset, loss)
    gn = float(np.linalg.norm(g))
    best = (theta.copy(), gn)
    step = 1.0 / max(1.0, gn)
    for _ in range(max_iters):
        if gn <= tol:
            break
        while True:
            cand = theta - step * g
            r_c, g_c = risk_and_grad(spec, cand, dataset, loss)
            if r_c <= r - 1e-4 * step * gn * gn:
                break
            step *= 0.5
            if step < 1e-30:
                return best
        s, yv = cand - theta, g_c - g
        theta, r, g = cand, r_c, g_c
        gn = float(np.linalg.norm(g))
        if gn < best[1]:
            best = (theta.copy(), gn)
        sy = float(s @ yv)
        step = min(float(s @ s) / sy if sy > 0 else 2.0 * step, 1e6)
    return best


def _newton_polish(spec, dataset, loss, theta, gn, tol, max_steps):
    """Newton steps on the gradient inside the current smooth piece.

    A step is accepted only if it keeps every ReLU on the same side and
    reduces the gradient norm; any kink encounter ends the polish.
    """
    for _ in range(max_steps):
        if gn <= tol:
            break
        try:
            H = hessian_fd(spec, theta, dataset, loss)
        except KinkTooClose:
            break
        _, g = risk_and_grad(spec, theta, dataset, loss)
        p = -linalg.lstsq(H, g, rel_tol=1e-12)
        base = [s > 0 for s in forward(spec, theta, dataset.X).pre]
        t = 1.0
        while t > 1e-6:
            cand = theta + t * p
            same = all(np.array_equal(b, s > 0)
                       for b, s in zip(base, forward(spec, cand, dataset.X).pre))
            if same:
                gc = float(np.linalg.norm(risk_and_grad(spec, cand, dataset, loss)[1]))
                if gc < gn:
                    theta, gn = cand, gc
                    break
            t *= 0.5
        else:
            break
    return theta, gn


def find_critical_point(spec: ResNetSpec, dataset: Dataset, loss, init, tol: float = 1e-8,
                        max_iters: int = 3000, polish_steps: int = 20):
    """Gradient descent with Barzilai-Borwein trial steps and Armijo backtracking.

    If descent stops short of ``tol`` away from any ReLU kink, up to
    ``polish_steps`` Newton steps on the finite-difference Hessian finish the
    job.  Returns ``(theta, grad_norm)``: the first iterate with gradient norm
    at most ``tol``, otherwise the iterate with the smallest gradient seen.
    """
    loss = LossKind.parse(loss)
    theta, gn = _descend(spec, dataset, loss, np.array(init, dtype=float), tol, max_iters)
    if gn > tol and polish_steps > 0:
        theta, gn = _newton_polish(spec, dataset, loss, theta, gn, tol, polish_steps)
    return theta, gn


@dataclass
class CoverageReport:
    A: np.ndarray
    lambda_min_A: float
    rep_coverage: bool
    stacked: np.ndarray  # [U_2^T ... U_L^T], shape (d_x, sum m_l)
    stacked_rank: int
    param_coverage: bool
    complement_basis: np.ndarray  # columns span the orthogonal complement


def representation_matrix(spec, theta, dataset, loss) -> np.ndarray:
    trace = forward(spec, theta, dataset.X)
    _, _, d2 = evaluate(loss, trace.output, dataset.y)
    H = trace.hs[-1]
    return (H * d2[:, None]).T @ H / dataset.n


def stacked_inputs(spec: ResNetSpec, theta) -> np.ndarray:
    P = spec.unpack(np.asarray(theta, dtype=float))
    cols = [bp.U.T for l, bp in enumerate(P.blocks, start=1) if l >= 2 and bp.U is not None]
    if not cols:
        return np.zeros((spec.d_x, 0))
    return np.hstack(cols)


def check_coverage(spec: ResNetSpec, theta, dataset: Dataset, loss,
                   rank_tol: float = linalg.DEFAULT_RANK_TOL) -> CoverageReport:
    loss = LossKind.parse(loss)
    A = representation_matrix(spec, theta, dataset, loss)
    lam = linalg.sym_eig(A).lambda_min
    rep = linalg.rank(A, rank_tol) == spec.d_x
    S = stacked_inputs(spec, theta)
    srank = linalg.rank(S, rank_tol) if S.shape[1] else 0
    comp = linalg.orth_complement(S, rank_tol)
    return CoverageReport(A, lam, rep, S, srank, srank < spec.d_x, comp)


@dataclass
class EscapeDirection:
    block_index: int
    alpha: np.ndarray
    beta: np.ndarray
    epsilon: np.ndarray
    delta: np.ndarray  # flat perturbation of theta
    predicted_decrease: float  # second-order change along delta
    verified_decrease: float  # R(theta + s delta) - R(theta) at probe_step
    probe_step: float
    verified: bool


def block_correlation(spec, theta, dataset, loss, block: int) -> np.ndarray:
    """``b = mean_i l'(f(x_i); y_i) phi_block(x_i)``."""
    trace = forward(spec, theta, dataset.X)
    _, d1, _ = evaluate(loss, trace.output, dataset.y)
    return trace.phis[block - 1].T @ d1 / dataset.n


def line_probe(spec, theta, dataset, loss, delta, factors=PROBE_FACTORS):
    """First geometric step with a strict risk decrease.

    Returns ``(change, step, decreased)``; without a decrease the smallest
    change seen is reported.
    """
    r0 = risk(spec, theta, dataset, loss)
    scale = float(np.linalg.norm(theta)) or 1.0
    dn = float(np.linalg.norm(delta))
    best = (np.inf, 0.0)
    for f in factors:
        s = f * scale / dn
        change = risk(spec, theta + s * delta, dataset, loss) - r0
        if change < 0.0:
            return change, s, True
        if change < best[0]:
            best = (change, s)
    return best[0], best[1], False


def escape_direction(spec: ResNetSpec, theta, dataset: Dataset, loss, block: int,
                     coverage: Optional[CoverageReport] = None,
                     b_tol: float = 1e-10) -> Optional[EscapeDirection]:
    loss = LossKind.parse(loss)
    theta = np.asarray(theta, dtype=float)
    if not 1 <= block <= spec.L:
        raise ValueError(f"block must be in [1, {spec.L}]")
    if coverage is None:
        coverage = check_coverage(spec, theta, dataset, loss)
    if not coverage.rep_coverage:
        raise CoverageViolated("representation coverage fails: A is singular")
    if not coverage.param_coverage:
        raise CoverageViolated("parameter coverage fails: U_2..U_L span R^d_x")
    b = block_correlation(spec, theta, dataset, loss, block)
    nb = float(np.linalg.norm(b))
    if nb <= b_tol:
        return None
    alpha = coverage.complement_basis[:, 0]
    Delta = np.outer(alpha, b)
    Db = alpha * nb * nb
    eps = -np.linalg.solve(coverage.A, Db)
    predicted = 0.5 * float(Db @ eps)

    delta = np.zeros_like(theta)
    D = spec.unpack(delta)
    D.w[:] = eps
    D.blocks[block - 1].V[:] = Delta
    change, step, ok = line_probe(spec, theta, dataset, loss, delta)
    return EscapeDirection(block, alpha, b, eps, delta, predicted, change, step, ok)


def quadratic_form(H, delta) -> float:
    return float(delta @ H @ delta)


class Verdict(enum.Enum):
    GOOD_AS_LINEAR = "GoodAsLinear"
    STRICT_SADDLE = "StrictSaddle"
    CONDITIONS_VIOLATED = "ConditionsViolated"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class VerdictReport:
    theta_star: np.ndarray
    grad_norm: float
    risk: float
    r_lin: float
    slack: float
    kink_margin: float
    coverage: CoverageReport
    w_outside_u: float  # norm of the component of w orthogonal to colsp(stacked)
    case: int  # 1 if w is outside colsp(stacked), else 2
    verdict: Verdict
    reason: str = ""
    escape: Optional[EscapeDirection] = None
    lambda_min: Optional[float] = None
    notes: list = field(default_factory=list)


def theorem1_verdict(spec: ResNetSpec, dataset: Dataset, loss, theta_star,
                     grad_norm: Optional[float] = None, r_lin: Optional[float] = None,
                     kink_tol: float = 1e-3, critical_tol: float = 1e-6,
                     rank_tol: float = linalg.DEFAULT_RANK_TOL) -> VerdictReport:
    """Classify a near-critical point.

    Order of checks: near-criticality, parameter coverage, w inside or
    outside the span of the stacked inputs (outside needs no representation
    coverage), kink margin, risk against ``r_lin + slack``, then a scan over
    blocks for a verified escape direction.
    """
    loss = LossKind.parse(loss)
    theta = np.asarray(theta_star, dtype=float)
    r, g = risk_and_grad(spec, theta, dataset, loss)
    if grad_norm is None:
        grad_norm = float(np.linalg.norm(g))
    if r_lin is None:
        r_lin = fit_linear(dataset, loss, with_bias=spec.head_bias).risk
    sl = slack(grad_norm, theta)
    margin = kink_margin(spec, theta, dataset)
    cov = check_coverage(spec, theta, dataset, loss, rank_tol)
    w = spec.unpack(theta).w
    w_out = float(np.linalg.norm(cov.complement_basis.T @ w)) if cov.complement_basis.size else 0.0
    case = 1 if w_out > 1e-8 * float(np.linalg.norm(w)) and w_out > 0.0 else 2
    report = VerdictReport(theta, grad_norm, r, r_lin, sl, margin, cov, w_out, case,
                           Verdict.INCONCLUSIVE)

    if grad_norm > critical_tol:
        report.reason = f"not near-critical: grad norm {grad_norm:.3e} > {critical_tol:g}"
        return report
    if not cov.param_coverage or (case == 2 and not cov.rep_coverage):
        report.verdict = Verdict.CONDITIONS_VIOLATED
        failed = []
        if not cov.param_coverage:
            failed.append("parameter coverage")
        if not cov.rep_coverage:
            failed.append("representation coverage")
        report.reason = " and ".join(failed) + " violated"
        if r <= r_lin + sl:
            report.notes.append("risk <= r_lin holds anyway")
        return report
    if margin < kink_tol:
        report.reason = f"kink margin {margin:.3e} below {kink_tol:g}; twice-differentiability not certified"
        return report
    if r <= r_lin + sl:
        report.verdict = Verdict.GOOD_AS_LINEAR
        return report
    if cov.rep_coverage:
        for l in range(1, spec.L + 1):
            esc = escape_direction(spec, theta, dataset, loss, l, coverage=cov)
            if esc is not None and esc.verified:
                report.verdict = Verdict.STRICT_SADDLE
                report.escape = esc
                return report
    report.reason = "risk above r_lin + slack and no verified escape direction"
    try:
        H = hessian_fd(spec, theta, dataset, loss)
        report.lambda_min = linalg.sym_eig(H).lambda_min
    except KinkTooClose as exc:
        report.notes.append(f"Hessian unavailable: {exc}")
    return report


def zero_head_saddle(spec: ResNetSpec, theta, dataset: Dataset, loss) -> np.ndarray:
    """Exact critical point with ``w = 0`` built from ``theta``.

    With ``w = 0`` every gradient except those of the head vanishes.  The head
    bias (if any) is set to the best constant predictor, and the last block's
    ``V_L`` is chosen so that ``E[l'(c; y) h_L] = 0``.  Since ``w = 0`` lies in
    every subspace, the point falls under the escape-direction case whenever
    ``b_L != 0``.
    """
    if spec.L == 0:
        raise ValueError("need at least one block")
    loss = LossKind.parse(loss)
    theta = np.array(theta, dtype=float)
    P = spec.unpack(theta)
    P.w[:] = 0.0
    c = 0.0
    if spec.head_bias:
        if loss is LossKind.SQUARED:
            c = float(np.mean(dataset.y))
        else:
            frac = float(np.mean(dataset.y > 0))
            if frac in (0.0, 1.0):
                raise ValueError("single-class labels: no finite best constant")
            c = float(np.log(frac / (1.0 - frac)))
        P.c[...] = c
    _, d1, _ = evaluate(loss, np.full(dataset.n, c), dataset.y)
    trace = forward(spec, theta, dataset.X)
    g_prev = trace.hs[-2].T @ d1 / dataset.n
    g_phi = trace.phis[-1].T @ d1 / dataset.n
    nphi = float(g_phi @ g_phi)
    if nphi == 0.0:
        raise ValueError("last block's activations are uncorrelated with l'(c; y)")
    P.blocks[-1].V[:] = -np.outer(g_prev, g_phi) / nphi
    return theta
