"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Lines are also collected and repeated in the pytest terminal summary.
"""

import contextlib
import itertools
import math
import time

import numpy as np
import pytest

from reslab import linalg
from reslab.baseline import fit_linear
from reslab.bounds import lipschitz_rho, rademacher_estimate, theorem2_bound, theorem2_check
from reslab.data import Dataset
from reslab.examples import (RHO_MAX, nonmonotone_example, prop1_dataset, prop1_r_lin,
                             prop1_resnet_closed_form, prop1_table, prop1_verify, table1_closed_form)
from reslab.instances import random_dataset, random_spec, trial_rng
from reslab.landscape import (Verdict, find_critical_point, quadratic_form, theorem1_verdict,
                              zero_head_saddle)
from reslab.loss import LossKind
from reslab.model import (ResNetSpec, SimpleVectorBlock, hessian_fd, kink_margin, random_theta,
                          risk, risk_and_grad)
from reslab.runner import ExperimentConfig, run

from conftest import ACCEPTANCE_LINES, fd_grad

SQ, LG = LossKind.SQUARED, LossKind.LOGISTIC
MASTER = 7
N_TRIALS = 200
GRAD_TOL, KINK_TOL = 1e-8, 1e-3


@contextlib.contextmanager
def criterion(number, title):
    """Record a PASS/FAIL line for the enclosed checks; ``detail`` may be filled in."""
    detail = {}
    t0 = time.perf_counter()
    try:
        yield detail
    except BaseException:
        status = "FAIL"
        raise
    else:
        status = "PASS"
    finally:
        extra = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = f"criterion {number:2d} {status}: {title} [{time.perf_counter() - t0:.1f}s] {extra}"
        print(line)
        ACCEPTANCE_LINES.append((number, line))


def critical_trial(i):
    """Trial ``i``: even indices squared loss, odd logistic; every other pair
    builds an exact zero-head saddle, the rest run descent from a random start."""
    rng = trial_rng(MASTER, i, 0)
    loss = SQ if i % 2 == 0 else LG
    spec = random_spec(rng, d_max=8)
    d = spec.d_x
    saddle = (i // 2) % 2 == 1
    init = random_theta(spec, trial_rng(MASTER, i, 1))
    if saddle:
        ds = random_dataset(rng, d, loss, n=int(rng.integers(2 * d, 65)))
        theta = zero_head_saddle(spec, init, ds, loss)
        gn = float(np.linalg.norm(risk_and_grad(spec, theta, ds, loss)[1]))
    else:
        ds = random_dataset(rng, d, loss, n=int(rng.integers(d + 2, 33)))
        theta, gn = find_critical_point(spec, ds, loss, init, tol=GRAD_TOL)
    v = theorem1_verdict(spec, ds, loss, theta, gn, kink_tol=KINK_TOL)
    return {"index": i, "spec": spec, "ds": ds, "loss": loss, "theta": theta, "gn": gn, "v": v,
            "certified": gn <= GRAD_TOL and v.kink_margin >= KINK_TOL}


@pytest.fixture(scope="module")
def trials():
    t0 = time.perf_counter()
    out = [critical_trial(i) for i in range(N_TRIALS)]
    return out, time.perf_counter() - t0


def test_criterion_01_six_point_linear_risk():
    with criterion(1, "best affine fit on six points equals 8 rho^2/15") as d:
        t0 = time.perf_counter()
        worst = 0.0
        for rho in (0.1, 0.5, 1.0, RHO_MAX):
            fit = fit_linear(prop1_dataset(rho), SQ, with_bias=True)
            worst = max(worst, abs(fit.risk - 8 * rho * rho / 15))
        elapsed = time.perf_counter() - t0
        d["max_err"] = f"{worst:.2e}"
        assert worst <= 1e-10
        assert elapsed < 1.0


def split_fit_oracle(rho):
    X = np.arange(6.0)
    Y = X + rho * np.array([-1, -1, 1, -1, 1, 1])
    rows = []
    for k in range(7):
        left = float(np.sum((Y[:k] - Y[:k].mean()) ** 2)) if k else 0.0
        right = 0.0
        if 6 - k >= 2:
            coef = np.polyfit(X[k:], Y[k:], 1)
            right = float(np.sum((np.polyval(coef, X[k:]) - Y[k:]) ** 2))
        rows.append((left / 6, right / 6))
    return rows


def test_criterion_02_table_reproduction():
    with criterion(2, "table closed forms match split least squares, rows >= 8 rho^2/15") as d:
        t0 = time.perf_counter()
        rng = trial_rng(MASTER, 0, 2)
        worst, min_gap = 0.0, np.inf
        for rho in rng.uniform(0.0, RHO_MAX, 50):
            oracle = split_fit_oracle(rho)
            for (cc, cl), (oc, ol), row in zip(table1_closed_form(rho), oracle, prop1_table(rho)):
                worst = max(worst, abs(cc - oc), abs(cl - ol),
                            abs(row.constant_error - oc), abs(row.linear_error - ol))
                min_gap = min(min_gap, cc + cl - prop1_r_lin(rho))
        elapsed = time.perf_counter() - t0
        d["max_err"] = f"{worst:.2e}"
        d["min_row_minus_rlin"] = f"{min_gap:.2e}"
        assert worst <= 1e-10
        assert min_gap >= -1e-12
        assert elapsed < 5.0


def test_criterion_03_resnet_beats_linear():
    with criterion(3, "constructed one-block ResNet risk matches closed form, below 8 rho^2/15") as d:
        worst, min_margin = 0.0, np.inf
        for rho in list(np.linspace(1e-3, RHO_MAX, 200)) + [RHO_MAX]:
            res = prop1_verify(rho)
            worst = max(worst, abs(res.resnet_risk - prop1_resnet_closed_form(rho)))
            min_margin = min(min_margin, prop1_r_lin(rho) - res.resnet_risk)
            assert res.resnet_risk < prop1_r_lin(rho)
        d["max_err"] = f"{worst:.2e}"
        d["min_margin"] = f"{min_margin:.2e}"
        assert worst <= 1e-10


def test_criterion_04_nonmonotone():
    with criterion(4, "two-block example: H1, H2, affine fit errors, criticality") as d:
        r = nonmonotone_example()
        d.update(err_X=f"{r.err_X:.6f}", err_H1=f"{r.err_H1:.6f}", grad=f"{r.grad_norm:.1e}")
        assert np.array_equal(r.H1, [1.0, 3.0, 4.0])
        assert np.array_equal(r.H2, [1.0, 3.0, 2.0])
        assert abs(r.err_X - 0.3205) <= 1e-4
        assert abs(r.err_H1 - 0.3810) <= 1e-4
        assert abs(r.err_H2) <= 1e-12
        assert r.grad_norm <= 1e-12


def test_criterion_05_theorem1_property_suite(trials):
    items, elapsed = trials
    with criterion(5, "certified critical points with coverage are GoodAsLinear or StrictSaddle") as d:
        covered = [t for t in items if t["certified"] and t["v"].coverage.rep_coverage]
        verdicts = [t["v"].verdict for t in covered]
        bad = [t["index"] for t in covered
               if t["v"].verdict not in (Verdict.GOOD_AS_LINEAR, Verdict.STRICT_SADDLE)]
        unverified = [t["index"] for t in covered if t["v"].verdict is Verdict.STRICT_SADDLE
                      and not (t["v"].escape.verified and t["v"].escape.verified_decrease < 0)]
        for t in items:
            assert sum(t["spec"].input_widths()) < t["spec"].d_x <= 8 and t["ds"].n <= 64
        d.update(trials=len(items), trial_time=f"{elapsed:.1f}s", covered=len(covered),
                 good=verdicts.count(Verdict.GOOD_AS_LINEAR),
                 saddle=verdicts.count(Verdict.STRICT_SADDLE), bad=len(bad))
        assert len(items) >= 200
        assert not bad, f"Inconclusive-with-coverage trials: {bad}"
        assert not unverified
        # non-vacuity: both outcomes must actually occur
        assert verdicts.count(Verdict.GOOD_AS_LINEAR) >= 10
        assert verdicts.count(Verdict.STRICT_SADDLE) >= 10
        assert {t["loss"] for t in covered} == {SQ, LG}
        assert elapsed < 600


def test_criterion_06_escape_quadratic_form(trials):
    items, _ = trials
    with criterion(6, "escape direction has negative curvature consistent with prediction") as d:
        saddles = [t for t in items if t["v"].verdict is Verdict.STRICT_SADDLE]
        worst_rel = 0.0
        for t in saddles:
            esc = t["v"].escape
            H = hessian_fd(t["spec"], t["theta"], t["ds"], t["loss"])
            q = quadratic_form(H, esc.delta)
            assert q < 0 and esc.predicted_decrease < 0
            worst_rel = max(worst_rel, abs(q - 2 * esc.predicted_decrease) / abs(2 * esc.predicted_decrease))
        d.update(saddles=len(saddles), max_rel_dev=f"{worst_rel:.2e}")
        assert saddles


def test_criterion_07_theorem2(trials):
    items, _ = trials
    with criterion(7, "risk <= critical-point bound + slack; depth sweep stays size-independent") as d:
        certified = [t for t in items if t["certified"]]
        worst = -np.inf
        for t in certified:
            rep = theorem2_check(t["spec"], t["theta"], t["ds"], t["loss"])
            worst = max(worst, rep.risk_at_theta - rep.bound - rep.slack)
            assert rep.holds
        d.update(checked=len(certified), max_excess=f"{worst:.2e}")
        assert len(certified) >= 50

        rng = trial_rng(MASTER, 0, 3)
        for c in (0.5, 1.0, 2.0):
            ds = random_dataset(rng, 4, SQ, n=40)
            fit = fit_linear(ds, SQ)
            t_norm = float(np.linalg.norm(fit.slope))
            mean_x = float(np.mean(np.linalg.norm(ds.X, axis=1)))
            mu = 2.0
            for L in (1, 2, 4, 8, 16):
                spec = ResNetSpec(4, tuple(SimpleVectorBlock() for _ in range(L)))
                theta = spec.zeros()
                for bp in spec.unpack(theta).blocks:
                    u, v = rng.standard_normal(4), rng.standard_normal(4)
                    bp.u[:] = u / np.linalg.norm(u)
                    bp.v[:] = v / np.linalg.norm(v) * c / L
                rho = lipschitz_rho(spec, theta)
                gap = theorem2_bound(fit.risk, mu, t_norm, rho, mean_x) - fit.risk
                assert gap <= mu * t_norm * math.expm1(c) * mean_x * (1 + 1e-12)


def test_criterion_08_rademacher():
    with criterion(8, "Rademacher estimate <= bound + 2 stderr; exhaustive L=0 matches brute force") as d:
        t0 = time.perf_counter()
        worst_ratio = 0.0
        for k in range(20):
            rng = trial_rng(MASTER, k, 4)
            L, d_x, n = k % 5, int(rng.integers(1, 9)), int(rng.integers(8, 129))
            M = list(rng.uniform(0.1, 1.0, L))
            X = rng.standard_normal((n, d_x))
            X /= np.linalg.norm(X, axis=1, keepdims=True)
            X *= rng.uniform(0.1, 1.0, (n, 1))
            rep = rademacher_estimate(X, M, trials=30, restarts=8, seed=1000 + k)
            worst_ratio = max(worst_ratio, rep.estimate / rep.bound)
            assert rep.estimate <= rep.bound + 2 * rep.stderr, (k, rep.estimate, rep.bound)
        worst_exact = 0.0
        for n in (1, 2, 3, 5, 8, 12):
            X = trial_rng(MASTER, n, 5).standard_normal((n, 3))
            exact = np.mean([np.linalg.norm(np.array(s) @ X) / n
                             for s in itertools.product((-1.0, 1.0), repeat=n)])
            rep = rademacher_estimate(X, [], restarts=1, exhaustive=True)
            worst_exact = max(worst_exact, abs(rep.estimate - exact))
        elapsed = time.perf_counter() - t0
        d.update(max_estimate_over_bound=f"{worst_ratio:.3f}", exhaustive_err=f"{worst_exact:.1e}")
        assert worst_exact <= 1e-8
        assert elapsed < 900


def test_criterion_09_numerics_hygiene():
    with criterion(9, "analytic gradients match finite differences; factorizations reconstruct") as d:
        checked, seed, worst = 0, 0, 0.0
        while checked < 100:
            rng = trial_rng(MASTER, seed, 6)
            seed += 1
            spec = random_spec(rng, inner_bias=bool(seed % 2))
            loss = SQ if seed % 2 == 0 else LG
            ds = random_dataset(rng, spec.d_x, loss, n=int(rng.integers(3, 30)))
            theta = random_theta(spec, rng, scale=1.0)
            if kink_margin(spec, theta, ds) <= 1e-3:
                continue
            _, g = risk_and_grad(spec, theta, ds, loss)
            fd = fd_grad(lambda t: risk(spec, t, ds, loss), theta)
            worst = max(worst, np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), np.max(np.abs(fd)), 1e-12))
            checked += 1
        resid = 0.0
        for k in range(20):
            rng = trial_rng(MASTER, k, 7)
            M = rng.standard_normal((int(rng.integers(1, 9)), int(rng.integers(1, 9))))
            U, S, V = linalg.svd(M)
            resid = max(resid, np.linalg.norm(U @ np.diag(S) @ V.T - M) / (1 + np.linalg.norm(M)))
            Sym = M.T @ M
            e = linalg.sym_eig(Sym)
            resid = max(resid, np.linalg.norm(e.eigenvectors @ np.diag(e.eigenvalues) @ e.eigenvectors.T - Sym)
                        / (1 + np.linalg.norm(Sym)))
            x = linalg.lstsq(M, rng.standard_normal(M.shape[0]))
            B = linalg.orth_complement(M)
            if B.size:
                resid = max(resid, np.max(np.abs(M.T @ B)) / np.linalg.norm(M))
            assert np.all(np.isfinite(x))
        d.update(configs=checked, max_grad_rel_err=f"{worst:.2e}", max_resid=f"{resid:.2e}")
        assert worst <= 1e-5
        assert resid <= 1e-10


DETERMINISM_CONFIGS = [
    "kind = theorem1_sweep\ndataset = random\nd_x = 4\nseeds = 0-5\nloss = squared\n",
    "kind = theorem1_sweep\ndataset = random\narchitecture = first, simple\nd_x = 3\n"
    "mode = saddle\nloss = logistic\nseeds = 0-5\n",
    "kind = theorem1_sweep\ndataset = builtin(1.0)\nseeds = 0-5\n",
    "kind = theorem2_check\ndataset = random\nd_x = 3\nn = 20\nseeds = 0-5\n",
    "kind = rademacher_sweep\nL = 2\nM = 0.5, 0.5\nn = 16\nd_x = 3\nrestarts = 2\nseeds = 0-1\n",
    "kind = prop1\nrho = 1.0\n",
    "kind = nonmonotone\n",
]


def test_criterion_10_determinism(tmp_path):
    with criterion(10, "two runs of each config give byte-identical summary CSVs") as d:
        for j, text in enumerate(DETERMINISM_CONFIGS):
            outs = []
            for rep_i in range(2):
                cfg = ExperimentConfig.parse(text + f"output = r{j}_{rep_i}\n", base_dir=str(tmp_path))
                run(cfg)
                outs.append((tmp_path / f"r{j}_{rep_i}.csv").read_bytes())
            assert outs[0] == outs[1], f"config {j} differs"
            assert len(outs[0].splitlines()) >= 2
        d["configs"] = len(DETERMINISM_CONFIGS)
