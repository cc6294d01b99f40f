"""Config-driven experiment runner.

A config is a flat ``key = value`` text file (``#`` starts a comment).  Each
seed gets its own PCG64 stream from ``SeedSequence([master_seed, seed,
stream])``, so results do not depend on worker count or scheduling.
"""

import csv
import io
import json
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bounds import rademacher_estimate, theorem2_check
from .data import load_dataset
from .errors import ConfigError, LabError
from .examples import RHO_MAX, nonmonotone_example, prop1_dataset, prop1_verify, scalar_resnet_spec
from .instances import random_dataset, random_spec, trial_rng
from .landscape import Verdict, find_critical_point, theorem1_verdict, zero_head_saddle
from .loss import LossKind
from .model import (AffineReLU, ElementwiseReLU, FirstBlock, GeneralBlock, ResNetSpec,
                    SimpleVectorBlock, random_theta, risk_and_grad)

PRNG = "numpy PCG64, SeedSequence([master_seed, seed, stream])"

KINDS = {
    "theorem1sweep": "theorem1_sweep",
    "theorem2check": "theorem2_check",
    "rademachersweep": "rademacher_sweep",
    "prop1": "prop1",
    "nonmonotone": "nonmonotone",
}


def _kind(value: str) -> str:
    key = re.sub(r"[^a-z0-9]", "", value.lower())
    if key not in KINDS:
        raise ConfigError(f"unknown kind {value!r}; expected one of {sorted(set(KINDS.values()))}")
    return KINDS[key]


def parse_seeds(text: str) -> list:
    seeds = []
    for part in re.split(r"[,\s]+", text.strip()):
        if not part:
            continue
        m = re.fullmatch(r"(-?\d+)-(\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise ConfigError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            try:
                seeds.append(int(part))
            except ValueError:
                raise ConfigError(f"bad seed {part!r}") from None
    if not seeds:
        raise ConfigError("seeds must be nonempty")
    return seeds


def _parse_inner(tokens, bias):
    if not tokens:
        return ElementwiseReLU(bias)
    m = re.fullmatch(r"affine(\d+)", tokens[0])
    if len(tokens) == 1 and m:
        return AffineReLU(int(m.group(1)), bias)
    if tokens == ["relu"]:
        return ElementwiseReLU(bias)
    raise ConfigError(f"bad inner function {':'.join(tokens)!r}")


def parse_architecture(text: str, d_x: int, head_bias: bool = False) -> ResNetSpec:
    """Comma-separated blocks: ``first[:affineK][+b]``, ``simple[+b]``,
    ``general:M[:affineK][+b]``; ``+b`` adds a ReLU bias."""
    blocks = []
    for raw in re.split(r"[,;]", text):
        tok = raw.strip().lower()
        if not tok or tok == "none":
            continue
        bias = tok.endswith("+b")
        if bias:
            tok = tok[:-2]
        parts = tok.split(":")
        if parts[0] == "simple" and len(parts) == 1:
            blocks.append(SimpleVectorBlock(bias))
        elif parts[0] == "first":
            blocks.append(FirstBlock(_parse_inner(parts[1:], bias)))
        elif parts[0] == "general" and len(parts) >= 2 and parts[1].isdigit():
            blocks.append(GeneralBlock(int(parts[1]), _parse_inner(parts[2:], bias)))
        else:
            raise ConfigError(f"bad block {raw.strip()!r}")
    try:
        return ResNetSpec(d_x, tuple(blocks), head_bias)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _floats(text: str) -> list:
    try:
        return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


@dataclass
class ExperimentConfig:
    kind: str
    seeds: list = field(default_factory=lambda: [0])
    master_seed: int = 0
    dataset: str = "random"
    architecture: str = "default"
    head_bias: bool = False
    loss: str = "squared"
    d_x: int = 4
    n: int = 32
    mode: str = "descent"  # theorem1_sweep: "descent" or "saddle"
    init_scale: float = 0.5
    grad_tol: float = 1e-8
    rank_tol: float = 1e-10
    kink_tol: float = 1e-3
    max_iters: int = 3000
    restarts: int = 8
    trials: int = 30
    rho: float = 1.0
    L: int = 2
    M: list = field(default_factory=lambda: [0.5, 0.5])
    widths: Optional[list] = None
    output: Optional[str] = None
    base_dir: str = "."

    _INT = ("master_seed", "d_x", "n", "max_iters", "restarts", "trials")
    _FLOAT = ("init_scale", "grad_tol", "rank_tol", "kink_tol", "rho")
    _STR = ("dataset", "architecture", "loss", "mode", "output")

    @classmethod
    def parse(cls, text: str, base_dir: str = ".") -> "ExperimentConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.lower()] = (lineno, value)
        if "kind" not in values:
            raise ConfigError("config needs a 'kind'")
        cfg = cls(kind=_kind(values.pop("kind")[1]), base_dir=base_dir)
        for key, (lineno, value) in values.items():
            try:
                if key == "seeds":
                    cfg.seeds = parse_seeds(value)
                elif key in cls._INT:
                    setattr(cfg, key, int(value))
                elif key == "l":
                    cfg.L = int(value)
                elif key in cls._FLOAT:
                    setattr(cfg, key, float(value))
                elif key in cls._STR:
                    setattr(cfg, key, value)
                elif key == "head_bias":
                    cfg.head_bias = _bool(value)
                elif key == "m":
                    cfg.M = _floats(value)
                elif key == "widths":
                    cfg.widths = [int(v) for v in _floats(value)]
                else:
                    raise ConfigError(f"unknown key {key!r}")
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        return cls.parse(text, base_dir=str(path.parent))

    def validate(self):
        try:
            LossKind.parse(self.loss)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.mode not in ("descent", "saddle"):
            raise ConfigError(f"mode must be 'descent' or 'saddle', got {self.mode!r}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.kind == "prop1" and not 0.0 < self.rho <= RHO_MAX:
            raise ConfigError(f"rho must lie in (0, sqrt(5/4)], got {self.rho}")
        if self.kind == "rademacher_sweep" and len(self.M) != self.L:
            raise ConfigError(f"M lists {len(self.M)} radii but L = {self.L}")
        if self.kind in ("theorem1_sweep", "theorem2_check"):
            self.load_data(0)  # fail early on a missing or malformed CSV

    def echo(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "base_dir"}
        return d

    def load_data(self, seed: int):
        """Return ``(spec, dataset)`` for one seed."""
        loss = LossKind.parse(self.loss)
        rng = trial_rng(self.master_seed, seed, 0)
        ds_text = self.dataset.strip()
        if ds_text.startswith("builtin"):
            m = re.fullmatch(r"builtin(?:[:(]\s*([0-9.eE+-]+)\s*\)?)?", ds_text)
            if not m:
                raise ConfigError(f"bad builtin dataset {ds_text!r}")
            ds = prop1_dataset(float(m.group(1)) if m.group(1) else self.rho)
        elif ds_text == "random":
            ds = None
        else:
            path = Path(ds_text)
            if not path.is_absolute():
                path = Path(self.base_dir) / path
            try:
                ds = load_dataset(path)
            except FileNotFoundError:
                raise ConfigError(f"dataset not found: {path}") from None
        arch = self.architecture.strip().lower()
        if arch == "default":
            arch = "scalar" if ds is not None and ds.d_x == 1 else "random"
        if arch == "random":
            spec = random_spec(rng, d_max=8 if ds is None else ds.d_x,
                               d_min=2 if ds is None else ds.d_x)
            if self.head_bias:
                spec = ResNetSpec(spec.d_x, spec.blocks, True)
        elif arch == "scalar":
            spec = scalar_resnet_spec(1)
        else:
            d = ds.d_x if ds is not None else self.d_x
            spec = parse_architecture(self.architecture, d, self.head_bias)
        if ds is None:
            ds = random_dataset(rng, spec.d_x, loss, n=self.n)
        if ds.d_x != spec.d_x:
            raise ConfigError(f"dataset has d_x={ds.d_x}, architecture expects {spec.d_x}")
        return spec, ds


def _num(x):
    if x is None:
        return None
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _critical_point(cfg, seed):
    spec, ds = cfg.load_data(seed)
    loss = LossKind.parse(cfg.loss)
    theta0 = random_theta(spec, trial_rng(cfg.master_seed, seed, 1), cfg.init_scale)
    if cfg.mode == "saddle":
        theta = zero_head_saddle(spec, theta0, ds, loss)
        return spec, ds, loss, theta, float(np.linalg.norm(risk_and_grad(spec, theta, ds, loss)[1]))
    theta, gn = find_critical_point(spec, ds, loss, theta0, cfg.grad_tol, cfg.max_iters)
    return spec, ds, loss, theta, gn


def _theorem1_entry(cfg, seed):
    row = {"seed": seed}
    try:
        spec, ds, loss, theta, gn = _critical_point(cfg, seed)
        v = theorem1_verdict(spec, ds, loss, theta, gn, kink_tol=cfg.kink_tol, rank_tol=cfg.rank_tol)
    except (LabError, ValueError) as exc:
        row.update(error=f"{type(exc).__name__}: {exc}", failed=False)
        return row
    certified = gn <= cfg.grad_tol and v.kink_margin >= cfg.kink_tol
    esc = v.escape
    failed = (certified and v.coverage.rep_coverage and v.coverage.param_coverage
              and v.verdict is Verdict.INCONCLUSIVE) or (
        v.verdict is Verdict.STRICT_SADDLE and not (esc and esc.verified))
    row.update(
        d_x=spec.d_x, L=spec.L, n=ds.n, n_params=spec.n_params,
        grad_norm=_num(gn), slack=_num(v.slack), risk=_num(v.risk), r_lin=_num(v.r_lin),
        kink_margin=_num(v.kink_margin), certified=certified,
        rep_coverage=v.coverage.rep_coverage, param_coverage=v.coverage.param_coverage,
        lambda_min_A=_num(v.coverage.lambda_min_A), stacked_rank=v.coverage.stacked_rank,
        case=v.case, verdict=v.verdict.value, reason=v.reason,
        escape_block=esc.block_index if esc else None,
        predicted_decrease=_num(esc.predicted_decrease) if esc else None,
        verified_decrease=_num(esc.verified_decrease) if esc else None,
        lambda_min=_num(v.lambda_min), notes="; ".join(v.notes), failed=failed, error="",
    )
    return row


def _theorem2_entry(cfg, seed):
    row = {"seed": seed}
    try:
        spec, ds, loss, theta, gn = _critical_point(cfg, seed)
        rep = theorem2_check(spec, theta, ds, loss)
    except (LabError, ValueError) as exc:
        row.update(error=f"{type(exc).__name__}: {exc}", failed=False)
        return row
    row.update(
        d_x=spec.d_x, L=spec.L, n=ds.n, grad_norm=_num(gn), slack=_num(rep.slack),
        rho=";".join(repr(float(r)) for r in rep.rho), mu=_num(rep.mu), mu_empirical=rep.mu_empirical,
        t_hat_norm=_num(rep.t_hat_norm), mean_x_norm=_num(rep.mean_x_norm), r_lin=_num(rep.r_lin),
        bound=_num(rep.bound), risk=_num(rep.risk_at_theta), holds=rep.holds,
        notes="; ".join(rep.notes), failed=not rep.holds, error="",
    )
    return row


def rademacher_sample(master_seed, seed, n, d_x):
    """Points drawn uniformly from the unit ball."""
    rng = trial_rng(master_seed, seed, 2)
    X = rng.standard_normal((n, d_x))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X * rng.random((n, 1)) ** (1.0 / d_x)


def _rademacher_entry(cfg, seed):
    X = rademacher_sample(cfg.master_seed, seed, cfg.n, cfg.d_x)
    stream_seed = int(np.random.SeedSequence([cfg.master_seed, seed]).generate_state(1)[0])
    rep = rademacher_estimate(X, cfg.M, trials=cfg.trials, restarts=cfg.restarts,
                              seed=stream_seed, widths=cfg.widths)
    return {
        "seed": seed, "n": rep.n, "d_x": cfg.d_x, "L": len(rep.M),
        "M": ";".join(repr(m) for m in rep.M), "B": _num(rep.B), "bound": _num(rep.bound),
        "estimate": _num(rep.estimate), "stderr": _num(rep.stderr), "trials": rep.trials,
        "restarts": rep.restarts, "within_bound": rep.within_bound,
        "failed": not rep.within_bound, "error": "",
    }


def _prop1_entry(cfg, seed):
    try:
        res = prop1_verify(cfg.rho)
    except LabError as exc:
        return {"seed": seed, "rho": cfg.rho, "error": f"{type(exc).__name__}: {exc}", "failed": False}
    row = {
        "seed": seed, "rho": _num(res.rho), "r_lin": _num(res.r_lin),
        "min_table_bound": _num(min(r.lower_bound for r in res.table)),
        "all_bounds_ge_rlin": res.all_bounds_ge_rlin, "resnet_risk": _num(res.resnet_risk),
        "resnet_closed_form": _num(res.resnet_closed_form),
        "closed_form_error": _num(res.closed_form_error),
        "resnet_beats_linear": res.resnet_beats_linear,
    }
    row["failed"] = not (res.all_bounds_ge_rlin and res.resnet_beats_linear
                         and res.closed_form_error <= 1e-10)
    row["error"] = ""
    row["table"] = [vars(r) for r in res.table]
    return row


def _nonmonotone_entry(cfg, seed):
    res = nonmonotone_example()
    ok = (np.array_equal(res.H1, [1.0, 3.0, 4.0]) and np.array_equal(res.H2, [1.0, 3.0, 2.0])
          and abs(res.err_X - 0.3205) <= 1e-4 and abs(res.err_H1 - 0.3810) <= 1e-4
          and abs(res.err_H2) <= 1e-12 and res.is_critical and res.err_H1 > res.err_X)
    return {
        "seed": seed, "H1": ";".join(repr(float(v)) for v in res.H1),
        "H2": ";".join(repr(float(v)) for v in res.H2), "err_X": _num(res.err_X),
        "err_H1": _num(res.err_H1), "err_H2": _num(res.err_H2), "risk": _num(res.risk),
        "grad_norm": _num(res.grad_norm), "is_critical": res.is_critical,
        "failed": not ok, "error": "",
    }


_ENTRY = {
    "theorem1_sweep": _theorem1_entry,
    "theorem2_check": _theorem2_entry,
    "rademacher_sweep": _rademacher_entry,
    "prop1": _prop1_entry,
    "nonmonotone": _nonmonotone_entry,
}


def _call(args):
    cfg, seed = args
    return _ENTRY[cfg.kind](cfg, seed)


def worker_count() -> int:
    env = os.environ.get("LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"LAB_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def parallel_map(fn, items, workers: Optional[int] = None) -> list:
    """Ordered map; uses worker processes when more than one is allowed."""
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


@dataclass
class RunReport:
    config: dict
    entries: list
    summary: dict
    wall_clock: float
    version: str = __version__
    master_seed: int = 0
    prng: str = PRNG

    @property
    def failed(self) -> bool:
        return any(e.get("failed") for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "version": self.version, "prng": self.prng, "master_seed": self.master_seed,
            "config": self.config, "summary": self.summary, "entries": self.entries,
            "passed": not self.failed, "wall_clock_seconds": self.wall_clock,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_num)

    def to_csv(self) -> str:
        """Flat per-seed rows; nested fields are dropped, floats use repr."""
        flat = [{k: v for k, v in e.items() if not isinstance(v, (list, dict))} for e in self.entries]
        columns = []
        for row in flat:
            for k in row:
                if k not in columns:
                    columns.append(k)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in flat:
            writer.writerow(["" if row.get(c) is None else
                             repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
        return buf.getvalue()


def _summarize(kind, entries) -> dict:
    s = {"entries": len(entries), "failed": sum(bool(e.get("failed")) for e in entries),
         "errors": sum(bool(e.get("error")) for e in entries)}
    if kind == "theorem1_sweep":
        certified = [e for e in entries if e.get("certified")]
        s["certified"] = len(certified)
        for v in Verdict:
            s[v.value] = sum(e.get("verdict") == v.value for e in entries)
        s["inconclusive_with_coverage"] = sum(
            e.get("verdict") == Verdict.INCONCLUSIVE.value and e.get("rep_coverage")
            and e.get("param_coverage") for e in certified)
    elif kind == "theorem2_check":
        s["holds"] = sum(bool(e.get("holds")) for e in entries)
    elif kind == "rademacher_sweep":
        s["within_bound"] = sum(bool(e.get("within_bound")) for e in entries)
    return s


def run(cfg: ExperimentConfig, write: bool = True) -> RunReport:
    """Run every seed, then write ``<output>.json`` and ``<output>.csv`` if configured."""
    t0 = time.perf_counter()
    seeds = cfg.seeds if cfg.kind not in ("prop1", "nonmonotone") else cfg.seeds[:1]
    entries = parallel_map(_call, [(cfg, s) for s in seeds])
    report = RunReport(cfg.echo(), entries, _summarize(cfg.kind, entries),
                       time.perf_counter() - t0, master_seed=cfg.master_seed)
    if write and cfg.output:
        out = Path(cfg.output)
        if not out.is_absolute():
            out = Path(cfg.base_dir) / out
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".json").write_text(report.to_json() + "\n", encoding="utf-8")
        out.with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    return report
