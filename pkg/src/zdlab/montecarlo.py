"""Monte Carlo estimation of E[W_inf^2] between the coupled particle systems,
convergence-rate and growth-curve fits, and the weak-error study of the
reflected Euler scheme.

Every sample trajectory owns a Philox stream keyed by a seed derived from
``(master_seed, nu_index, m)``. Samples may run on any number of worker
threads; results are reduced in ``(nu_index, m)`` order, so the statistics do
not depend on scheduling.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .dynamics import (
    Region,
    _stochastic_step_batch,
    grid_index,
    make_rng,
    sample_initial,
    simulate_pair,
)
from .geometry import ConvexDomain
from .potentials import PotentialSpec, theorem_envelope
from .transport import bottleneck_w_inf_sq

log = logging.getLogger(__name__)

THREADS_ENV = "ZDLAB_THREADS"
# Sample-block size of the weak-error study; fixed so results do not depend
# on the worker count.
WEAK_CHUNK = 1000
_WEAK_STREAM_TAG = 0x5745414B  # keeps weak-error streams apart from trajectory streams


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def derive_seed(master_seed: int, nu_index: int, m: int) -> int:
    """Stable 64-bit seed for sample ``m`` of the ``nu_index``-th diffusion value.

    Uses numpy's SeedSequence hashing, whose output is fixed across numpy
    releases for a given entropy tuple.
    """
    ss = np.random.SeedSequence([int(master_seed), int(nu_index), int(m)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _ordered_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class DtRule:
    """Time step as a function of the diffusion coefficient."""

    kind: str = "sqrt_nu"  # "sqrt_nu": dt = value * sqrt(nu); "fixed": dt = value
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("sqrt_nu", "fixed"):
            raise ValueError(f"unknown dt rule {self.kind!r}")
        if not self.value > 0:
            raise ValueError("dt rule parameter must be positive")

    def dt(self, nu: float) -> float:
        if self.kind == "fixed":
            return float(self.value)
        return float(self.value * math.sqrt(nu))

    def to_dict(self) -> dict:
        key = "c" if self.kind == "sqrt_nu" else "dt"
        return {"kind": self.kind, key: self.value}


@dataclass(frozen=True)
class ExperimentPlan:
    domain: ConvexDomain
    potential: PotentialSpec
    N: int
    M: int
    nu_list: tuple[float, ...]
    dt_rule: DtRule
    T: float
    snapshot_times: tuple[float, ...]
    init_region: Region
    master_seed: int = 0
    on_error: str = "fail"  # or "skip"

    def __post_init__(self):
        object.__setattr__(self, "nu_list", tuple(float(v) for v in self.nu_list))
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))
        self.validate()

    def validate(self):
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.M < 2:
            raise ValueError("M must be at least 2 for a t-interval")
        if not self.nu_list:
            raise ValueError("nu_list is empty")
        if any(not v > 0 for v in self.nu_list):
            raise ValueError(f"nu_list entries must be positive: {list(self.nu_list)}")
        if list(self.nu_list) != sorted(self.nu_list, reverse=True):
            raise ValueError("nu_list must be sorted in descending order")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if not self.snapshot_times:
            raise ValueError("snapshot_times is empty")
        if any(t < 0 or t > self.T for t in self.snapshot_times):
            raise ValueError(f"snapshot times must lie in [0, T={self.T}]")
        if self.on_error not in ("fail", "skip"):
            raise ValueError(f"on_error must be 'fail' or 'skip', got {self.on_error!r}")
        if self.init_region.dim != self.domain.dim:
            raise ValueError("initial region and domain dimensions differ")
        if not self.domain.contains_box(self.init_region.lower, self.init_region.upper):
            raise ValueError(f"initial region {self.init_region.to_list()} is not contained in the domain")
        for nu in self.nu_list:
            dt = self.dt_rule.dt(nu)
            for t in self.snapshot_times:
                grid_index(t, dt)

    @property
    def d(self) -> int:
        return self.domain.dim


@dataclass(frozen=True)
class StatCell:
    nu: float
    time: float
    mean_w_sq: float
    ci_half_width: float
    M: int


@dataclass
class StatSeries:
    cells: list[StatCell] = field(default_factory=list)

    def __iter__(self):
        return iter(self.cells)

    def __len__(self):
        return len(self.cells)

    def at_time(self, t: float) -> list[StatCell]:
        return [c for c in self.cells if c.time == t]

    def at_nu(self, nu: float) -> list[StatCell]:
        return [c for c in self.cells if c.nu == nu]


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    series: StatSeries
    raw: np.ndarray  # (len(nu_list), M, len(snapshot_times)); NaN marks a failed sample
    failures: int = 0


@dataclass(frozen=True)
class PowerLawFit:
    p: float
    intercept: float
    r2: float
    stderr: float
    n_points: int

    def to_dict(self) -> dict:
        return {"p": self.p, "stderr": self.stderr, "r2": self.r2,
                "intercept": self.intercept, "n_points": self.n_points}


@dataclass(frozen=True)
class GrowthFit:
    a: float
    b: float
    residual: float
    converged: bool = True

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "residual": self.residual, "converged": self.converged}

    def __call__(self, t):
        return growth_curve(np.asarray(t, dtype=float), self.a, self.b)


def confidence_interval(samples: Iterable[float], level: float = 0.95) -> tuple[float, float]:
    """Sample mean and the half-width of the two-sided Student-t interval."""
    x = np.asarray(list(samples), dtype=float)
    if x.size < 2:
        raise ValueError("a t-interval needs at least two samples")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    mean = float(x.mean())
    s = float(x.std(ddof=1))
    q = float(stats.t.ppf(0.5 + level / 2.0, x.size - 1))
    return mean, q * s / math.sqrt(x.size)


def _run_sample(plan: ExperimentPlan, nu_index: int, m: int) -> np.ndarray:
    nu = plan.nu_list[nu_index]
    snaps = simulate_pair(plan.domain, plan.potential, plan.N, nu, plan.dt_rule.dt(nu),
                          plan.snapshot_times, plan.init_region,
                          derive_seed(plan.master_seed, nu_index, m))
    by_time = {s.time: s for s in snaps}
    out = np.empty(len(plan.snapshot_times))
    for j, t in enumerate(plan.snapshot_times):
        s = by_time[t]
        out[j] = bottleneck_w_inf_sq(s.stochastic, s.deterministic).bottleneck_sq
    return out


def run_experiment(plan: ExperimentPlan, workers: int | None = None,
                   progress: Callable[[int, int], None] | None = None) -> ExperimentResult:
    workers = worker_count(workers)
    tasks = [(k, m) for k in range(len(plan.nu_list)) for m in range(plan.M)]
    done = [0]

    def task(km):
        k, m = km
        try:
            vals = _run_sample(plan, k, m)
        except Exception:
            if plan.on_error == "fail":
                raise
            log.exception("sample nu_index=%d m=%d failed", k, m)
            vals = np.full(len(plan.snapshot_times), np.nan)
        done[0] += 1
        if progress is not None:
            progress(done[0], len(tasks))
        return vals

    results = _ordered_map(task, tasks, workers)
    raw = np.array(results).reshape(len(plan.nu_list), plan.M, len(plan.snapshot_times))

    series = StatSeries()
    failures = 0
    for k, nu in enumerate(plan.nu_list):
        ok = ~np.isnan(raw[k, :, 0])
        failures += int((~ok).sum())
        for j, t in enumerate(plan.snapshot_times):
            vals = raw[k, ok, j]
            if vals.size < 2:
                raise RuntimeError(f"fewer than two successful samples for nu={nu}")
            mean, half = confidence_interval(vals)
            series.cells.append(StatCell(nu, t, mean, half, int(vals.size)))
    return ExperimentResult(plan, series, raw, failures)


def envelope_violations(series: StatSeries, spec: PotentialSpec, d: int) -> list[tuple[StatCell, float]]:
    """Cells whose mean exceeds the theoretical envelope by more than the CI half-width."""
    bad = []
    for c in series:
        env = theorem_envelope(spec, d, c.nu, c.time)
        if c.mean_w_sq - c.ci_half_width > env:
            bad.append((c, env))
    return bad


def fit_power_law(x: Sequence[float], y: Sequence[float]) -> PowerLawFit:
    """OLS of ln y on ln x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("a power-law fit needs at least two points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit requires positive abscissae and ordinates")
    if np.unique(x).size < 2:
        raise ValueError("power-law fit needs at least two distinct abscissae")
    res = stats.linregress(np.log(x), np.log(y))
    stderr = float(res.stderr) if x.size > 2 else float("nan")
    return PowerLawFit(float(res.slope), float(res.intercept), float(res.rvalue**2), stderr, int(x.size))


def fit_rate(points: Sequence[tuple[float, float]], nu_threshold: float | None = None) -> PowerLawFit:
    """Convergence rate p in mean = O(nu^p) from ``(nu, mean)`` pairs with nu <= threshold."""
    pts = [(float(nu), float(m)) for nu, m in points if nu_threshold is None or nu <= nu_threshold]
    if len(pts) < 2:
        raise ValueError(f"need at least two points with nu <= {nu_threshold}, got {len(pts)}")
    if any(m <= 0 for _, m in pts):
        raise ValueError("rate fit requires positive means")
    nus, means = zip(*pts)
    return fit_power_law(nus, means)


def growth_curve(t, a, b):
    return a * t * (1.0 + b * t * np.exp(b * t))


def _best_a(t, y, b):
    f = growth_curve(t, 1.0, b)
    ff = float(f @ f)
    a = max(0.0, float(f @ y) / ff) if ff > 0 else 0.0
    r = y - a * f
    return a, float(r @ r)


def fit_growth(times: Sequence[float], means: Sequence[float], b_max: float = 200.0,
               grid_size: int = 2001, max_iter: int = 200) -> GrowthFit:
    """Least-squares fit of y(t) = a t (1 + b t e^{bt}).

    A grid over b in [0, b_max] (a solved in closed form at each node)
    supplies the start; damped Gauss-Newton refines (a, b) jointly.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(means, dtype=float)
    if t.shape != y.shape or t.size < 3:
        raise ValueError("need at least three (t, y) pairs")
    if np.any(t <= 0):
        raise ValueError("growth fit requires t > 0")

    with np.errstate(over="ignore", invalid="ignore"):
        grid = [(b,) + _best_a(t, y, b) for b in np.linspace(0.0, b_max, grid_size)]
    grid = [g for g in grid if np.isfinite(g[2])]
    b, a, res = min(grid, key=lambda g: g[2])
    if a == 0.0 or res == 0.0:
        return GrowthFit(a, float(b), res, True)

    converged = False
    lam = 0.0
    for _ in range(max_iter):
        e = np.exp(b * t)
        f = t * (1.0 + b * t * e)
        r = y - a * f
        J = np.column_stack([f, a * t * t * e * (1.0 + b * t)])
        JtJ = J.T @ J
        g = J.T @ r
        step = None
        for _ in range(60):
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(np.diag(JtJ)), g)
            except np.linalg.LinAlgError:
                lam = max(lam * 10.0, 1e-12)
                continue
            a_new, b_new = a + step[0], b + step[1]
            with np.errstate(over="ignore", invalid="ignore"):
                r_new = y - growth_curve(t, a_new, b_new)
                res_new = float(r_new @ r_new)
            if a_new > 0 and np.isfinite(res_new) and res_new <= res:
                lam = lam / 10.0 if lam > 1e-12 else 0.0
                break
            lam = max(lam * 10.0, 1e-12)
            step = None
        if step is None:
            converged = True  # no descent direction left
            break
        small = abs(step[0]) <= 1e-15 * abs(a_new) and abs(step[1]) <= 1e-15 * max(1.0, abs(b_new))
        stalled = res - res_new <= 1e-30 + 1e-15 * res
        a, b, res = a_new, b_new, res_new
        if small or stalled:
            converged = True
            break
    return GrowthFit(float(a), float(b), float(res), converged)


@dataclass(frozen=True)
class WeakErrorResult:
    dt_list: tuple[float, ...]
    fine_dt: float
    errors: np.ndarray  # |E g(coarse) - E g(fine)| per dt
    error_ci: np.ndarray  # 95% half-widths of the mean difference
    means: np.ndarray  # E g per dt
    fine_mean: float
    samples: int
    fit: PowerLawFit | None


def mean_square_radius(pos: np.ndarray) -> np.ndarray:
    """g(X) = (1/N) sum_i |X_i|^2 for a batch of ensembles (B, N, d)."""
    return np.einsum("bnd,bnd->b", pos, pos) / pos.shape[1]


def _weak_chunk(domain, spec, nu, x0, ratios, fine_dt, n_fine, batch, seed):
    rng = make_rng(seed)
    N, d = x0.shape
    kind, eps = spec.kind.code, float(spec.epsilon)
    code, params = domain.code, domain.params
    states = {r: np.repeat(x0[None], batch, axis=0) for r in ratios}
    acc = {r: np.zeros((batch, N, d)) for r in ratios}
    for s in range(1, n_fine + 1):
        z = rng.standard_normal((batch, N, d))
        for r in ratios:
            acc[r] += z
            if s % r == 0:
                dt = r * fine_dt
                noise = acc[r] / math.sqrt(r)
                _stochastic_step_batch(states[r], noise, dt, math.sqrt(2.0 * nu * dt), kind, eps, code, params)
                acc[r][:] = 0.0
    return {r: mean_square_radius(states[r]) for r in ratios}


def weak_error_study(domain: ConvexDomain, spec: PotentialSpec, nu: float, N: int, T: float,
                     dt_list: Sequence[float], fine_dt: float, samples: int,
                     init_region: Region, seed: int = 0, workers: int | None = None) -> WeakErrorResult:
    """Weak error of the reflected Euler scheme for g(X) = mean |X_i|^2.

    All samples start from one initial configuration. Each coarse path is
    driven by the sums of the fine path's Gaussian increments, so the
    coarse-minus-fine difference is estimated on coupled pairs.
    """
    n_fine = grid_index(T, fine_dt)
    ratios = []
    for dt in dt_list:
        r = grid_index(dt, fine_dt)
        if r < 1:
            raise ValueError(f"dt={dt} is smaller than the fine step {fine_dt}")
        if n_fine % r:
            raise ValueError(f"dt={dt} does not divide T={T}")
        ratios.append(r)
    all_ratios = sorted(set(ratios) | {1})

    x0 = sample_initial(init_region, N, derive_seed(seed, _WEAK_STREAM_TAG, 0), domain).positions
    n_chunks = -(-samples // WEAK_CHUNK)
    jobs = [(c, min(WEAK_CHUNK, samples - c * WEAK_CHUNK)) for c in range(n_chunks)]

    def job(cb):
        c, batch = cb
        return _weak_chunk(domain, spec, nu, x0, all_ratios, fine_dt, n_fine, batch,
                           derive_seed(seed, _WEAK_STREAM_TAG, c + 1))

    parts = _ordered_map(job, jobs, worker_count(workers))
    g = {r: np.concatenate([p[r] for p in parts]) for r in all_ratios}
    fine = g[1]
    errors, cis, means = [], [], []
    for r in ratios:
        diff = g[r] - fine
        m, half = confidence_interval(diff)
        errors.append(abs(m))
        cis.append(half)
        means.append(float(g[r].mean()))
    errors = np.array(errors)
    fit = None
    pos = errors > 0
    if pos.sum() >= 2:
        fit = fit_power_law(np.asarray(dt_list, dtype=float)[pos], errors[pos])
    return WeakErrorResult(tuple(float(x) for x in dt_list), float(fine_dt), errors, np.array(cis),
                           np.array(means), float(fine.mean()), int(samples), fit)
