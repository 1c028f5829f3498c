"""Pass/fail assertions on experiment outputs, shared by ``--check`` and the
acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .montecarlo import ExperimentResult, GrowthFit, PowerLawFit, WeakErrorResult, envelope_violations, fit_rate
from .potentials import PotentialSpec

RATE_RANGE = (0.8, 1.2)
RATE_MIN_R2 = 0.98
GROWTH_MAX_REL_RESIDUAL = 1e-2
WEAK_RATE_RANGE = (0.7, 1.3)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def rate_at(result: ExperimentResult, t: float, nu_threshold: float | None) -> PowerLawFit:
    cells = result.series.at_time(t)
    return fit_rate([(c.nu, c.mean_w_sq) for c in cells], nu_threshold)


def check_rate(fit: PowerLawFit, label: str = "rate") -> Check:
    lo, hi = RATE_RANGE
    ok = lo <= fit.p <= hi and fit.r2 >= RATE_MIN_R2
    return Check(label, ok, f"p={fit.p:.4f} (need [{lo}, {hi}]), r2={fit.r2:.4f} (need >= {RATE_MIN_R2})")


def check_envelope(result: ExperimentResult, times: Sequence[float] | None = None,
                   label: str = "envelope") -> Check:
    spec = result.plan.potential
    series = result.series
    if times is not None:
        keep = set(times)
        series = type(series)([c for c in series if c.time in keep])
    bad = envelope_violations(series, spec, result.plan.d)
    detail = f"{len(series)} cells, {len(bad)} above envelope"
    if bad:
        c, env = bad[0]
        detail += f"; first nu={c.nu:g} t={c.time:g} mean={c.mean_w_sq:.3e} ci={c.ci_half_width:.3e} env={env:.3e}"
    return Check(label, not bad and len(series) > 0, detail)


def relative_residual(fit: GrowthFit, means: Sequence[float]) -> float:
    y = np.asarray(means, dtype=float)
    yy = float(y @ y)
    return fit.residual / yy if yy > 0 else 0.0


def check_growth(fit: GrowthFit, means: Sequence[float], spec: PotentialSpec,
                 label: str = "growth") -> list[Check]:
    rel = relative_residual(fit, means)
    b_max = -2.0 * spec.lambda_K_minus
    return [
        Check(f"{label} residual", rel <= GROWTH_MAX_REL_RESIDUAL,
              f"residual/sum(y^2)={rel:.3e} (need <= {GROWTH_MAX_REL_RESIDUAL:g})"),
        Check(f"{label} b bound", 0.0 < fit.b <= b_max, f"b={fit.b:.4f} (need (0, {b_max:.4f}]), a={fit.a:.4e}"),
    ]


def check_weak(result: WeakErrorResult, label: str = "weak rate") -> Check:
    lo, hi = WEAK_RATE_RANGE
    if result.fit is None:
        return Check(label, False, "fewer than two nonzero errors")
    p = result.fit.p
    return Check(label, lo <= p <= hi, f"slope={p:.4f} (need [{lo}, {hi}]), r2={result.fit.r2:.4f}")
