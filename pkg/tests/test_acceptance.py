"""Acceptance criteria at desk scale.

Each test records one PASS/FAIL line, printed in the terminal summary
(see conftest.py). The Monte Carlo runs take tens of minutes on one core;
deselect them with ``-m "not acceptance"``.
"""

import json
import math

import numpy as np
import pytest

from zdlab import checks
from zdlab.cli import main
from zdlab.config import stats_csv
from zdlab.dynamics import DISK_REGION, HALF_PLANE_REGION
from zdlab.geometry import Disk, HalfPlane
from zdlab.montecarlo import DtRule, ExperimentPlan, fit_growth, run_experiment, weak_error_study
from zdlab.potentials import K, KernelKind, PotentialSpec, grad_K, theorem_envelope
from zdlab.transport import bottleneck_w_inf_sq, brute_force_bottleneck

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []

K32 = PotentialSpec(KernelKind.K32, 0.05)
DOMAINS = {"half_plane": (HalfPlane(), HALF_PLANE_REGION), "disk": (Disk(), DISK_REGION)}
NU_LIST = (2.0**-20, 2.0**-22, 2.0**-24, 2.0**-26)
# 0.031 is not a multiple of the coarsest step 2^-10; 2^-5 = 0.03125 is.
ENVELOPE_TIMES = (2.0**-5, 0.25, 0.5)
FIT_TIME = 0.25


def record(check: checks.Check) -> bool:
    RESULTS.append(check.line())
    print(check.line())
    return check.passed


def convergence_plan(kind: str) -> ExperimentPlan:
    domain, region = DOMAINS[kind]
    return ExperimentPlan(domain=domain, potential=K32, N=200, M=64, nu_list=NU_LIST,
                          dt_rule=DtRule("sqrt_nu", 1.0), T=0.5, snapshot_times=(0.0,) + ENVELOPE_TIMES,
                          init_region=region, master_seed=0)


_runs: dict = {}


def convergence_run(kind: str):
    if kind not in _runs:
        _runs[kind] = run_experiment(convergence_plan(kind), workers=1)
    return _runs[kind]


@pytest.mark.parametrize("kind", ["half_plane", "disk"])
def test_c1_rate_in_nu(kind):
    result = convergence_run(kind)
    fit = checks.rate_at(result, FIT_TIME, nu_threshold=None)
    assert record(checks.check_rate(fit, f"C1 O(nu) rate, {kind}, t={FIT_TIME}"))


@pytest.mark.parametrize("kind", ["half_plane", "disk"])
def test_c2_envelope(kind):
    result = convergence_run(kind)
    # the envelope uses Lambda = lambda_K^- + lambda_V^- = -1/(2 pi eps^2)
    assert K32.lambda_minus == -1.0 / (2.0 * math.pi * 0.05**2)
    for c in result.series:
        assert c.ci_half_width >= 0 and c.mean_w_sq >= 0
    env = theorem_envelope(K32, 2, 2.0**-20, 0.25)
    assert env == pytest.approx(4 * 2.0**-20 * 0.25 * (1 + 0.25 / (math.pi * 0.05**2)
                                                       * math.exp(0.25 / (math.pi * 0.05**2))), rel=1e-12)
    assert record(checks.check_envelope(result, ENVELOPE_TIMES, f"C2 envelope, {kind}"))


@pytest.mark.parametrize("kind", ["half_plane", "disk"])
def test_c3_growth_fit(kind):
    domain, region = DOMAINS[kind]
    times = tuple(k / 32 for k in range(33))
    plan = ExperimentPlan(domain=domain, potential=K32, N=200, M=64, nu_list=(2.0**-28,),
                          dt_rule=DtRule("sqrt_nu", 1.0), T=1.0, snapshot_times=times,
                          init_region=region, master_seed=0)
    result = run_experiment(plan)
    cells = [c for c in result.series if c.time > 0]
    means = [c.mean_w_sq for c in cells]
    fit = fit_growth([c.time for c in cells], means)
    ok = [record(c) for c in checks.check_growth(fit, means, K32, f"C3 growth, {kind}")]
    assert all(ok)


def test_c4_weak_euler_rate():
    domain, region = DOMAINS["disk"]
    res = weak_error_study(domain, K32, 0.01, 5, 0.25, [2.0**-k for k in range(6, 11)], 2.0**-12,
                           20_000, region, seed=0)
    detail = ", ".join(f"{e:.2e}+-{c:.1e}" for e, c in zip(res.errors, res.error_ci))
    RESULTS.append(f"      weak errors dt=2^-6..2^-10: {detail}")
    assert record(checks.check_weak(res, "C4 weak Euler rate"))


def test_c5_matching_oracle():
    rng = np.random.default_rng(20240501)
    mismatches = 0
    for _ in range(500):
        n = int(rng.integers(2, 9))
        X, Y = rng.random((n, 2)), rng.random((n, 2))
        if bottleneck_w_inf_sq(X, Y).bottleneck_sq != brute_force_bottleneck(X, Y).bottleneck_sq:
            mismatches += 1
    scan_mismatches = 0
    for _ in range(100):
        n = int(rng.integers(2, 31))
        X, Y = rng.random((n, 2)), rng.random((n, 2))
        if bottleneck_w_inf_sq(X, Y).bottleneck_sq != bottleneck_w_inf_sq(X, Y, "linear").bottleneck_sq:
            scan_mismatches += 1
    ok = mismatches == 0 and scan_mismatches == 0
    assert record(checks.Check("C5 matching oracle", ok,
                               f"{mismatches}/500 brute-force mismatches, {scan_mismatches}/100 scan mismatches"))


def _property_failures() -> dict[str, int]:
    rng = np.random.default_rng(7)
    fails = {"finite difference": 0, "antisymmetry": 0, "branch continuity": 0,
             "lambda-convexity": 0, "reflection": 0, "projection": 0}
    h = 1e-6
    for spec in (PotentialSpec(KernelKind.K2), K32):
        eps = spec.epsilon
        r = rng.uniform(0, 1, 1000)
        r = r[np.abs(r - eps) > 2 * h]
        th = rng.uniform(0, 2 * math.pi, r.size)
        x = np.column_stack([r * np.cos(th), r * np.sin(th)])
        g = grad_K(spec, x)
        fd = np.column_stack([(K(spec, x + e) - K(spec, x - e)) / (2 * h) for e in (np.array([h, 0]), np.array([0, h]))])
        fails["finite difference"] += int(np.sum(np.linalg.norm(g - fd, axis=1) > 1e-4 * (1 + np.linalg.norm(g, axis=1))))
        fails["antisymmetry"] += int(np.sum(grad_K(spec, -x) != -g))
        fails["branch continuity"] += int(abs(K(spec, (eps * (1 - 1e-12), 0.0)) - K(spec, (eps, 0.0))) > 1e-10)
        fails["branch continuity"] += int(abs(grad_K(spec, (eps * (1 - 1e-12), 0.0))[0] - grad_K(spec, (eps, 0.0))[0]) > 1e-8)
        a = rng.uniform(-0.5, 0.5, (100_000, 2))
        b = rng.uniform(-0.5, 0.5, (100_000, 2))
        lhs = np.einsum("ij,ij->i", grad_K(spec, a) - grad_K(spec, b), a - b)
        fails["lambda-convexity"] += int(np.sum(lhs < spec.lambda_K_minus * np.einsum("ij,ij->i", a - b, a - b) - 1e-9))
    for domain in (HalfPlane(), Disk()):
        for x in rng.uniform(-1, 1, (2000, 2)):
            y = domain.reflect(x)
            if not domain.contains(y) or (domain.contains(x) and not np.array_equal(x, y)):
                fails["reflection"] += 1
            if np.any(x != 0.0):
                p = domain.project_boundary(x)
                if not domain.contains(p) or domain.distance_to_boundary(p) > domain.tol_bdry:
                    fails["projection"] += 1
    return fails


def test_c6_property_suites():
    fails = _property_failures()
    total = sum(fails.values())
    detail = "zero failures" if total == 0 else ", ".join(f"{k}: {v}" for k, v in fails.items() if v)
    assert record(checks.Check("C6 gradient and geometry properties", total == 0, detail))


def test_c7_determinism(tmp_path, monkeypatch):
    plan = convergence_plan("half_plane")
    reference = stats_csv(convergence_run("half_plane").series)
    cfg = tmp_path / "plan.json"
    cfg.write_text(json.dumps({
        "domain": "half_plane", "potential": "K32", "epsilon": 0.05, "N": 200, "M": 64,
        "nu_list": list(plan.nu_list), "dt_rule": {"kind": "sqrt_nu", "c": 1.0}, "T": plan.T,
        "snapshot_times": list(plan.snapshot_times), "master_seed": 0, "nu_threshold": None,
    }))
    monkeypatch.setenv("ZDLAB_THREADS", "4")
    assert main(["convergence", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    rerun = (tmp_path / "out" / "stats.csv").read_bytes()
    same = rerun == reference.encode()
    assert record(checks.Check("C7 determinism", same,
                               "stats.csv byte-identical (1 vs 4 threads)" if same else "stats.csv differs"))
