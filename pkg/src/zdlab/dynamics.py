"""Coupled diffusive / non-diffusive interacting particle systems.

The diffusive system uses the symmetrized Euler scheme (Euler-Maruyama step
followed by mirror reflection when the endpoint leaves the domain). The
non-diffusive system uses forward Euler with the endpoint projected onto the
boundary. Both start from the same positions and share the time grid.

The pairwise interaction sum is evaluated exactly (O(N^2) per step) in a
fixed index order, so results are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

from .geometry import ConvexDomain, _clamp_inplace, _reflect_inplace
from .potentials import PotentialSpec, pair_coefficient

# Gaussian draws are generated in blocks of this many time steps.
NOISE_CHUNK_STEPS = 256
GRID_RTOL = 1e-9


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2:
            raise ValueError("positions must have shape (N, d)")
        if self.N < 2:
            raise ValueError("an ensemble needs at least two particles")

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.positions.copy(), self.time)


@dataclass
class CoupledTrajectoryPair:
    """Diffusive and deterministic ensembles advanced in lockstep."""

    diffusive: ParticleEnsemble
    deterministic: ParticleEnsemble
    nu: float
    rng: np.random.Generator = field(repr=False)


@dataclass(frozen=True)
class Snapshot:
    time: float
    stochastic: np.ndarray
    deterministic: np.ndarray


@dataclass(frozen=True)
class Region:
    """Axis-aligned box, one (low, high) pair per coordinate."""

    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if any(hi < lo for lo, hi in b):
            raise ValueError(f"region has an empty side: {b}")
        object.__setattr__(self, "bounds", b)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds])

    def to_list(self) -> list[list[float]]:
        return [list(b) for b in self.bounds]


# Default initial regions for the two reference domains.
HALF_PLANE_REGION = Region(((0.0, 0.25), (-0.125, 0.125)))
DISK_REGION = Region(((-0.05, 0.05), (0.0, 0.1)))


@nb.njit(cache=True, nogil=True)
def _drift_into(pos, i, kind, eps, out):
    """out <- -(1/(N-1)) sum_{k != i} grad K(x_i - x_k)  (external potential is zero)."""
    n, d = pos.shape
    for a in range(d):
        out[a] = 0.0
    for k in range(n):
        if k == i:
            continue
        r2 = 0.0
        for a in range(d):
            u = pos[i, a] - pos[k, a]
            r2 += u * u
        c = pair_coefficient(r2, kind, eps)
        for a in range(d):
            out[a] += c * (pos[i, a] - pos[k, a])
    inv = 1.0 / (n - 1)
    for a in range(d):
        out[a] = -out[a] * inv


@nb.njit(cache=True, nogil=True)
def _drift_all_into(pos, kind, eps, out):
    """All drifts at once, visiting each unordered pair once.

    Particle i still receives its contributions in ascending k (pairs with
    k < i arrive while the outer loop is at k), and grad K is odd, so every
    row is bitwise equal to ``_drift_into(pos, i, ...)``.
    """
    n, d = pos.shape
    for i in range(n):
        for a in range(d):
            out[i, a] = 0.0
    for i in range(n):
        for k in range(i + 1, n):
            r2 = 0.0
            for a in range(d):
                u = pos[i, a] - pos[k, a]
                r2 += u * u
            c = pair_coefficient(r2, kind, eps)
            for a in range(d):
                f = c * (pos[i, a] - pos[k, a])
                out[i, a] += f
                out[k, a] -= f
    inv = 1.0 / (n - 1)
    for i in range(n):
        for a in range(d):
            out[i, a] = -out[i, a] * inv


@nb.njit(cache=True, nogil=True)
def _stochastic_step(pos, noise, out, dt, sigma, kind, eps, code, params, scratch, drift):
    n, d = pos.shape
    _drift_all_into(pos, kind, eps, drift)
    for i in range(n):
        for a in range(d):
            out[i, a] = pos[i, a] + dt * drift[i, a] + sigma * noise[i, a]
        _reflect_inplace(code, params, out[i], scratch[1], scratch[2], scratch[3])


@nb.njit(cache=True, nogil=True)
def _deterministic_step(pos, out, dt, kind, eps, code, params, scratch, drift):
    n, d = pos.shape
    _drift_all_into(pos, kind, eps, drift)
    for i in range(n):
        for a in range(d):
            out[i, a] = pos[i, a] + dt * drift[i, a]
        _clamp_inplace(code, params, out[i], scratch[1])


@nb.njit(cache=True, nogil=True)
def _advance_pair(stoch, det, noise, dt, sigma, kind, eps, code, params):
    """Advance both systems in place through ``noise.shape[0]`` steps."""
    n, d = stoch.shape
    buf = np.empty((n, d))
    drift = np.empty((n, d))
    scratch = np.empty((4, d))
    for s in range(noise.shape[0]):
        _stochastic_step(stoch, noise[s], buf, dt, sigma, kind, eps, code, params, scratch, drift)
        stoch[:, :] = buf
        _deterministic_step(det, buf, dt, kind, eps, code, params, scratch, drift)
        det[:, :] = buf


@nb.njit(cache=True, nogil=True)
def _stochastic_step_batch(pos, noise, dt, sigma, kind, eps, code, params):
    """One symmetrized Euler step for a batch of independent ensembles (B, N, d), in place."""
    b, n, d = pos.shape
    buf = np.empty((n, d))
    drift = np.empty((n, d))
    scratch = np.empty((4, d))
    for j in range(b):
        _stochastic_step(pos[j], noise[j], buf, dt, sigma, kind, eps, code, params, scratch, drift)
        pos[j, :, :] = buf


def _check_domain(ens: ParticleEnsemble, domain: ConvexDomain):
    if ens.d != domain.dim:
        raise ValueError(f"ensemble dimension {ens.d} does not match domain dimension {domain.dim}")


def sample_initial(region: Region, N: int, seed: int | np.random.Generator,
                   domain: ConvexDomain | None = None) -> ParticleEnsemble:
    """N i.i.d. uniform points in ``region``.

    ``seed`` may be an integer or an existing generator; in the latter case
    the generator's stream is advanced, which is how a trajectory draws its
    initial data and then its noise from one stream.
    """
    if domain is not None and not domain.contains_box(region.lower, region.upper):
        raise ValueError(f"initial region {region.to_list()} is not contained in the domain")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    u = rng.random((N, region.dim))
    lo, hi = region.lower, region.upper
    return ParticleEnsemble(lo + (hi - lo) * u, 0.0)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based stream (Philox) keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def drift(ensemble: ParticleEnsemble, spec: PotentialSpec, i: int) -> np.ndarray:
    out = np.empty(ensemble.d)
    _drift_into(ensemble.positions, int(i), spec.kind.code, float(spec.epsilon), out)
    return out


def drift_all(ensemble: ParticleEnsemble, spec: PotentialSpec) -> np.ndarray:
    out = np.empty_like(ensemble.positions)
    _drift_all_into(ensemble.positions, spec.kind.code, float(spec.epsilon), out)
    return out


def step_stochastic(ensemble: ParticleEnsemble, spec: PotentialSpec, domain: ConvexDomain,
                    dt: float, noise: np.ndarray, nu: float) -> ParticleEnsemble:
    """x_i <- R(x_i + dt drift_i + sqrt(2 nu dt) noise_i)."""
    _check_domain(ensemble, domain)
    if not dt > 0:
        raise ValueError("dt must be positive")
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    if noise.shape != ensemble.positions.shape:
        raise ValueError(f"noise shape {noise.shape} != positions shape {ensemble.positions.shape}")
    out = np.empty_like(ensemble.positions)
    _stochastic_step(ensemble.positions, noise, out, float(dt), math.sqrt(2.0 * nu * dt),
                     spec.kind.code, float(spec.epsilon), domain.code, domain.params,
                     np.empty((4, ensemble.d)), np.empty_like(out))
    return ParticleEnsemble(out, ensemble.time + dt)


def step_deterministic(ensemble: ParticleEnsemble, spec: PotentialSpec, domain: ConvexDomain,
                       dt: float) -> ParticleEnsemble:
    """x_i <- clamp(x_i + dt drift_i); the endpoint is projected onto the boundary if it leaves D."""
    _check_domain(ensemble, domain)
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = np.empty_like(ensemble.positions)
    _deterministic_step(ensemble.positions, out, float(dt), spec.kind.code, float(spec.epsilon),
                        domain.code, domain.params, np.empty((4, ensemble.d)), np.empty_like(out))
    return ParticleEnsemble(out, ensemble.time + dt)


def grid_index(t: float, dt: float) -> int:
    """Number of steps of size dt to reach t; raises if t is off the grid."""
    k = round(t / dt)
    if k < 0 or abs(k * dt - t) > GRID_RTOL * max(dt, abs(t)):
        raise ValueError(f"time {t!r} is not on the uniform grid with dt={dt!r}")
    return int(k)


def simulate_pair(domain: ConvexDomain, spec: PotentialSpec, N: int, nu: float, dt: float,
                  snapshot_times: Sequence[float], init_region: Region, seed: int) -> list[Snapshot]:
    """Simulate one coupled trajectory and record both systems at ``snapshot_times``.

    One Philox stream per trajectory: initial positions are drawn first,
    then one (N, d) block of standard Gaussians per time step, in order.
    """
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    if init_region.dim != domain.dim:
        raise ValueError("initial region and domain dimensions differ")
    times = sorted(float(t) for t in snapshot_times)
    steps = [grid_index(t, dt) for t in times]
    rng = make_rng(seed)
    init = sample_initial(init_region, N, rng, domain)
    stoch = init.positions.copy()
    det = init.positions.copy()
    sigma = math.sqrt(2.0 * nu * dt)
    d = domain.dim
    kind, eps = spec.kind.code, float(spec.epsilon)
    code, params = domain.code, domain.params

    snaps: list[Snapshot] = []
    done = 0
    for t, target in zip(times, steps):
        while done < target:
            n = min(NOISE_CHUNK_STEPS, target - done)
            noise = rng.standard_normal((n, N, d))
            _advance_pair(stoch, det, noise, float(dt), sigma, kind, eps, code, params)
            done += n
        snaps.append(Snapshot(t, stoch.copy(), det.copy()))
    return snaps


def snapshots_to_rows(snaps: Sequence[Snapshot], traj_id: int = 0):
    """Rows ``traj_id, time, system, particle_id, x1..xd`` for the snapshot CSV."""
    for s in snaps:
        for system, pos in (("stoch", s.stochastic), ("det", s.deterministic)):
            for pid, x in enumerate(pos):
                yield [traj_id, s.time, system, pid, *x.tolist()]
