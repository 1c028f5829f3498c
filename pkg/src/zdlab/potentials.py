"""Attractive-repulsive interaction potentials with a C^1 regularized
Newtonian repulsion, and the zero external potential.

    K2(x)  = |x|^2 / 2       + phi_eps(|x|)
    K32(x) = 2/3 |x|^(3/2)   + phi_eps(|x|)

    phi_eps(r) = (1 - 2 pi log eps) / (4 pi) - r^2 / (4 pi eps^2)   r < eps
               = -log(r) / (2 pi)                                    r >= eps
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numba as nb
import numpy as np

K2_CODE = 0
K32_CODE = 1
EXTERNAL_ZERO = 0

DEFAULT_EPSILON = 0.05


class KernelKind(str, Enum):
    K2 = "K2"
    K32 = "K32"

    @property
    def code(self) -> int:
        return K2_CODE if self is KernelKind.K2 else K32_CODE


@dataclass(frozen=True)
class PotentialSpec:
    """Interaction kernel, repulsion radius and external potential.

    The convexity constants are derived from ``kind`` and ``epsilon``: the
    regularized repulsion has Hessian bounded below by ``-1/(2 pi eps^2)``,
    quadratic attraction adds ``+1`` and the 3/2 attraction is credited
    nothing.
    """

    kind: KernelKind = KernelKind.K32
    epsilon: float = DEFAULT_EPSILON
    external: str = "zero"

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.external != "zero":
            raise ValueError(f"unsupported external potential {self.external!r}")

    @property
    def lambda_K_minus(self) -> float:
        repulsion = -1.0 / (2.0 * math.pi * self.epsilon**2)
        if self.kind is KernelKind.K2:
            return min(0.0, 1.0 + repulsion)
        return repulsion

    @property
    def lambda_V_minus(self) -> float:
        return 0.0

    @property
    def lambda_minus(self) -> float:
        return self.lambda_K_minus + self.lambda_V_minus

    def to_dict(self) -> dict:
        return {"potential": self.kind.value, "epsilon": self.epsilon, "external": self.external}


@nb.njit(cache=True, nogil=True, inline="always")
def pair_coefficient(r2, kind, eps):
    """Scalar c with grad K(x) = c * x, given r2 = |x|^2."""
    if r2 == 0.0:
        return 0.0
    if kind == K2_CODE:
        att = 1.0
    else:
        att = 1.0 / math.sqrt(math.sqrt(r2))
    if r2 < eps * eps:
        rep = -1.0 / (2.0 * math.pi * eps * eps)
    else:
        rep = -1.0 / (2.0 * math.pi * r2)
    return att + rep


@nb.njit(cache=True, nogil=True)
def _grad_k_rows(x, kind, eps):
    n, d = x.shape
    out = np.empty((n, d))
    for i in range(n):
        r2 = 0.0
        for a in range(d):
            r2 += x[i, a] * x[i, a]
        c = pair_coefficient(r2, kind, eps)
        for a in range(d):
            out[i, a] = c * x[i, a]
    return out


def grad_K(spec: PotentialSpec, x) -> np.ndarray:
    """Gradient of the interaction kernel; ``x`` may be a vector or a stack
    of vectors along the last axis."""
    arr = np.asarray(x, dtype=np.float64)
    flat = np.ascontiguousarray(arr.reshape(-1, arr.shape[-1]))
    return _grad_k_rows(flat, spec.kind.code, float(spec.epsilon)).reshape(arr.shape)


def grad_V(spec: PotentialSpec, x) -> np.ndarray:
    return np.zeros_like(np.asarray(x, dtype=np.float64))


def K(spec: PotentialSpec, x) -> np.ndarray | float:
    """Kernel values, evaluated along the last axis."""
    arr = np.asarray(x, dtype=np.float64)
    r = np.linalg.norm(arr, axis=-1)
    eps = spec.epsilon
    if spec.kind is KernelKind.K2:
        att = 0.5 * r**2
    else:
        att = (2.0 / 3.0) * r**1.5
    with np.errstate(divide="ignore"):
        far = -np.log(r) / (2.0 * np.pi)
    near = (1.0 - 2.0 * np.log(eps)) / (4.0 * np.pi) - r**2 / (4.0 * np.pi * eps**2)
    val = att + np.where(r < eps, near, far)
    return float(val) if np.ndim(val) == 0 else val


def V(spec: PotentialSpec, x) -> np.ndarray | float:
    arr = np.asarray(x, dtype=np.float64)
    val = np.zeros(arr.shape[:-1])
    return float(val) if val.ndim == 0 else val


def theorem_envelope(spec: PotentialSpec, d: int, nu: float, t: float) -> float:
    """Upper bound 2 d nu t (1 - 2 L t exp(-2 L t)) on E[W_inf^2] between the
    diffusive and non-diffusive particle systems, L = lambda_K^- + lambda_V^-."""
    lam = spec.lambda_minus
    base = 2.0 * d * nu * t
    if base == 0.0:
        return 0.0
    try:
        growth = math.exp(-2.0 * lam * t)
    except OverflowError:
        return math.inf
    return base * (1.0 - 2.0 * lam * t * growth)
