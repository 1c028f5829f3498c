"""Experiment configuration (JSON) and result persistence.

A config file is a JSON object whose keys mirror the experiment plan.
Anything omitted takes the documented default; unknown keys are rejected.
Command-line flags override file keys.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import __version__
from .dynamics import DISK_REGION, HALF_PLANE_REGION, Region
from .geometry import ConvexDomain, Disk, domain_from_dict
from .montecarlo import DtRule, ExperimentPlan, StatSeries
from .potentials import DEFAULT_EPSILON, PotentialSpec

# Rate-fit admissibility: nu values above these floors are dominated by pair
# separation at the boundary.
NU_THRESHOLD = {"half_plane": 1e-6, "disk": 1e-7}

PROFILES = {
    "desk": {"N": 200, "M": 64},
    "full": {"N": 1000, "M": 250},
}

DESK_NU_LIST = [2.0**-20, 2.0**-22, 2.0**-24, 2.0**-26]
DESK_SNAPSHOTS = [0.0, 2.0**-5, 0.25, 0.5]

PLAN_KEYS = {
    "profile", "domain", "potential", "epsilon", "external", "N", "M", "nu_list", "dt_rule",
    "T", "snapshot_times", "init_region", "master_seed", "on_error", "nu_threshold", "fit_time",
}
WEAK_KEYS = {
    "domain", "potential", "epsilon", "external", "nu", "N", "T", "dt_list", "fine_dt",
    "samples", "init_region", "master_seed",
}


class ConfigError(ValueError):
    pass


def fmt(x: float) -> str:
    """17 significant digits: lossless for doubles."""
    return format(float(x), ".17g")


def domain_kind(domain: ConvexDomain) -> str:
    return "disk" if isinstance(domain, Disk) else "half_plane"


def default_region(domain: ConvexDomain) -> Region:
    return DISK_REGION if isinstance(domain, Disk) else HALF_PLANE_REGION


@dataclass(frozen=True)
class RunConfig:
    """An experiment plan plus the settings of the analysis run on its output."""

    plan: ExperimentPlan
    nu_threshold: float | None = None
    fit_time: float = 0.25
    profile: str = "desk"

    def to_dict(self) -> dict:
        p = self.plan
        return {
            "profile": self.profile,
            "domain": p.domain.to_dict(),
            **p.potential.to_dict(),
            "N": p.N,
            "M": p.M,
            "nu_list": list(p.nu_list),
            "dt_rule": p.dt_rule.to_dict(),
            "T": p.T,
            "snapshot_times": list(p.snapshot_times),
            "init_region": p.init_region.to_list(),
            "master_seed": p.master_seed,
            "on_error": p.on_error,
            "nu_threshold": self.nu_threshold,
            "fit_time": self.fit_time,
        }


@dataclass(frozen=True)
class WeakErrorPlan:
    domain: ConvexDomain = field(default_factory=Disk)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    nu: float = 0.01
    N: int = 5
    T: float = 0.25
    dt_list: tuple[float, ...] = tuple(2.0**-k for k in range(6, 11))
    fine_dt: float = 2.0**-12
    samples: int = 20000
    init_region: Region = DISK_REGION
    master_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            **self.potential.to_dict(),
            "nu": self.nu,
            "N": self.N,
            "T": self.T,
            "dt_list": list(self.dt_list),
            "fine_dt": self.fine_dt,
            "samples": self.samples,
            "init_region": self.init_region.to_list(),
            "master_seed": self.master_seed,
        }


def _parse_dt_rule(obj: Any) -> DtRule:
    if isinstance(obj, (int, float)):
        return DtRule("fixed", float(obj))
    obj = dict(obj)
    kind = obj.pop("kind", None)
    if kind == "sqrt_nu":
        value = obj.pop("c", 1.0)
    elif kind == "fixed":
        if "dt" not in obj:
            raise ConfigError("fixed dt rule needs a 'dt' value")
        value = obj.pop("dt")
    else:
        raise ConfigError(f"unknown dt_rule kind {kind!r}")
    if obj:
        raise ConfigError(f"unknown dt_rule keys: {sorted(obj)}")
    return DtRule(kind, float(value))


def _parse_potential(raw: Mapping) -> PotentialSpec:
    return PotentialSpec(raw.get("potential", "K32"), float(raw.get("epsilon", DEFAULT_EPSILON)),
                         raw.get("external", "zero"))


def _load(source: str | os.PathLike | Mapping | None) -> dict:
    if source is None:
        return {}
    if isinstance(source, Mapping):
        return dict(source)
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return obj


def _merge(raw: dict, overrides: Mapping | None) -> dict:
    """Layer flag overrides on ``raw``; a None override means the flag was not given."""
    out = dict(raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            out[k] = v
    return out


def parse_config(source: str | os.PathLike | Mapping | None = None,
                 overrides: Mapping | None = None, defaults: Mapping | None = None) -> RunConfig:
    """Build a validated RunConfig from a JSON file or mapping plus flag overrides.

    Precedence, lowest first: built-in defaults, ``defaults`` (per-command),
    the file, ``overrides``.
    """
    raw = _merge({**(defaults or {}), **_load(source)}, overrides)
    unknown = set(raw) - PLAN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        profile = raw.get("profile", "desk")
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        sizes = PROFILES[profile]
        domain = domain_from_dict(raw.get("domain", "half_plane"))
        region = Region(tuple(map(tuple, raw["init_region"]))) if "init_region" in raw else default_region(domain)
        nu_list = [float(v) for v in raw.get("nu_list", DESK_NU_LIST)]
        if any(not v > 0 for v in nu_list):
            raise ConfigError(f"nu_list entries must be positive: {nu_list}")
        snapshots = [float(t) for t in raw.get("snapshot_times", DESK_SNAPSHOTS)]
        plan = ExperimentPlan(
            domain=domain,
            potential=_parse_potential(raw),
            N=int(raw.get("N", sizes["N"])),
            M=int(raw.get("M", sizes["M"])),
            nu_list=tuple(sorted(nu_list, reverse=True)),
            dt_rule=_parse_dt_rule(raw.get("dt_rule", {"kind": "sqrt_nu", "c": 1.0})),
            T=float(raw.get("T", max(snapshots))),
            snapshot_times=tuple(snapshots),
            init_region=region,
            master_seed=int(raw.get("master_seed", 0)),
            on_error=raw.get("on_error", "fail"),
        )
        threshold = raw.get("nu_threshold", NU_THRESHOLD[domain_kind(domain)])
        default_fit = 0.25 if 0.25 in plan.snapshot_times else max(plan.snapshot_times)
        fit_time = float(raw.get("fit_time", default_fit))
        if fit_time not in plan.snapshot_times:
            raise ConfigError(f"fit_time {fit_time} is not a snapshot time")
        return RunConfig(plan, None if threshold is None else float(threshold), fit_time, profile)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_weak_config(source: str | os.PathLike | Mapping | None = None,
                      overrides: Mapping | None = None) -> WeakErrorPlan:
    raw = _merge(_load(source), overrides)
    unknown = set(raw) - WEAK_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        domain = domain_from_dict(raw.get("domain", "disk"))
        region = Region(tuple(map(tuple, raw["init_region"]))) if "init_region" in raw else default_region(domain)
        if not domain.contains_box(region.lower, region.upper):
            raise ConfigError(f"initial region {region.to_list()} is not contained in the domain")
        nu = float(raw.get("nu", 0.01))
        if not nu > 0:
            raise ConfigError("nu must be positive")
        defaults = WeakErrorPlan()
        return WeakErrorPlan(
            domain=domain,
            potential=_parse_potential(raw),
            nu=nu,
            N=int(raw.get("N", defaults.N)),
            T=float(raw.get("T", defaults.T)),
            dt_list=tuple(float(x) for x in raw.get("dt_list", defaults.dt_list)),
            fine_dt=float(raw.get("fine_dt", defaults.fine_dt)),
            samples=int(raw.get("samples", defaults.samples)),
            init_region=region,
            master_seed=int(raw.get("master_seed", 0)),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def atomic_write(path: Path, data: str):
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed to write {path}: {exc}") from exc


def stats_csv(series: StatSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["nu", "time", "mean_w_sq", "ci_half_width", "M"])
    for c in series:
        w.writerow([fmt(c.nu), fmt(c.time), fmt(c.mean_w_sq), fmt(c.ci_half_width), c.M])
    return buf.getvalue()


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def emit_results(out_dir: str | os.PathLike, series: StatSeries | None = None,
                 fits: Mapping[str, Any] | None = None, manifest: Mapping[str, Any] | None = None,
                 extra: Mapping[str, str] | None = None) -> dict[str, Path]:
    """Write ``stats.csv``, ``fit.json`` and ``manifest.json`` atomically.

    ``fits`` maps a fit kind (``"power_law"``, ``"growth"``) to an object with
    ``to_dict()`` or a plain dict. ``extra`` holds further files by name.
    The manifest receives SHA-256 digests of every other file written.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    files: dict[str, str] = {}
    if series is not None:
        files["stats.csv"] = stats_csv(series)
    if fits is not None:
        payload = {k: (v.to_dict() if hasattr(v, "to_dict") else v) for k, v in fits.items()}
        files["fit.json"] = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    files.update(extra or {})
    written = {}
    for name, text in files.items():
        atomic_write(out / name, text)
        written[name] = out / name
    if manifest is not None:
        m = dict(manifest)
        m.setdefault("tool", "zdlab")
        m.setdefault("version", __version__)
        m["digests"] = {name: sha256(text) for name, text in files.items()}
        atomic_write(out / "manifest.json", json.dumps(m, indent=2, sort_keys=True) + "\n")
        written["manifest.json"] = out / "manifest.json"
    return written


def read_point_cloud(path: str | os.PathLike):
    """Read a ``particle_id, x1, ..., xd`` CSV; rows are ordered by particle_id."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not header or header[0].strip() != "particle_id" or len(header) < 2:
        raise ConfigError(f"{path}: expected header 'particle_id, x1, ..., xd'")
    try:
        body.sort(key=lambda r: int(r[0]))
        pts = np.array([[float(v) for v in r[1:]] for r in body])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if pts.ndim != 2 or pts.shape[1] != len(header) - 1:
        raise ConfigError(f"{path}: ragged rows")
    return pts


def write_point_cloud(path: str | os.PathLike, points) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = len(points[0])
    w.writerow(["particle_id", *[f"x{a + 1}" for a in range(d)]])
    for i, p in enumerate(points):
        w.writerow([i, *[fmt(v) for v in p]])
    atomic_write(Path(path), buf.getvalue())


def snapshot_csv(rows, d: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["traj_id", "time", "system", "particle_id", *[f"x{a + 1}" for a in range(d)]])
    for traj, t, system, pid, *xs in rows:
        w.writerow([traj, fmt(t), system, pid, *[fmt(v) for v in xs]])
    return buf.getvalue()

