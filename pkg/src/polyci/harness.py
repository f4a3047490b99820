"""Reproducible coverage and area experiments over competing region methods.

A run draws a shared stream of observations (one counter-based noise stream
per trial), builds every configured method's region for each observation,
and tallies how often the true functional value is covered.  Thresholds are
calibrated once up front; the trial loop then costs a handful of small
constrained least-squares solves per trial, shared across methods wherever
the statistics coincide.  Trials can be distributed over a process pool;
aggregation is in trial order, so reports are bit-identical for a given
seed no matter how many workers run.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .calibration import GlobalConstant, Provenance, global_threshold
from .distributions import chi2_quantile
from .problems import ProblemSpec
from .regions import (
    EmptyRegionError,
    IntervalK,
    RegionSpec,
    boundary_polyline,
    contains,
    profile_roots,
    region_area,
    region_interior_point,
    split_contains,
    split_region_build,
)
from .rng import normal_stream
from .statistics import TestStatistic, workspace_for

SCHEMA_VERSION = 1

_KNOWN_METHODS = (
    "ssb_x", "ssb_mu", "qzero_x", "qzero_mu",
    "bonferroni", "split_naive", "split_refined", "custom",
)


class UnknownMethodError(ValueError):
    pass


class InvalidConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AreaConfig:
    enabled: bool = False
    n_angles: int = 128
    r_tol: float = 1e-4
    n_trials: int = 100


@dataclass(frozen=True)
class MethodDescriptor:
    """One entry of the experiment's method list."""

    name: str
    label: str
    stat: Optional[TestStatistic] = None     # custom only
    delta: Optional[float] = None            # custom only
    alpha1: Optional[float] = None           # split only
    alpha2: Optional[float] = None           # split only

    @classmethod
    def parse(cls, entry) -> "MethodDescriptor":
        if isinstance(entry, str):
            entry = {"name": entry}
        name = entry.get("name")
        if name not in _KNOWN_METHODS:
            raise UnknownMethodError(f"unknown method {name!r}")
        label = entry.get("label", name)
        stat = TestStatistic(entry["stat"]) if "stat" in entry else None
        if name == "custom" and (stat is None or "delta" not in entry):
            raise InvalidConfigError("custom methods need 'stat' and 'delta'")
        return cls(name=name, label=label, stat=stat,
                   delta=entry.get("delta"),
                   alpha1=entry.get("alpha1"), alpha2=entry.get("alpha2"))


@dataclass(frozen=True)
class ExperimentConfig:
    spec: ProblemSpec
    x_star: np.ndarray
    alpha: float
    n_trials: int
    methods: tuple
    seed: int
    area: AreaConfig = AreaConfig()
    calibration_samples: int = 100_000
    workers: Optional[int] = None
    output_path: Optional[str] = None

    def __post_init__(self):
        x = np.asarray(self.x_star, dtype=float)
        object.__setattr__(self, "x_star", x)
        if x.shape[0] != self.spec.n_param:
            raise InvalidConfigError("x_star length differs from parameter count")
        from .qp import constraint_rows

        g, rhs = constraint_rows(self.spec.constraints, dim=self.spec.n_param)
        if g.shape[0] and np.max(g @ x - rhs) > 1e-8:
            raise InvalidConfigError("x_star violates the constraints")
        if self.n_trials < 1:
            raise InvalidConfigError("n_trials must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfigError("alpha must be in (0, 1)")

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        try:
            spec = ProblemSpec.from_json(obj["spec"])
            area = obj.get("area", {})
            return cls(
                spec=spec,
                x_star=np.asarray(obj["x_star"], dtype=float),
                alpha=float(obj["alpha"]),
                n_trials=int(obj["n_trials"]),
                methods=tuple(MethodDescriptor.parse(m) for m in obj["methods"]),
                seed=int(obj["seed"]),
                area=AreaConfig(
                    enabled=bool(area.get("enabled", False)),
                    n_angles=int(area.get("n_angles", 128)),
                    r_tol=float(area.get("r_tol", 1e-4)),
                    n_trials=int(area.get("n_trials", 100)),
                ),
                calibration_samples=int(obj.get("calibration_samples", 100_000)),
                workers=obj.get("workers"),
                output_path=obj.get("output_path"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (UnknownMethodError, InvalidConfigError)):
                raise
            raise InvalidConfigError(f"bad experiment config: {exc}") from exc


# --- resolved methods (thresholds pinned before the trial loop) ----------------

@dataclass(frozen=True)
class _Resolved:
    label: str
    kind: str                      # mu | box | bonferroni | split
    stat: TestStatistic = TestStatistic.L1
    delta: Optional[float] = None
    row_deltas: Optional[tuple] = None
    perp_method: Optional[str] = None
    perp_delta: Optional[float] = None
    alpha1: Optional[float] = None
    alpha2: Optional[float] = None
    provenance: Optional[str] = None


def build_method(descriptor: MethodDescriptor, spec: ProblemSpec, alpha: float,
                 calibration_samples: int, seed: int,
                 workers: Optional[int] = None,
                 _origin_cache: Optional[dict] = None) -> _Resolved:
    """Resolve a method descriptor into fixed thresholds.

    The strict-bounds methods take the full-dimension chi-squared constant;
    the quantile-at-zero methods calibrate the one-term statistic at the
    cone apex; Bonferroni splits the level across per-row apex quantiles;
    the split methods defer their nullspace constant to region build time
    (naive keeps chi-squared, refined calibrates at the apex).
    """
    name = descriptor.name
    cache = _origin_cache if _origin_cache is not None else {}

    def origin_delta(sub_spec: ProblemSpec, level: float, key) -> GlobalConstant:
        if key not in cache:
            cache[key] = global_threshold(sub_spec, TestStatistic.L1, level, "origin",
                                          n_samples=calibration_samples, seed=seed,
                                          workers=workers)
        return cache[key]

    if name in ("ssb_x", "ssb_mu"):
        delta = chi2_quantile(spec.n_obs, 1.0 - alpha)
        return _Resolved(label=descriptor.label, kind="mu" if name.endswith("mu") else "box",
                         delta=delta, provenance=Provenance.CHI_SQ_N.value)
    if name in ("qzero_x", "qzero_mu"):
        rule = origin_delta(spec, alpha, ("full", alpha))
        return _Resolved(label=descriptor.label, kind="mu" if name.endswith("mu") else "box",
                         delta=rule.delta, provenance=Provenance.QUANTILE_AT_ORIGIN.value)
    if name == "bonferroni":
        k = spec.n_func
        deltas = []
        for i in range(k):
            rule = origin_delta(spec.row_spec(i), alpha / k, ("row", i, alpha / k))
            deltas.append(rule.delta)
        return _Resolved(label=descriptor.label, kind="bonferroni",
                         row_deltas=tuple(deltas),
                         provenance=Provenance.QUANTILE_AT_ORIGIN.value)
    if name in ("split_naive", "split_refined"):
        a1 = descriptor.alpha1 if descriptor.alpha1 is not None else alpha / 2
        a2 = descriptor.alpha2 if descriptor.alpha2 is not None else alpha - a1
        perp_method = "chisq-n" if name == "split_naive" else "origin"
        if perp_method == "chisq-n":
            perp_delta = chi2_quantile(spec.n_obs, 1.0 - a2)
        else:
            from .linalg import row_null_split

            perp_spec = ProblemSpec(
                forward=spec.forward,
                functionals=row_null_split(spec.forward, spec.functionals).h_perp,
                constraints=spec.constraints,
            )
            perp_delta = origin_delta(perp_spec, a2, ("perp", a2)).delta
        return _Resolved(label=descriptor.label, kind="split",
                         perp_method=perp_method, perp_delta=perp_delta,
                         alpha1=a1, alpha2=a2)
    if name == "custom":
        return _Resolved(label=descriptor.label, kind="mu", stat=descriptor.stat,
                         delta=float(descriptor.delta),
                         provenance=Provenance.USER_SUPPLIED.value)
    raise UnknownMethodError(name)


# --- per-process runtime --------------------------------------------------------

class _Runtime:
    """Per-process state for the trial loop: workspaces and split caches."""

    def __init__(self, config: ExperimentConfig, resolved: tuple):
        self.config = config
        self.resolved = resolved
        self.spec = config.spec
        self.ws = workspace_for(self.spec)
        self.mu_star = self.spec.functionals @ config.x_star
        self.y_mean = self.spec.forward @ config.x_star
        self.center_map = self.spec.functionals @ np.linalg.pinv(self.spec.forward)
        self.splits = {}
        for r in resolved:
            if r.kind == "split":
                self.splits[r.label] = {
                    "cache": {},
                    "template": None,
                }

    def _split_template(self, r: _Resolved):
        entry = self.splits[r.label]
        if entry["template"] is None:
            entry["template"] = split_region_build(
                self.spec, np.zeros(self.spec.n_obs), r.alpha1, r.alpha2,
                perp_rule=GlobalConstant(
                    r.perp_delta,
                    Provenance.CHI_SQ_N if r.perp_method == "chisq-n"
                    else Provenance.QUANTILE_AT_ORIGIN,
                ),
                solver_cache=entry["cache"],
            )
        return entry["template"]

    def _split_for(self, r: _Resolved, y: np.ndarray):
        template = self._split_template(r)
        center = self.center_map @ y
        perp = dataclasses.replace(template.perp, y=y)
        return dataclasses.replace(template, parallel_center=center, perp=perp)

    def run_range(self, lo: int, hi: int):
        cfg = self.config
        k = self.spec.n_func
        hits = {r.label: 0 for r in self.resolved}
        empties = {r.label: 0 for r in self.resolved}
        failures = 0
        areas: dict = {r.label: [] for r in self.resolved}
        area_hi = cfg.area.n_trials if cfg.area.enabled else 0
        for t in range(lo, hi):
            eps = normal_stream(cfg.seed, t, self.spec.n_obs)
            y = self.y_mean + eps
            try:
                slice_full = self.ws.slice_min(self.mu_star, y)
                row_vals = np.array(
                    [self.ws.profile_min(self.spec.functionals[i], self.mu_star[i], y)
                     for i in range(k)]
                )
                c_x = self.ws.constrained_min(y)
                c_free = self.ws.unconstrained_min(y)
                offsets = {TestStatistic.L1: 0.0, TestStatistic.L2U: c_free,
                           TestStatistic.L2C: c_x}
                for r in self.resolved:
                    if r.kind == "mu":
                        off = offsets[r.stat]
                        if slice_full - off <= r.delta + 1e-9:
                            hits[r.label] += 1
                        if c_x - off > r.delta + 1e-9:
                            empties[r.label] += 1
                    elif r.kind == "box":
                        off = offsets[r.stat]
                        if np.all(row_vals - off <= r.delta + 1e-9):
                            hits[r.label] += 1
                        if c_x - off > r.delta + 1e-9:
                            empties[r.label] += 1
                    elif r.kind == "bonferroni":
                        if np.all(row_vals <= np.asarray(r.row_deltas) + 1e-9):
                            hits[r.label] += 1
                        if c_x > min(r.row_deltas) + 1e-9:
                            empties[r.label] += 1
                    elif r.kind == "split":
                        split = self._split_for(r, y)
                        if split_contains(split, self.mu_star):
                            hits[r.label] += 1
                        if c_x > split.perp.threshold.delta_at(self.mu_star) + 1e-9:
                            empties[r.label] += 1
                if t < area_hi:
                    self._areas_for_trial(y, areas)
            except Exception:
                failures += 1
        return hits, empties, failures, areas

    def _areas_for_trial(self, y: np.ndarray, areas: dict):
        cfg = self.config
        for r in self.resolved:
            if r.kind == "mu":
                region = RegionSpec(spec=self.spec, stat=r.stat,
                                    threshold=GlobalConstant(r.delta, Provenance.USER_SUPPLIED),
                                    y=y)
                try:
                    if self.spec.n_func == 2:
                        areas[r.label].append(
                            region_area(region, n_angles=cfg.area.n_angles,
                                        r_tol=cfg.area.r_tol)
                        )
                except EmptyRegionError:
                    areas[r.label].append(0.0)
            elif r.kind in ("box", "bonferroni"):
                try:
                    box = self._interval_for(r, y)
                    areas[r.label].append(box.box_area())
                except EmptyRegionError:
                    areas[r.label].append(0.0)
            # split areas are not computed: the membership oracle is far more
            # expensive and no comparison in the study needs them

    def _interval_for(self, r: _Resolved, y: np.ndarray) -> IntervalK:
        off = 0.0 if r.kind == "bonferroni" else {
            TestStatistic.L1: 0.0,
            TestStatistic.L2U: self.ws.unconstrained_min(y),
            TestStatistic.L2C: self.ws.constrained_min(y),
        }[r.stat]
        los, his = [], []
        for i, row in enumerate(self.spec.functionals):
            delta = r.row_deltas[i] if r.kind == "bonferroni" else r.delta
            lo, hi = profile_roots(self.spec, y, off, delta, row)
            los.append(lo)
            his.append(hi)
        return IntervalK(lo=np.array(los), hi=np.array(his))


_WORKER_RUNTIME: Optional[_Runtime] = None


def _init_worker(config: ExperimentConfig, resolved: tuple):
    global _WORKER_RUNTIME
    _WORKER_RUNTIME = _Runtime(config, resolved)


def _run_range_worker(bounds):
    return _WORKER_RUNTIME.run_range(*bounds)


# --- reports ---------------------------------------------------------------------

def wilson_interval(hits: int, n: int, z: float = 1.959963984540054) -> tuple:
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return center - half, center + half


@dataclass(frozen=True)
class MethodReport:
    label: str
    hits: int
    coverage_rate: float
    wilson_low: float
    wilson_high: float
    empty_count: int
    area_trials: int
    area_mean: Optional[float]
    area_q25: Optional[float]
    area_q50: Optional[float]
    area_q75: Optional[float]

    def to_json(self) -> dict:
        return {
            "hits": self.hits,
            "coverage_rate": self.coverage_rate,
            "wilson_low": self.wilson_low,
            "wilson_high": self.wilson_high,
            "empty_count": self.empty_count,
            "area_trials": self.area_trials,
            "area_mean": self.area_mean,
            "area_q25": self.area_q25,
            "area_q50": self.area_q50,
            "area_q75": self.area_q75,
        }


@dataclass(frozen=True)
class CoverageReport:
    n_trials: int
    alpha: float
    methods: dict                 # label -> MethodReport
    thresholds: dict              # label -> jsonable threshold info
    solver_failures: int
    flagged: bool
    areas: dict                   # label -> list of per-trial areas
    runtime_seconds: float

    def to_json(self) -> dict:
        """Deterministic results under ``results``; timing under ``meta``."""
        return {
            "schema_version": SCHEMA_VERSION,
            "results": {
                "n_trials": self.n_trials,
                "alpha": self.alpha,
                "methods": {k: v.to_json() for k, v in sorted(self.methods.items())},
                "thresholds": {k: self.thresholds[k] for k in sorted(self.thresholds)},
                "solver_failures": self.solver_failures,
                "flagged": self.flagged,
            },
            "meta": {"runtime_seconds": self.runtime_seconds},
        }


def run_coverage(config: ExperimentConfig) -> CoverageReport:
    """Execute the experiment: calibrate, loop trials, aggregate.

    Per-trial observations share one noise stream across all methods (paired
    comparison).  Empty regions count as misses and are tallied separately.
    A run is flagged when solver failures exceed 0.1% of trials.
    """
    t_start = time.perf_counter()
    origin_cache: dict = {}
    resolved = tuple(
        build_method(m, config.spec, config.alpha, config.calibration_samples,
                     config.seed, workers=config.workers, _origin_cache=origin_cache)
        for m in config.methods
    )
    labels = [r.label for r in resolved]
    if len(set(labels)) != len(labels):
        raise InvalidConfigError("method labels must be unique; add 'label' entries")

    thresholds = {}
    for r in resolved:
        info: dict = {"kind": r.kind}
        if r.delta is not None:
            info["delta"] = r.delta
        if r.row_deltas is not None:
            info["row_deltas"] = list(r.row_deltas)
        if r.provenance is not None:
            info["provenance"] = r.provenance
        if r.kind == "split":
            info["alpha1"], info["alpha2"] = r.alpha1, r.alpha2
            info["perp_method"] = r.perp_method
            info["perp_delta"] = r.perp_delta
        thresholds[r.label] = info

    n = config.n_trials
    workers = config.workers or 1
    if workers > 1 and n >= 2 * workers:
        chunk = max(200, -(-n // (workers * 4)))
        ranges = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(config, resolved)) as pool:
            parts = list(pool.map(_run_range_worker, ranges))
    else:
        runtime = _Runtime(config, resolved)
        parts = [runtime.run_range(0, n)]

    hits = {r.label: 0 for r in resolved}
    empties = {r.label: 0 for r in resolved}
    failures = 0
    areas: dict = {r.label: [] for r in resolved}
    for part_hits, part_empties, part_failures, part_areas in parts:
        for label in hits:
            hits[label] += part_hits[label]
            empties[label] += part_empties[label]
            areas[label].extend(part_areas[label])
        failures += part_failures

    methods = {}
    for r in resolved:
        a = areas[r.label]
        lo, hi = wilson_interval(hits[r.label], n)
        if a:
            qs = np.percentile(a, [25, 50, 75])
            area_stats = (float(np.mean(a)), float(qs[0]), float(qs[1]), float(qs[2]))
        else:
            area_stats = (None, None, None, None)
        methods[r.label] = MethodReport(
            label=r.label, hits=hits[r.label], coverage_rate=hits[r.label] / n,
            wilson_low=lo, wilson_high=hi, empty_count=empties[r.label],
            area_trials=len(a), area_mean=area_stats[0], area_q25=area_stats[1],
            area_q50=area_stats[2], area_q75=area_stats[3],
        )
    flagged = failures > 0.001 * n
    return CoverageReport(
        n_trials=n, alpha=config.alpha, methods=methods, thresholds=thresholds,
        solver_failures=failures, flagged=flagged, areas=areas,
        runtime_seconds=time.perf_counter() - t_start,
    )


def emit_boundary(region: RegionSpec, n_angles: int = 360, r_tol: float = 1e-6) -> np.ndarray:
    """Boundary polyline rows ``(theta, r, mu1, mu2)`` of a planar region.

    Raises :class:`~polyci.regions.EmptyRegionError` for empty regions (the
    CLI maps that to its empty-region exit code and an empty CSV).
    """
    mu0 = region_interior_point(region)
    return boundary_polyline(lambda mu: contains(region, mu), mu0,
                             n_angles=n_angles, r_tol=r_tol)


def boundary_csv(rows: np.ndarray) -> str:
    lines = ["theta,r,mu1,mu2"]
    for theta, r, m1, m2 in rows:
        lines.append(f"{theta:.12g},{r:.12g},{m1:.12g},{m2:.12g}")
    return "\n".join(lines) + "\n"
