"""Run a configured experiment end to end and summarize the final particles by plan."""
from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .. import domains
from ..errors import ConfigError, DimensionError, IterationError, ParameterError
from ..svgd import ParticleSet, RunTrace, run_inference
from . import io

log = logging.getLogger(__name__)


@dataclass
class ModeBucket:
    plan: str
    count: int
    best_cost: float
    best_particle: int
    solved: bool


@dataclass
class RunResult:
    config: object
    domain: object
    layout: object
    traces: list = field(default_factory=list)  # [(stage name, RunTrace)]
    final: ParticleSet = None
    costs: np.ndarray = None  # surrogate cost per particle
    plan_costs: np.ndarray = None  # cost of each particle's discrete plan
    plans: list = field(default_factory=list)
    modes: list = field(default_factory=list)
    error: str = None

    @property
    def ok(self):
        return self.error is None

    def solved_plans(self):
        return sorted(b.plan for b in self.modes if b.solved)


def cluster_modes(theta, costs, plan_of, solved_fn=None, threshold=None):
    """Group particles by discrete plan.

    A bucket is solved when ``solved_fn`` accepts its lowest-cost particle,
    or, without ``solved_fn``, when that cost is below ``threshold``.
    Buckets are ordered by count (descending), then plan.
    """
    theta = np.atleast_2d(theta)
    costs = np.asarray(costs, dtype=np.float64)
    if len(costs) != len(theta):
        raise DimensionError("need one cost per particle")
    if solved_fn is None and (threshold is None or not np.isfinite(threshold)):
        raise ParameterError("cluster_modes needs a finite threshold or a solved predicate")
    groups = {}
    for i, th in enumerate(theta):
        groups.setdefault(plan_of(th), []).append(i)
    out = []
    for plan, idx in groups.items():
        best = min(idx, key=lambda i: (costs[i], i))
        ok = solved_fn(theta[best]) if solved_fn is not None else costs[best] < threshold
        out.append(ModeBucket(plan, len(idx), float(costs[best]), int(best), bool(ok)))
    out.sort(key=lambda b: (-b.count, b.plan))
    return out


def _initial(domain, cfg):
    if cfg.init_low is None:
        low, high = domain.init_bounds()
    else:
        low, high = np.asarray(cfg.init_low, float), np.asarray(cfg.init_high, float)
        if low.shape != (domain.layout.size,) or high.shape != low.shape:
            raise ConfigError(f"init ranges need {domain.layout.size} entries", "/init")
        if np.any(high < low):
            raise ConfigError("init low exceeds high", "/init")
    return ParticleSet.uniform(domain.layout, cfg.n, low, high, cfg.seed)


def build_domain(cfg):
    try:
        return domains.build(cfg.domain, cfg.spec)
    except (ParameterError, DimensionError, TypeError) as exc:
        raise ConfigError(str(exc), "/spec") from exc


def run_experiment(cfg, workers=None, output=None, domain=None):
    """Initialize, infer stage by stage, cluster and (optionally) write outputs.

    ``output`` overrides ``cfg.output``; an empty directory name skips
    writing. An inference failure is recorded in ``result.error`` and the
    partial trace is still written.
    """
    domain = domain or build_domain(cfg)
    if cfg.solved_threshold is not None:
        domain.solved_threshold = cfg.solved_threshold
    inference = dataclasses.replace(cfg.inference, workers=workers)
    pset = _initial(domain, cfg)
    result = RunResult(cfg, domain, domain.layout)
    try:
        for stage in domain.stages():
            log.info("%s: stage %s, %d particles", domain.name, stage.name, len(pset))
            pset, trace = run_inference(pset, stage.model, stage.kernel or domain.kernel, inference)
            result.traces.append((stage.name, trace))
    except IterationError as exc:
        result.traces.append((stage.name, getattr(exc, "trace", RunTrace())))
        result.error = str(exc)
        log.error("inference aborted: %s", exc)
    result.final = pset
    if result.ok:
        result.costs = domain.costs(pset.theta, inference.chunk_size, workers)
        result.plan_costs = domain.plan_costs(pset.theta, inference.chunk_size, workers)
        result.plans = [domain.plan(th) for th in pset.theta]
        result.modes = cluster_modes(pset.theta, result.plan_costs, domain.plan, domain.solved)
    else:
        result.costs = np.full(len(pset), np.nan)
        result.plan_costs = result.costs.copy()
        result.plans = [""] * len(pset)
    out = cfg.output if output is None else output
    if out:
        os.makedirs(out, exist_ok=True)
        io.export_trace(result, out)
    return result
