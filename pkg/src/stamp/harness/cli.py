"""Command line entry point ``stamp``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from .. import dmp, domains
from ..errors import ConfigError, StampError
from . import config as cfgmod
from . import io
from .gradcheck import check_domain, check_random_programs, check_rollouts
from .runner import cluster_modes, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _print_modes(buckets, out=None):
    out = out or sys.stdout
    width = max([len(b.plan) for b in buckets] + [4])
    print(f"{'plan':<{width}}  count  best_cost     solved", file=out)
    for b in buckets:
        print(f"{b.plan:<{width}}  {b.count:5d}  {b.best_cost:.6e}  {'yes' if b.solved else 'no'}", file=out)


def cmd_run(args):
    overrides = {"seed": args.seed, "n": args.n, "svgd_iterations": args.svgd_iterations,
                 "sgd_iterations": args.sgd_iterations, "output": args.output}
    cfg = cfgmod.load_config(args.config, overrides)
    t0 = time.perf_counter()
    result = run_experiment(cfg, workers=args.workers)
    elapsed = time.perf_counter() - t0
    if not result.ok:
        print(f"inference aborted: {result.error}", file=sys.stderr)
        if cfg.output:
            print(f"partial trace written to {cfg.output}", file=sys.stderr)
        return EXIT_RUNTIME
    _print_modes(result.modes)
    print(f"{cfg.domain}: {len(result.costs)} particles, mean cost {np.mean(result.costs):.6g}, "
          f"{len(result.solved_plans())} solved plan(s), {elapsed:.1f} s")
    if cfg.output:
        print(f"outputs in {cfg.output}")
    return EXIT_OK


def cmd_modes(args):
    data = io.read_particles(args.particles)
    try:
        domain = domains.build(data["domain"], data.get("spec", {}))
    except (StampError, TypeError) as exc:
        raise ConfigError(str(exc), "/spec") from exc
    if args.threshold is not None:
        domain.solved_threshold = args.threshold
    theta = data["theta"]
    costs = domain.plan_costs(theta) if args.reevaluate else data["plan_costs"]
    _print_modes(cluster_modes(theta, costs, domain.plan, domain.solved))
    return EXIT_OK


def cmd_gradcheck(args):
    tol = args.tolerance
    expected = args.count
    if args.domain == "programs":
        checks = check_random_programs(args.count, args.seed)
        tol = min(tol, 1e-4)
    elif args.domain == "rollouts":
        checks = check_rollouts(args.count, args.seed)
        expected = 2 * args.count  # two scenes
    else:
        checks = check_domain(domains.build(args.domain), args.count, args.seed)
    worst = 0.0
    for c in checks:
        worst = max(worst, c.rel_error)
        print(f"{c.label:<28} rel_err {c.rel_error:.3e}  {'ok' if c.passed(tol) else 'FAIL'}")
    ok = len(checks) == expected and all(c.passed(tol) for c in checks)
    print(f"{len(checks)}/{expected} checked, worst {worst:.3e}, tolerance {tol:g}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_fit_dmp(args):
    """Fit one primitive per named group of demonstrations.

    Input: ``{"dt": .., "tau": .., "n_basis": .., "primitives": {name: [positions, ...]}}``
    where each ``positions`` is a list of points.
    """
    try:
        with open(args.demos) as fh:
            doc = json.load(fh)
        dt = float(doc["dt"])
        groups = doc["primitives"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read demonstrations: {exc}", "") from exc
    tau = float(doc.get("tau", 1.0))
    n_basis = int(args.n_basis or doc.get("n_basis", 10))
    bank = dmp.DMPBank(meta={"source": str(args.demos), "dt": dt})
    for name, demos in sorted(groups.items()):
        ds = [dmp.Demonstration.from_positions(np.asarray(p, dtype=np.float64), dt) for p in demos]
        model = dmp.fit(ds, n_basis=n_basis, tau=tau, alpha=float(doc.get("alpha", 4.0)))
        bank.models[name] = model
        print(f"{name}: {len(ds)} demo(s), {n_basis} basis functions, residual {model.residual:.3e}")
    if args.out:
        bank.save(args.out)
        print(f"bank written to {args.out}")
    else:
        print(bank.to_json())
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="stamp", description="Particle-based task and motion planning experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--n", type=int, help="particle count")
    r.add_argument("--svgd-iterations", type=int)
    r.add_argument("--sgd-iterations", type=int)
    r.add_argument("--output", help="output directory (overrides the config)")
    r.add_argument("--workers", type=int, help="evaluation threads (default: STAMP_WORKERS or min(4, cpus))")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("modes", help="mode histogram of a particles_final.json")
    m.add_argument("particles")
    m.add_argument("--threshold", type=float)
    m.add_argument("--reevaluate", action="store_true", help="recompute costs instead of using stored ones")
    m.set_defaults(func=cmd_modes)

    g = sub.add_parser("gradcheck", help="autodiff vs finite differences")
    g.add_argument("domain", choices=sorted(domains.REGISTRY) + ["programs", "rollouts"])
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tolerance", type=float, default=1e-3)
    g.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("fit-dmp", help="fit movement primitives from demonstrations")
    f.add_argument("demos")
    f.add_argument("--n-basis", type=int)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit_dmp)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StampError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
