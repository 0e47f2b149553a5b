"""Output files. Everything is JSON, JSON lines or CSV and carries a schema version.

Wall-clock times go to their own file so that the remaining artifacts of
a seeded run are byte-identical between repeats.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile

import numpy as np

from ..errors import StampError

SCHEMA_VERSION = 1


class OutputError(StampError, OSError):
    def __init__(self, message, path):
        super().__init__(f"{path}: {message}")
        self.path = path


def atomic_write_text(path, text):
    """Write to a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(d, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OutputError(str(exc), path) from exc


def _num(x):
    # repr-exact floats keep files reproducible and round-trippable
    return float(x) if np.isfinite(x) else None


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def trace_rows(result):
    """Flatten the per-stage traces into rows with a global iteration index."""
    rows, offset = [], 0
    for stage, trace in result.traces:
        for r in trace.records:
            rows.append((stage, offset + r.iteration, r.phase, r.mean_cost, r.min_cost, r.wall_time))
        offset += len(trace.records)
    return rows


def write_trace_jsonl(path, result):
    lines = [json.dumps({"schema_version": SCHEMA_VERSION, "stage": s, "iteration": i, "phase": p,
                         "mean_cost": _num(m), "min_cost": _num(mn)})
             for s, i, p, m, mn, _ in trace_rows(result)]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def write_cost_curve(path, result):
    rows = [(i, p, repr(float(m)), repr(float(mn))) for _, i, p, m, mn, _ in trace_rows(result)]
    atomic_write_text(path, _csv(["iteration", "phase", "mean_cost", "min_cost"], rows))


def write_timing(path, result):
    rows = [(s, i, f"{t:.6f}") for s, i, _, _, _, t in trace_rows(result)]
    atomic_write_text(path, _csv(["stage", "iteration", "wall_time"], rows))


def write_modes(path, buckets):
    rows = [(b.plan, b.count, repr(float(b.best_cost)), b.best_particle, int(b.solved)) for b in buckets]
    atomic_write_text(path, _csv(["plan", "count", "best_cost", "best_particle", "solved"], rows))


def particles_payload(result):
    return {
        "schema_version": SCHEMA_VERSION,
        "domain": result.config.domain,
        "spec": result.config.spec,
        "seed": result.config.seed,
        "layout": {"names": list(result.layout.names), "sizes": list(result.layout.sizes)},
        "theta": [[float(v) for v in row] for row in result.final.theta],
        "costs": [float(c) for c in result.costs],
        "plan_costs": [float(c) for c in result.plan_costs],
        "plans": list(result.plans),
    }


def write_particles(path, result):
    atomic_write_text(path, json.dumps(particles_payload(result), indent=1) + "\n")


def read_particles(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise OutputError(str(exc), path) from exc
    if data.get("schema_version") != SCHEMA_VERSION:
        raise OutputError(f"unsupported schema_version {data.get('schema_version')!r}", path)
    data["theta"] = np.asarray(data["theta"], dtype=np.float64)
    data["costs"] = np.asarray(data["costs"], dtype=np.float64)
    data["plan_costs"] = np.asarray(data.get("plan_costs", data["costs"]), dtype=np.float64)
    return data


def export_trace(result, directory):
    """Write trace.jsonl, cost_curve.csv, timing.csv, modes.csv and particles_final.json."""
    directory = os.fspath(directory)
    write_trace_jsonl(os.path.join(directory, "trace.jsonl"), result)
    write_cost_curve(os.path.join(directory, "cost_curve.csv"), result)
    write_timing(os.path.join(directory, "timing.csv"), result)
    write_modes(os.path.join(directory, "modes.csv"), result.modes)
    if result.final is not None:
        write_particles(os.path.join(directory, "particles_final.json"), result)
    return sorted(os.listdir(directory))
