"""Run configuration: a JSON document validated against a fixed schema."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields

import jsonschema

from ..domains import REGISTRY
from ..errors import ConfigError
from ..svgd import InferenceConfig

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 0}

INFERENCE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "step_size": _pos,
        "sgd_step_size": _pos,
        "svgd_iterations": _count,
        "sgd_iterations": _count,
        "convergence_window": {"type": "integer", "minimum": 2},
        "convergence_tolerance": {"type": "number", "minimum": 0},
        "gradient_clip": _pos,
        "temperature": _pos,
        "use_weights": {"type": "boolean"},
        "chunk_size": {"type": "integer", "minimum": 1},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "stamp run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["domain"],
    "properties": {
        "schema_version": {"const": 1},
        "domain": {"enum": sorted(REGISTRY)},
        "spec": {"type": "object"},
        "inference": INFERENCE_SCHEMA,
        "n": {"type": "integer", "minimum": 1},
        "seed": _count,
        "output": {"type": "string"},
        "snapshot_stride": _count,
        "solved_threshold": _pos,
        "init": {
            "type": "object",
            "additionalProperties": False,
            "required": ["low", "high"],
            "properties": {"low": {"type": "array", "items": _num},
                           "high": {"type": "array", "items": _num}},
        },
        "description": {"type": "string"},
    },
}


def _pointer(path):
    return "".join(f"/{p}" for p in path)


@dataclass
class RunConfig:
    domain: str
    spec: dict = field(default_factory=dict)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    n: int = 64
    seed: int = 0
    output: str = ""
    init_low: list = None
    init_high: list = None
    solved_threshold: float = None

    def to_dict(self):
        inf = {f.name: getattr(self.inference, f.name) for f in fields(InferenceConfig)
               if f.name not in ("workers", "snapshot_stride")}
        out = {"schema_version": 1, "domain": self.domain, "spec": self.spec, "inference": inf,
               "n": self.n, "seed": self.seed, "output": self.output,
               "snapshot_stride": self.inference.snapshot_stride}
        if self.init_low is not None:
            out["init"] = {"low": list(self.init_low), "high": list(self.init_high)}
        if self.solved_threshold is not None:
            out["solved_threshold"] = self.solved_threshold
        return out


def validate_config(doc):
    """Raise :class:`ConfigError` (with a JSON pointer) unless ``doc`` fits the schema."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _pointer(err.absolute_path))


def from_dict(doc, overrides=None):
    """Validate and build a :class:`RunConfig`.

    ``overrides`` (``seed``, ``n``, ``svgd_iterations``, ``sgd_iterations``,
    ``output``) replace the corresponding fields before validation.
    """
    doc = copy.deepcopy(doc)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key in ("svgd_iterations", "sgd_iterations"):
            doc.setdefault("inference", {})[key] = val
        else:
            doc[key] = val
    validate_config(doc)
    inf = dict(doc.get("inference", {}))
    inf["snapshot_stride"] = doc.get("snapshot_stride", 0)
    try:
        inference = InferenceConfig(**inf)
    except ValueError as exc:
        raise ConfigError(str(exc), "/inference") from exc
    init = doc.get("init")
    cfg = RunConfig(doc["domain"], doc.get("spec", {}), inference, doc.get("n", 64), doc.get("seed", 0),
                    doc.get("output", ""), init["low"] if init else None, init["high"] if init else None,
                    doc.get("solved_threshold"))
    return cfg


def load_config(path, overrides=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", "") from exc
    return from_dict(doc, overrides)
