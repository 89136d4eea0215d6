"""Run configuration: TOML file parsing, CLI overrides, canonical hashing.

The configuration file is structured text with nested sections ([model],
[model.interaction], [model.boundary], [task], [output]); unknown keys
anywhere are hard errors so typos never silently change a run.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from fractions import Fraction

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .model import BoundarySpec, InteractionSpec, ModelSpec
from .solver import ManifoldRule

THREADS_ENV = "TWISTLOOP_THREADS"

TASKS = ("spectrum", "berry", "chern", "verify")
METHODS = ("tbc-boundary", "tbc-periodic", "cm-wilson", "m-matrix",
           "many-body-shortcut")

_MODEL_KEYS = {"cells", "cell_size", "statistics", "particles", "t0", "lambda",
               "b", "phi", "max_occupation"}
_INTERACTION_KEYS = {"kind", "strength"}
_BOUNDARY_KEYS = {"condition", "gauge", "theta"}
_TASK_KEYS = {"kind", "methods", "phi_steps", "theta_steps", "phi_values",
              "manifold_size", "gap_tol", "bands", "states_per_sector",
              "subtract_polarization", "plaquette", "plaquette_steps",
              "trace"}
_OUTPUT_KEYS = {"directory", "seed", "threads"}


@dataclass
class RunConfig:
    """Resolved configuration for one CLI invocation."""

    model: ModelSpec
    task: str
    methods: tuple = ("cm-wilson",)
    phi_steps: int = 60
    theta_steps: int = 48
    phi_values: tuple = ()
    manifold_size: int = 0
    gap_tol: float = 0.0
    bands: tuple = ()
    states_per_sector: int = 4
    subtract_polarization: bool = False
    plaquette: bool = False
    plaquette_steps: int = 16
    trace: bool = False
    out_dir: str = "out"
    seed: int = 0
    threads: int = 1

    def manifold_rule(self) -> ManifoldRule:
        if self.bands:
            return ManifoldRule(bands=tuple(self.bands))
        if self.gap_tol > 0:
            return ManifoldRule(gap_tol=self.gap_tol)
        return ManifoldRule(count=self.manifold_size or 1)

    def phis(self):
        if self.phi_values:
            return [float(p) for p in self.phi_values]
        return [2.0 * math.pi * i / self.phi_steps for i in range(self.phi_steps)]

    def canonical(self) -> dict:
        m = self.model
        return {
            "model": {
                "cells": m.cells, "cell_size": m.cell_size, "statistics": m.statistics,
                "particles": m.particle_count, "t0": m.t0, "lambda": m.lam,
                "b": str(m.b), "phi": m.phi, "max_occupation": m.max_occupation,
                "interaction": {"kind": m.interaction.kind, "strength": m.interaction.strength},
                "boundary": {"condition": m.boundary.condition, "gauge": m.boundary.gauge,
                             "theta": m.boundary.theta},
            },
            "task": {
                "kind": self.task, "methods": list(self.methods),
                "phi_steps": self.phi_steps, "theta_steps": self.theta_steps,
                "phi_values": list(self.phi_values), "manifold_size": self.manifold_size,
                "gap_tol": self.gap_tol, "bands": list(self.bands),
                "states_per_sector": self.states_per_sector,
                "subtract_polarization": self.subtract_polarization,
                "plaquette": self.plaquette, "plaquette_steps": self.plaquette_steps,
                "trace": self.trace,
            },
            "output": {"seed": self.seed, "threads": self.threads},
        }

    def config_hash(self) -> str:
        canon = self.canonical()
        canon["output"] = {k: v for k, v in canon["output"].items() if k != "threads"}
        blob = json.dumps(canon, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _reject_unknown(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{where}]")


def _parse_fraction(value) -> Fraction:
    if isinstance(value, str):
        try:
            return Fraction(value)
        except ValueError as exc:
            raise ConfigError(f"cannot parse rational b = {value!r}") from exc
    if isinstance(value, (int, float)):
        return Fraction(value).limit_denominator(10**6)
    raise ConfigError(f"b must be a rational like '1/3', got {value!r}")


def load_config(path, overrides: dict = None) -> RunConfig:
    """Parse a TOML run configuration, applying CLI overrides on top."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    return build_config(raw, overrides or {})


def build_config(raw: dict, overrides: dict = None) -> RunConfig:
    overrides = overrides or {}
    _reject_unknown(raw, {"model", "task", "output"}, "top level")
    model_sec = dict(raw.get("model", {}))
    inter_sec = dict(model_sec.pop("interaction", {}))
    bound_sec = dict(model_sec.pop("boundary", {}))
    task_sec = dict(raw.get("task", {}))
    out_sec = dict(raw.get("output", {}))
    _reject_unknown(model_sec, _MODEL_KEYS, "model")
    _reject_unknown(inter_sec, _INTERACTION_KEYS, "model.interaction")
    _reject_unknown(bound_sec, _BOUNDARY_KEYS, "model.boundary")
    _reject_unknown(task_sec, _TASK_KEYS, "task")
    _reject_unknown(out_sec, _OUTPUT_KEYS, "output")

    for req in ("cells", "cell_size", "statistics", "particles"):
        if req not in model_sec:
            raise ConfigError(f"missing required model key {req!r}")
    try:
        model = ModelSpec(
            cells=int(model_sec["cells"]),
            cell_size=int(model_sec["cell_size"]),
            statistics=str(model_sec["statistics"]),
            particle_count=int(model_sec["particles"]),
            t0=float(model_sec.get("t0", 1.0)),
            lam=float(model_sec.get("lambda", 0.0)),
            b=_parse_fraction(model_sec.get("b", 0)),
            phi=float(model_sec.get("phi", 0.0)),
            max_occupation=int(model_sec.get("max_occupation", 1)),
            interaction=InteractionSpec(
                kind=str(inter_sec.get("kind", "none")),
                strength=float(inter_sec.get("strength", 0.0))),
            boundary=BoundarySpec(
                condition=str(bound_sec.get("condition", "periodic")),
                gauge=str(bound_sec.get("gauge", "periodic")),
                theta=float(bound_sec.get("theta", 0.0))))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model value: {exc}") from exc

    task = overrides.get("task") or task_sec.get("kind")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {task!r}")

    def pick(key, default):
        if key in overrides and overrides[key] is not None:
            return overrides[key]
        return task_sec.get(key, default)

    methods = tuple(pick("methods", ["cm-wilson"]))
    for meth in methods:
        if meth not in METHODS:
            raise ConfigError(f"unknown method {meth!r}; choose from {METHODS}")

    env_threads = os.environ.get(THREADS_ENV)
    threads = overrides.get("threads")
    if threads is None:
        threads = out_sec.get("threads", int(env_threads) if env_threads else 1)

    cfg = RunConfig(
        model=model, task=task, methods=methods,
        phi_steps=int(pick("phi_steps", 60)),
        theta_steps=int(pick("theta_steps", 48)),
        phi_values=tuple(pick("phi_values", ())),
        manifold_size=int(pick("manifold_size", 0)),
        gap_tol=float(pick("gap_tol", 0.0)),
        bands=tuple(pick("bands", ())),
        states_per_sector=int(pick("states_per_sector", 4)),
        subtract_polarization=bool(pick("subtract_polarization", False)),
        plaquette=bool(pick("plaquette", False)),
        plaquette_steps=int(pick("plaquette_steps", 16)),
        trace=bool(pick("trace", False)),
        out_dir=str(overrides.get("out_dir") or out_sec.get("directory", "out")),
        seed=int(overrides.get("seed") if overrides.get("seed") is not None
                 else out_sec.get("seed", 0)),
        threads=int(threads))
    if cfg.phi_steps < 1 or cfg.theta_steps < 8:
        raise ConfigError("phi_steps must be >= 1 and theta_steps >= 8")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    return cfg
