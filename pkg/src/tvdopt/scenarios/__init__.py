"""
Problem definitions: least-squares tracking and formation waypoints.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from ..netgraph import NetworkModel
from . import least_squares, waypoint
from .base import Scenario
from .least_squares import (LeastSquaresConfig, LeastSquaresNode, LeastSquaresScenario,
                            ls_advance, ls_gradient)
from .waypoint import (WaypointConfig, WaypointNode, WaypointScenario, wp_advance, wp_gradient,
                       wp_stepsizes)

CONFIGS = {"least_squares": LeastSquaresConfig, "waypoint": WaypointConfig}


def make_config(tag: str, params: dict | None = None):
    """Scenario configuration from a tag and a dict of overrides."""
    if tag not in CONFIGS:
        raise ValueError(f"unknown scenario {tag!r}; choose from {sorted(CONFIGS)}")
    cls = CONFIGS[tag]
    params = dict(params or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(params) - names)
    if unknown:
        raise ValueError(f"unknown {tag} parameters: {unknown}")
    if "support" in params:
        params["support"] = tuple(params["support"])
    cfg = cls(**params)
    cfg.validate()
    return cfg


def make_topology(cfg, rng: np.random.Generator) -> NetworkModel:
    """The fixed edge set, drawn once per experiment."""
    if isinstance(cfg, LeastSquaresConfig):
        return least_squares.build_topology(cfg, rng)
    return waypoint.build_topology(cfg)


def make_scenario(cfg, model: NetworkModel, rng: np.random.Generator) -> Scenario:
    if isinstance(cfg, LeastSquaresConfig):
        return LeastSquaresScenario(cfg, model, rng)
    return WaypointScenario(cfg, model, rng)


__all__ = [
    "Scenario", "LeastSquaresConfig", "LeastSquaresNode", "LeastSquaresScenario", "ls_advance",
    "ls_gradient", "WaypointConfig", "WaypointNode", "WaypointScenario", "wp_advance",
    "wp_gradient", "wp_stepsizes", "make_config", "make_topology", "make_scenario", "CONFIGS",
]
