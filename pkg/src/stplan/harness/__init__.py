"""Deterministic simulator: scenario schema, ground-truth world, missions."""

from .mission import MetricsRecord, Mission, compare_planners, run_mission, sweep_seeds
from .scenario import (Scenario, load_scenario, save_scenario, scenario_from_dict,
                       scenario_to_dict, empty_scenario, forest_scenario,
                       trefoil_scenario)
from .world import TrefoilMover, World

__all__ = [
    "MetricsRecord", "Mission", "Scenario", "TrefoilMover", "World",
    "compare_planners", "empty_scenario", "forest_scenario", "load_scenario",
    "run_mission", "save_scenario", "scenario_from_dict", "scenario_to_dict",
    "sweep_seeds", "trefoil_scenario",
]
