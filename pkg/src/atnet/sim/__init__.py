"""Deterministic in-process simulation of the whole network."""

from atnet.sim.oracle import Oracle
from atnet.sim.scenario import (
    Report,
    Scenario,
    ScenarioParseError,
    load_scenario,
    parse_scenario,
    run_scenario,
)
from atnet.sim.script import generate_script
from atnet.sim.topology import Sim, SimConfig

__all__ = [
    "Oracle",
    "Report",
    "Scenario",
    "ScenarioParseError",
    "Sim",
    "SimConfig",
    "generate_script",
    "load_scenario",
    "parse_scenario",
    "run_scenario",
]
