from music.sim.battery import Battery, BatteryModel
from music.sim.clock import VirtualClock, WallClock
from music.sim.fleet import FleetReport, NodeReport, Simulation, run_fleet
from music.sim.mobility import Shuttle, Static, Waypoints
from music.sim.network import MemoryNetwork
from music.sim.node import EdgeNode, EdgeNodeConfig
from music.sim.scenario import Scenario, bundled_scenarios, load_scenario, parse_scenario

__all__ = [
    "Battery", "BatteryModel", "VirtualClock", "WallClock", "FleetReport", "NodeReport",
    "Simulation", "run_fleet", "Shuttle", "Static", "Waypoints", "MemoryNetwork",
    "EdgeNode", "EdgeNodeConfig", "Scenario", "bundled_scenarios", "load_scenario",
    "parse_scenario",
]
