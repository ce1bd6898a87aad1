"""Few-shot cellular coverage KPI estimation on cell-relation graphs."""

__version__ = "0.1.0"

from .scenario import Bounds, Cell, Scenario, generate_scenario, load_scenario, save_scenario
from .radio import KpiBins, SimulationResult, simulate
from .geometry import GeomFeatures, Sector, edge_geometry, sector_area, sector_overlap
from .graph import CellGraph, EdgeAttr, build_graph, derive_edges
from .models import BackboneConfig
from .training import RunReport, TrainConfig, gain, run_pf1, run_pf2, run_sota

__all__ = [
    "Bounds", "Cell", "Scenario", "generate_scenario", "load_scenario", "save_scenario",
    "KpiBins", "SimulationResult", "simulate",
    "GeomFeatures", "Sector", "edge_geometry", "sector_area", "sector_overlap",
    "CellGraph", "EdgeAttr", "build_graph", "derive_edges",
    "BackboneConfig",
    "RunReport", "TrainConfig", "gain", "run_pf1", "run_pf2", "run_sota",
]
