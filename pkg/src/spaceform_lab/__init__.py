"""Finite element and geometry laboratory for mixed Robin-Dirichlet problems in space forms."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .geometry import Model, SpaceForm, SupportKind, SupportSurface
from .scenarios import Scenario, load_scenario, scenario_ids

__all__ = ["Model", "SpaceForm", "SupportKind", "SupportSurface", "Scenario", "load_scenario", "scenario_ids"]
