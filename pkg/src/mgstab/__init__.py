"""DC microgrid simulation and stability certification for a distributed
current-sharing controller with voltage containment."""
from .control import ControllerParams, derive_gains
from .equilibrium import solve
from .grid import GridSpec
from .simulate import Scenario, integrate

__version__ = "0.1.0"

__all__ = ["ControllerParams", "GridSpec", "Scenario", "derive_gains", "integrate", "solve"]
