"""Q-valued functions, their push-forward currents, and expansions of mass,
excess and first variation for normal Q-fields over curved bases."""
from .qcore import QPoint
from .qfield import AnalyticSheetBundle, Domain, PAQMap
from .currents import SimplicialCurrent, boundary, push_forward, graph_current, mass
from .manifold import BaseManifold
from .variational import NormalQField

__all__ = ["QPoint", "AnalyticSheetBundle", "Domain", "PAQMap", "SimplicialCurrent", "boundary",
           "push_forward", "graph_current", "mass", "BaseManifold", "NormalQField"]
__version__ = "0.1.0"
