"""Dynamic process networks: simulation, variational steady states, control and
structure-preserving neural ODE identification."""
from .constitutive import CapacitiveLaw, ResistiveLaw
from .control import ControllerSpec
from .dynamics import BoundaryConditions, simulate
from .io import load_document, parse_document
from .topology import Branch, Node, ProcessNetwork, build_network
from .variational import cocontent, potential, solve_steady

__version__ = "0.1.0"
