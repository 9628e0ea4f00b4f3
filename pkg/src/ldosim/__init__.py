"""Modified nodal analysis simulator with a Level-1 MOSFET model and an LDO benchmark."""

from ._kernels import BACKEND
from .analyses import run_ac, run_dc_sweep, run_op, run_tran
from .engine import NewtonConfig, OperatingPoint, newton_solve
from .errors import LdosimError, NetlistError, NonConvergence, SingularMatrix
from .netlist import Circuit, parse_netlist, parse_value, print_netlist, read_netlist

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Circuit", "LdosimError", "NetlistError", "NewtonConfig", "NonConvergence",
    "OperatingPoint", "SingularMatrix", "newton_solve", "parse_netlist", "parse_value",
    "print_netlist", "read_netlist", "run_ac", "run_dc_sweep", "run_op", "run_tran",
]
