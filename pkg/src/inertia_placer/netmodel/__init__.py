from .assembly import LinearSystem, PerformanceWeights, assemble_open_loop, signal_groups
from .network import (
    Bus,
    DisturbancePort,
    KronReduction,
    Line,
    Machine,
    NetworkError,
    NetworkModel,
    OperatingPoint,
    dump_network,
    equilibrium,
    kron_reduce,
    load_network,
    network_from_dict,
    network_to_dict,
)
from .nonlinear import NonlinearSystem, nonlinear_rhs

__all__ = [
    "Bus", "DisturbancePort", "KronReduction", "Line", "LinearSystem", "Machine",
    "NetworkError", "NetworkModel", "NonlinearSystem", "OperatingPoint", "PerformanceWeights",
    "assemble_open_loop", "dump_network", "equilibrium", "kron_reduce", "load_network",
    "network_from_dict", "network_to_dict", "nonlinear_rhs", "signal_groups",
]
