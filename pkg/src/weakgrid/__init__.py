"""Small-signal voltage and synchronization stability margins for
converter-dominated grids.

The library locates the right-half-plane zeros of the grid power
transfer matrix, derives a unified static strength metric from them,
and turns it into voltage and synchronization stability margins backed
by frequency-domain sensitivity sweeps and a linear time-domain model.
"""

from .base import SystemBase
from .network import (
    Branch,
    Bus,
    ComplexDressing,
    NetworkError,
    NetworkSpec,
    OperatingPoint,
    PowerFlowError,
    PQInjection,
    PUInjection,
    Shunt,
    SusceptanceLaplacian,
    build_laplacian,
    dress,
    solve_powerflow,
)
from .zeros import NmpzResult, ScrResult, compute_gscr, compute_heq, compute_nmpz, compute_scr

__version__ = "0.1.0"

__all__ = [
    "SystemBase",
    "Bus",
    "Branch",
    "Shunt",
    "NetworkSpec",
    "NetworkError",
    "PowerFlowError",
    "SusceptanceLaplacian",
    "OperatingPoint",
    "ComplexDressing",
    "PQInjection",
    "PUInjection",
    "build_laplacian",
    "solve_powerflow",
    "dress",
    "NmpzResult",
    "ScrResult",
    "compute_heq",
    "compute_nmpz",
    "compute_scr",
    "compute_gscr",
    "__version__",
]
