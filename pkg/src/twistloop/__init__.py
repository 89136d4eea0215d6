"""Topological invariants of interacting 1D lattice models.

Berry phases and Chern numbers of gapped multi-particle states computed
two independent ways: twisted boundary conditions (boundary or periodic
gauge) and multi-particle Wilson loops over center-of-mass momentum
sectors, with cross-checks tying the two together.
"""

__version__ = "0.1.0"

from .basis import (MomentumSector, OrbitClass, SectorTable, build_sector,
                    co_translate, decompose_orbits, enumerate_basis,
                    r2pi_diagonal, sector_table)
from .blocks import (BlockMatrix, build_block, build_full, get_builder,
                     twist_operator_diagonal)
from .errors import (ConfigError, ConvergenceError, DimensionOverflowError,
                     FlowClosureError, GaplessError, OverlapSingularError,
                     TwistloopError, UnwrapError)
from .model import (BoundarySpec, InteractionSpec, ModelSpec,
                    hopping_amplitude, interaction_energy, twist_phase)

__all__ = [name for name in dir() if not name.startswith("_")]
