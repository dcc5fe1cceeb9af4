"""Homogenised spectral description of high-contrast periodic Maxwell composites.

Pipeline: rasterise a unit cell with one inclusion, solve the degenerate cell
problems for the effective curl-curl tensor (and its scalar stiff dual),
solve the non-local inclusion resonance problem, evaluate the matrix-valued
dispersion function, classify propagation regimes and band gaps, and validate
the homogenised roots against direct supercell eigensolves.
"""

__version__ = "0.1.0"

from .geometry import Ball, Box, Cylinder, GeometryError, MaterialCell, build_indicator, rotate_cell
from .grid_ops import StaggeredField
from .cell_problem import EffectiveTensor, assemble_A_hom, effective_tensor, solve_corrector, solve_stiff_scalar
from .resonances import ResonanceSpectrum, assemble_operators, classify_zero_mean, solve_resonances
from .gamma import GammaEvaluator, PoleProximityError, definiteness
from .dispersion import band_structure, classify_frequency, mobility_matrix, mode_frame, solve_branch
from .supercell import assemble_heterogeneous, nearest_eigenvalues, run_validation_ladder

__all__ = [
    "__version__",
    "Ball", "Box", "Cylinder", "GeometryError", "MaterialCell", "build_indicator", "rotate_cell",
    "StaggeredField",
    "EffectiveTensor", "assemble_A_hom", "effective_tensor", "solve_corrector", "solve_stiff_scalar",
    "ResonanceSpectrum", "assemble_operators", "classify_zero_mean", "solve_resonances",
    "GammaEvaluator", "PoleProximityError", "definiteness",
    "band_structure", "classify_frequency", "mobility_matrix", "mode_frame", "solve_branch",
    "assemble_heterogeneous", "nearest_eigenvalues", "run_validation_ladder",
]
