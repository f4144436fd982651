"""Localized system level synthesis: sparsity patterns, FIR responses, LLQR/LLQG synthesis
and runtime controller implementations."""

from .fir import FirMatrix, SystemResponse, dare_solve, inverse_stability, lqr_h2_cost
from .of_synth import (AdmmConfig, OfProblem, admm_solve, h2_joint_reg_solve, llqg_solve,
                       mixed_h2_l1_solve, of_locality)
from .plant import PlantModel, build_chain, load_fixture, swing_chain, swing_mesh
from .policy import NumericPolicy
from .runtime import OfController, SfController, perturbation_maps, simulate
from .sf_synth import SfProblem, is_localizable, llqr_solve, t_step_controllable
from .sparsity import ConstraintSpace, SparsityPattern, build_dT_localized

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig", "ConstraintSpace", "FirMatrix", "NumericPolicy", "OfController", "OfProblem",
    "PlantModel", "SfController", "SfProblem", "SparsityPattern", "SystemResponse",
    "admm_solve", "build_chain", "build_dT_localized", "dare_solve", "h2_joint_reg_solve",
    "inverse_stability", "is_localizable", "llqg_solve", "llqr_solve", "load_fixture",
    "lqr_h2_cost", "mixed_h2_l1_solve", "of_locality", "perturbation_maps", "simulate",
    "swing_chain", "swing_mesh", "t_step_controllable",
]
