"""Weak Galerkin complete-electrode-model solver and TV-regularized EIT reconstruction."""

from .cem_forward import (
    BUMP,
    ConductivityField,
    ElectrodeModel,
    ForwardSolution,
    SolverError,
    assemble,
    convergence_study,
    default_electrodes,
    forward_map,
    solve_forward,
)
from .fista import FistaResult, fista_minimize
from .gradient import MisfitObjective, misfit_gradient, solve_adjoint
from .mesh import Mesh, MeshError, build_uniform_mesh, electrode_layout, read_mesh, write_mesh
from .recon import Experiment, add_noise, generate_data, prolong, reconstruct, synth_currents
from .tv_prox import fgp_denoise, tv_norm

__version__ = "0.1.0"
