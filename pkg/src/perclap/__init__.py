"""Laplacians on bond-percolation clusters: spectra, densities of states,
random walks and low-energy asymptotics."""
from .lattice import (BoxGeometry, ClusterDecomposition, Configuration, cluster_decomposition,
                      percolating_proxy, sample_configuration, split_seed)
from .operators import (BoundaryCondition, RestrictionScheme, SparseSymmetricOperator,
                        assemble_laplacian)
from .spectral import count_below, full_spectrum, heat_kernel_diag, smallest_eigenvalue
from .ids import IdsCurve, LaplaceCurve, estimate_ids, laplace_transform
from .walk import WalkParams, annealed_return, simulate_walk

__version__ = "0.1.0"

__all__ = [
    "BoxGeometry", "ClusterDecomposition", "Configuration", "cluster_decomposition",
    "percolating_proxy", "sample_configuration", "split_seed", "BoundaryCondition",
    "RestrictionScheme", "SparseSymmetricOperator", "assemble_laplacian", "count_below",
    "full_spectrum", "heat_kernel_diag", "smallest_eigenvalue", "IdsCurve", "LaplaceCurve",
    "estimate_ids", "laplace_transform", "WalkParams", "annealed_return", "simulate_walk",
]
