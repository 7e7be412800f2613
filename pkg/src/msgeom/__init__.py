"""Multiscale geometric-measure analysis toolkit.

Computes scale-normalized best-plane displacements of weighted point sets,
verifies summed-displacement hypotheses, reconstructs near-flat sets by an
iterative interpolation construction with measured distortion and k-measure
bounds, runs packing verifiers on disjoint ball families, and probes the
quantitative strata of analytic energy fields.
"""

from .geometry import (
    AffinePlane,
    AtomicMeasure,
    Ball,
    SpatialIndex,
    grassmann_distance,
    hausdorff_distance,
    plane_distance,
    project,
)
from .moments import (
    DisplacementConfig,
    DyadicProfile,
    MomentSpectrum,
    best_affine_plane,
    center_of_mass,
    displacement,
    dyadic_profile,
    effective_spanning_points,
    second_moment_spectrum,
    summability_check,
    unit_ball_volume,
)

__all__ = [
    "AffinePlane",
    "AtomicMeasure",
    "Ball",
    "SpatialIndex",
    "grassmann_distance",
    "hausdorff_distance",
    "plane_distance",
    "project",
    "DisplacementConfig",
    "DyadicProfile",
    "MomentSpectrum",
    "best_affine_plane",
    "center_of_mass",
    "displacement",
    "dyadic_profile",
    "effective_spanning_points",
    "second_moment_spectrum",
    "summability_check",
    "unit_ball_volume",
]

__version__ = "0.1.0"
