"""Numerical laboratory for energy-minimizing maps into the 2-sphere.

Modules
-------
domain, fields, surface
    Masked grids, sphere-valued fields, boundary traces and surfaces.
energy
    Discrete Dirichlet energy, normalized local energies, monotonicity.
trace_norms
    Fractional trace seminorms and boundary-data families.
minimizer
    Harmonic extension, projected extension and energy descent.
singularity
    Detection, degree and audits of point singularities.
experiments, cli
    The studies and the ``hmlab`` command.
"""

from .domain import DomainGrid, build_domain
from .energy import dirichlet_energy, el_residual, monotonicity_profile, normalized_local_energy, rescale_blowup
from .fields import BoundaryTrace, SphereField, VectorField, hedgehog, restrict_trace
from .minimizer import SolverParams, harmonic_extension, minimize, project_extension, w12_distance
from .sfld import load_field, save_field
from .singularity import DetectorParams, boundary_layer_census, degree_on_sphere, detect_singularities, separation_audit
from .trace_norms import (
    SeminormParams,
    TraceFamily,
    fit_scaling_exponent,
    gagliardo_seminorm_p,
    grad_trace_norm,
    localized_seminorm_p,
    make_trace,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryTrace", "DetectorParams", "DomainGrid", "SeminormParams", "SolverParams", "SphereField",
    "TraceFamily", "VectorField", "boundary_layer_census", "build_domain", "degree_on_sphere",
    "detect_singularities", "dirichlet_energy", "el_residual", "fit_scaling_exponent", "gagliardo_seminorm_p",
    "grad_trace_norm", "harmonic_extension", "hedgehog", "load_field", "localized_seminorm_p", "make_trace",
    "minimize", "monotonicity_profile", "normalized_local_energy", "project_extension", "rescale_blowup",
    "restrict_trace", "save_field", "separation_audit", "w12_distance",
]
