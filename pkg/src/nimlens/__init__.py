"""Simulation of lossy negative-index annular media on a disk.

A shell with coefficient -1+i*delta surrounded by ordinary material cancels
its geometric image under Kelvin inversion: sources outside the image
annulus see free space as the loss vanishes, while sources inside it can
drive the solution's energy to infinity.  This package solves the lossy
problem exactly per angular mode (quasistatic, radial), by finite elements
in general, constructs the predicted zero-loss limit field, classifies
sources, and orchestrates the desk-scale experiments from a CLI.
"""

from .geometry import (
    LossCoefficient,
    MediaSpec,
    RadialLayout,
    Region,
    RingSource,
    SourceSpec,
    build_radial_layout,
    classify_region,
    eval_s_delta,
    isotropic_media,
)
from .spectral import (
    CompatibilityVerdict,
    LimitTriple,
    ModeSolution,
    RadialField,
    assemble_NI,
    compatibility_test,
    free_space_mode,
    mode_h1_norm,
    solve_mode_delta,
    solve_mode_limit,
)
from .transforms import (
    ComplementarityReport,
    Diffeomorphism,
    check_reflecting_complementary,
    compose,
    dilation,
    identity,
    kelvin,
    push_forward_matrix,
    push_forward_scalar,
    verify_change_of_variables,
)

__version__ = "0.1.0"
