"""Biharmonic polynomials whose zero sets contain nested loops."""

__version__ = "0.1.0"

from .scalar import Field
from .poly import (
    BiharmonicPoly,
    BumpSpec,
    HarmonicPoly,
    LayeredPoly,
    add_constant,
    bump_on_curve,
    dilate_scale,
    evaluate,
    gamma_point,
    grad,
    laplacian,
    linear_combine,
    make_bump,
)
from .nest import NestCertificate, NestOptions, build_nest, final_perturb, m_sequence, verify_certificate
from .tracer import TraceOptions, analyze

__all__ = [
    "Field",
    "BiharmonicPoly",
    "BumpSpec",
    "HarmonicPoly",
    "LayeredPoly",
    "add_constant",
    "bump_on_curve",
    "dilate_scale",
    "evaluate",
    "gamma_point",
    "grad",
    "laplacian",
    "linear_combine",
    "make_bump",
    "NestCertificate",
    "NestOptions",
    "build_nest",
    "final_perturb",
    "m_sequence",
    "verify_certificate",
    "TraceOptions",
    "analyze",
]
