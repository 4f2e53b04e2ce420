"""Sum-of-squares certificates and simulation for leader-tracking consensus under switching graphs."""

from .poly import Polynomial, PolyVector, gradient, substitute_affine
from .sdp import SdpProblem, SdpSolution, SolverSettings, Status, solve
from .sos import DecisionPolynomial, GramCertificate, SosProgram
from .graph import SwitchingSchedule, TopologyGraph, reference_schedule
from .conditions import QForm, SynthesisConfig, synthesize, verify

__all__ = [
    "Polynomial",
    "PolyVector",
    "gradient",
    "substitute_affine",
    "SdpProblem",
    "SdpSolution",
    "SolverSettings",
    "Status",
    "solve",
    "DecisionPolynomial",
    "GramCertificate",
    "SosProgram",
    "SwitchingSchedule",
    "TopologyGraph",
    "reference_schedule",
    "QForm",
    "SynthesisConfig",
    "synthesize",
    "verify",
]
