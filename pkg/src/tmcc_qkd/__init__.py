"""Simulation and analysis of two-mode coherently correlated (TMCC) key distribution."""

__version__ = "0.1.0"

from .attacks import AttackModel, ResendLaw
from .channel import CountPair, NoiseModel, TmccSource, draw_pair, empirical_correlation
from .detection import DetectionReport, fit_test, identify_state
from .photon_statistics import (
    PhotonDistribution,
    bessel_i,
    mean_photons,
    mean_square_photons,
    poisson_pmf,
    tmcc_pmf,
    variance,
)
from .protocol import SessionConfig, SessionTranscript, error_factor, error_probability, run_session

__all__ = [
    "AttackModel",
    "ResendLaw",
    "CountPair",
    "NoiseModel",
    "TmccSource",
    "draw_pair",
    "empirical_correlation",
    "DetectionReport",
    "fit_test",
    "identify_state",
    "PhotonDistribution",
    "bessel_i",
    "mean_photons",
    "mean_square_photons",
    "poisson_pmf",
    "tmcc_pmf",
    "variance",
    "SessionConfig",
    "SessionTranscript",
    "error_factor",
    "error_probability",
    "run_session",
]
