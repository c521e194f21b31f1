"""Gaussian mixture EM with partial E-steps (EM-Tau, EM*, EM-Lazy)."""

from .em_engine import FitConfig, e_step, f_function, fit, initialize, m_step, observed_loglik
from .model import Dataset, MixtureModel, RunReport, Termination, hard_assign
from .policies import FullPolicy, LazyPolicy, StarPolicy, TauPolicy, make_policy

__all__ = [
    "Dataset",
    "FitConfig",
    "FullPolicy",
    "LazyPolicy",
    "MixtureModel",
    "RunReport",
    "StarPolicy",
    "TauPolicy",
    "Termination",
    "e_step",
    "f_function",
    "fit",
    "hard_assign",
    "initialize",
    "m_step",
    "make_policy",
    "observed_loglik",
]

__version__ = "0.1.0"
