"""Fake exponential Brownian motion: mixture construction, embedding and verification."""

from .embed import barycentre_lognormal, check_mrl_order, madan_yor_paths
from .laws import BrownianLaw, DiffusionLaw, ExponentialBMLaw, bs_call, get_law
from .mixture import FakeSpec, ResidualLaw, local_vol_eta, residual_density, validate_spec
from .simulate import PathGrid, RNGConfig, sample_fake, sample_g, sample_h, sample_x_exact
from .timechange import make_timechange, make_timechange_bm, make_timechange_ebm
from .verify import VerificationConfig, full_verification, solve_dupire

__version__ = "0.1.0"

__all__ = [
    "BrownianLaw",
    "DiffusionLaw",
    "ExponentialBMLaw",
    "FakeSpec",
    "PathGrid",
    "RNGConfig",
    "ResidualLaw",
    "VerificationConfig",
    "barycentre_lognormal",
    "bs_call",
    "check_mrl_order",
    "full_verification",
    "get_law",
    "local_vol_eta",
    "madan_yor_paths",
    "make_timechange",
    "make_timechange_bm",
    "make_timechange_ebm",
    "residual_density",
    "sample_fake",
    "sample_g",
    "sample_h",
    "sample_x_exact",
    "solve_dupire",
    "validate_spec",
]
