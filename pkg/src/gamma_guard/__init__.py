"""Classify normalization scales by their role in residual networks and plan
selective L2 decay; check the underlying variance and effective learning rate
laws numerically."""

from .archspec import ArchSpec, BlockSpec, StageSpec, StemSpec, build_canonical, parse_arch, serialize
from .classify import DecayPolicy, GammaRole, classify_gammas, make_plan
from .varprop import VarianceProfile, full_profile

__version__ = "0.1.0"

__all__ = [
    "ArchSpec",
    "BlockSpec",
    "StageSpec",
    "StemSpec",
    "build_canonical",
    "parse_arch",
    "serialize",
    "DecayPolicy",
    "GammaRole",
    "classify_gammas",
    "make_plan",
    "VarianceProfile",
    "full_profile",
]
