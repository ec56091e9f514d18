"""Optimal band dividend strategies in the Cramér-Lundberg model."""

from divbands.deficit import Tables, build_tables
from divbands.errors import DivBandsError
from divbands.es import EsConfig, es_optimize, escalate_bands
from divbands.gradient import GradientSolverConfig, partials, solve_gradient
from divbands.mc import SimResult, mc_estimate
from divbands.model import BandStrategy, ClaimDistribution, ModelParams
from divbands.scale import build_scale_table, find_b0
from divbands.value import ValueFunction, hjb_check, value_band

__all__ = [
    "BandStrategy", "ClaimDistribution", "DivBandsError", "EsConfig", "GradientSolverConfig",
    "ModelParams", "SimResult", "Tables", "ValueFunction", "build_scale_table", "build_tables",
    "es_optimize", "escalate_bands", "find_b0", "hjb_check", "mc_estimate", "partials",
    "solve_gradient", "value_band",
]
