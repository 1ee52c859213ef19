"""Numerical laboratory for chaos near a saddle-focus homoclinic orbit."""
from __future__ import annotations

from .errors import *  # noqa: F401,F403
from .geometry import StabilityParams, linear_flow, linear_flow_matrix
from .flow import LinearFlow, ModelFieldFlow, ScaledFlow, linearization_error
from .angles import angle_lift, exit_angle, rate_excess
from .sections import CoordinateExterior, CylinderChart, PlaneChart, ReturnMap
from .chaos import ChaosLedger, LedgerOptions, SymbolSeq, build_ledger, shadow_forward, shadow_window
from .kernels import BACKEND

__version__ = "0.1.0"
