"""Clearing, bailout and default-minimisation tools for interbank networks."""

from .errors import *  # noqa: F401,F403
from .netmodel import (ClearingResult, FinancialNetwork, InjectionPlan, build_network,
                       default_mask, weighted_unpaid)

__version__ = "0.1.0"
