"""
LangGraph experiment pipelines.

This module exports graph builders for the two multi-step studies:
- rate study: Isaacs reference, then one regularized solve per K
- lift check: reduction identity, fiber invariance, equator band and coupling checks
"""

from .lift_check import create_graph as create_lift_check_graph
from .lift_check import lift_check
from .rate_study import create_graph as create_rate_study_graph
from .rate_study import rate_study

__all__ = [
    "create_lift_check_graph",
    "create_rate_study_graph",
    "lift_check",
    "rate_study",
]
