"""
Shared state types for the experiment pipelines.
"""

from typing import Any, List, Optional, TypedDict


class BaseStudyState(TypedDict):
    """State shared by all pipelines."""

    problem: Any
    grid: Any
    reference: Any
    log: List[str]


class RateStudyState(BaseStudyState):
    """State of the K-convergence study: one regularized solve per visit of the solve node."""

    K_list: List[float]
    index: int
    rows: List[dict]
    fine_reference: Optional[Any]
    result: Optional[Any]


class LiftCheckState(BaseStudyState):
    """State of the surface-lift check: one reduction point per visit of the reduction node."""

    game: Any
    points: List[List[float]]
    index: int
    rows: List[Any]
    fiber: Optional[Any]
    band: Optional[Any]
    equator: Optional[Any]
    supermartingale: Optional[Any]
    invariance: Optional[Any]
    result: Optional[Any]


def has_more(state: BaseStudyState, items: str) -> bool:
    """True while the state's index has not run past its item list."""
    return state.get("index", 0) < len(state.get(items, []))
