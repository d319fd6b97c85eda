"""
Configuration loading and result writing for the isaacs-lab command line.
"""

from .config import ExperimentConfig, ProblemFile, build_problem, load_problem, load_problem_file
from .results import ResultDocument, write_csv, write_document

__all__ = [
    "ExperimentConfig",
    "ProblemFile",
    "build_problem",
    "load_problem",
    "load_problem_file",
    "ResultDocument",
    "write_csv",
    "write_document",
]
