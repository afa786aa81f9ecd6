"""Stratified regression Monte Carlo for discrete-time BSDEs."""

from .metrics import MseReport, compute_mse
from .model import AnalyticSolution, BSDEProblem, Bounds, compute_bounds, make_benchmark, make_constant
from .regression import LP0, LP1, BasisSpec
from .solver import CoefficientTable, SrmdpConfig, evaluate_y, evaluate_z, load_table, save_table, solve
from .stratification import LogisticMeasure, StratGrid

__all__ = [
    "AnalyticSolution", "BSDEProblem", "BasisSpec", "Bounds", "CoefficientTable", "LP0", "LP1",
    "LogisticMeasure", "MseReport", "SrmdpConfig", "StratGrid", "compute_bounds", "compute_mse",
    "evaluate_y", "evaluate_z", "load_table", "make_benchmark", "make_constant", "save_table", "solve",
]
