"""Relevant-information feature extraction for hyperspectral images."""

__version__ = "0.1.0"

from .classify import EvalReport, KnnModel, evaluate, knn_classify, split_train_test
from .cube import HyperCube, LabelMap, Window, load_cube, load_labels, save_cube, save_labels
from .errors import CubeFormatError, DomainError, NumericalError, SolverError
from .itl import (
    cross_information_potential,
    cs_divergence,
    gaussian_kernel,
    information_potential,
    pri_objective,
    renyi_quadratic_entropy,
)
from .pipeline import PipelineConfig, characterize_pixel, fit_regularized_lda, run_pipeline
from .solver import Init, PriConfig, fixed_point_step, objective_gradient, pri_solve

__all__ = [
    "CubeFormatError",
    "DomainError",
    "EvalReport",
    "HyperCube",
    "Init",
    "KnnModel",
    "LabelMap",
    "NumericalError",
    "PipelineConfig",
    "PriConfig",
    "SolverError",
    "Window",
    "characterize_pixel",
    "cross_information_potential",
    "cs_divergence",
    "evaluate",
    "fit_regularized_lda",
    "fixed_point_step",
    "gaussian_kernel",
    "information_potential",
    "knn_classify",
    "load_cube",
    "load_labels",
    "objective_gradient",
    "pri_objective",
    "pri_solve",
    "renyi_quadratic_entropy",
    "run_pipeline",
    "save_cube",
    "save_labels",
    "split_train_test",
]
