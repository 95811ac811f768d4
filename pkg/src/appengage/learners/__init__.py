"""Classical learners behind a uniform train / predict_proba interface."""

from .base import (
    Learner,
    ModelError,
    SchemaMismatch,
    TrainedModel,
    canonical_order,
    model_from_json,
    predict_proba,
    train,
)
from .forest import RandomForest, mdi_importance
from .knn import KNearestNeighbors
from .logreg import LogisticRegression, gradient_check, logreg_loss_grad, softmax, standardized_coefficients
from .residual import ResidualRegressor, fit_residual, predict_residual
from .svm import LinearSVM

__all__ = [
    "Learner", "ModelError", "SchemaMismatch", "TrainedModel", "canonical_order", "model_from_json",
    "predict_proba", "train", "RandomForest", "mdi_importance", "KNearestNeighbors", "LogisticRegression",
    "gradient_check", "logreg_loss_grad", "softmax", "standardized_coefficients", "ResidualRegressor",
    "fit_residual", "predict_residual", "LinearSVM",
]
