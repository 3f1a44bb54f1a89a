"""Plaintext influence machinery: models, gradients, K-FAC projections, scores."""

from .exact import (
    SingularHessian,
    exact_influence,
    influence_matrix,
    reoptimize,
    retrain_loss_delta,
    upweight_derivative,
)
from .gradients import (
    BatchFactors,
    GradientFactors,
    batch_factors,
    finite_difference_gradient,
    gauss_newton_hessian,
    per_example_gradient,
    per_example_gradients,
)
from .kfac import (
    EigSolverFailure,
    EvalVector,
    KfacState,
    ProjectionOperator,
    Provenance,
    build_projection,
    estimate_kfac,
    identity_projection,
    preconditioned_eval_vector,
    project_batch,
    project_gradient,
    projected_gradients,
)
from .model import Activation, Dataset, Dense, DimensionMismatch, Example, Head, Model
from .scores import (
    ZeroVector,
    cosine_score,
    cosine_scores,
    group_value,
    greedy_top_k,
    influence_score,
    influence_scores,
    random_score,
    random_scores,
    utility,
)
from .train import DidNotConverge, FineTuneConfig, TrainConfig, fine_tune, train

__all__ = [name for name in dir() if not name.startswith("_")]
