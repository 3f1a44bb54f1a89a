"""Dense influence computations and re-optimization oracles for small models."""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .gradients import gauss_newton_hessian, mean_gradient, per_example_gradients, risk_gradient
from .model import Dataset, Model, as_dataset

MAX_DENSE_PARAMS = 2000


class SingularHessian(np.linalg.LinAlgError):
    pass


def damped_hessian_factor(model: Model, train_set, damping: float):
    if model.num_params > MAX_DENSE_PARAMS:
        raise ValueError(f"{model.num_params} parameters is too many for a dense Hessian")
    if damping < 0:
        raise ValueError("damping must be non-negative")
    H = gauss_newton_hessian(model, train_set)
    H[np.diag_indices_from(H)] += damping
    try:
        return cho_factor(H, lower=True)
    except LinAlgError as exc:
        raise SingularHessian(f"damped Hessian is not positive definite: {exc}") from exc


def exact_influence(model: Model, train_set, z_s, z_eval, damping: float = 0.0) -> float:
    """-grad l(z_eval)^T (H + damping I)^{-1} grad l(z_s), H the risk Hessian.

    Negative values mean upweighting z_s lowers the loss at z_eval. For models
    with hidden layers H is the Gauss-Newton matrix.
    """
    fac = damped_hessian_factor(model, train_set, damping)
    g_s = per_example_gradients(model, z_s)[0]
    g_e = per_example_gradients(model, z_eval)[0]
    return -float(g_e @ cho_solve(fac, g_s))


def influence_matrix(model: Model, train_set, cand, evals, damping: float = 0.0) -> np.ndarray:
    """I[i, j] for every candidate i and evaluation point j."""
    fac = damped_hessian_factor(model, train_set, damping)
    gs = per_example_gradients(model, cand)
    ge = per_example_gradients(model, evals)
    return -(gs @ cho_solve(fac, ge.T))


# -- oracles ---------------------------------------------------------------


def fd_hessian(fun_grad, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Symmetrized central-difference Jacobian of a gradient function."""
    d = theta.size
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        H[:, j] = (fun_grad(theta + e) - fun_grad(theta - e)) / (2 * h)
    return 0.5 * (H + H.T)


def reoptimize(model: Model, train_set, extra=None, weight: float = 0.0,
               tol: float = 1e-13, max_iter: int = 50) -> Model:
    """Minimize R_n(theta) + weight * sum_{z in extra} l(z; theta) from theta_hat.

    Newton iterations on a finite-difference Hessian of the analytic gradient;
    deliberately independent of the Gauss-Newton code path.
    """
    train_set = as_dataset(train_set)
    extra = as_dataset(extra) if extra is not None and weight != 0.0 else None

    def grad(theta):
        m = model.with_params(theta)
        g = risk_gradient(m, train_set)
        if extra is not None:
            g = g + weight * per_example_gradients(m, extra).sum(axis=0)
        return g

    theta = model.flatten()
    for _ in range(max_iter):
        g = grad(theta)
        if np.linalg.norm(g) <= tol:
            break
        theta = theta - np.linalg.solve(fd_hessian(grad, theta), g)
    return model.with_params(theta)


def upweight_derivative(model: Model, train_set, z_s, z_eval, eps: float = 1e-3) -> float:
    """d l(z_eval; theta_eps) / d eps at 0 by central differences of re-optimized models."""
    plus = reoptimize(model, train_set, z_s, eps)
    minus = reoptimize(model, train_set, z_s, -eps)
    return float((plus.losses(z_eval)[0] - minus.losses(z_eval)[0]) / (2 * eps))


def retrain_loss_delta(model: Model, train_set, subset, eval_set, weight: float | None = None) -> float:
    """L_eval(theta_hat) - L_eval(theta_new) after adding ``subset`` at ``weight`` (default 1/n)."""
    train_set = as_dataset(train_set)
    w = 1.0 / len(train_set) if weight is None else weight
    new = reoptimize(model, train_set, subset, w)
    return model.mean_loss(eval_set) - new.mean_loss(eval_set)


def mean_eval_gradient(model: Model, eval_set) -> np.ndarray:
    return mean_gradient(model, eval_set)


__all__ = [
    "SingularHessian", "exact_influence", "influence_matrix", "damped_hessian_factor",
    "fd_hessian", "reoptimize", "upweight_derivative", "retrain_loss_delta", "Dataset",
]
