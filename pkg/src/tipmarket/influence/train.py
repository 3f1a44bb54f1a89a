"""Model fitting: full-batch L-BFGS with a Newton polish, minibatch SGD, fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from .gradients import gauss_newton_hessian, risk_gradient
from .model import Activation, Dataset, Head, Model, as_dataset


class DidNotConverge(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    epochs: int = 200
    l2: float = 0.01
    seed: int = 0
    hidden: tuple = ()
    activation: Activation = Activation.RELU
    head: Head = Head.BINARY_LOGISTIC
    optimizer: str = "lbfgs"  # or "sgd"
    batch_size: int = 32
    grad_tol: float = 1e-6
    newton_steps: int = 50

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def _output_dim(head: Head, y) -> int:
    if head is Head.BINARY_LOGISTIC:
        return 1
    if head is Head.SOFTMAX:
        return int(np.max(y)) + 1
    return 1 if np.ndim(y) == 1 else y.shape[1]


def _lbfgs(model: Model, data: Dataset, maxiter: int) -> Model:
    def fun(theta):
        m = model.with_params(theta)
        return m.risk(data), risk_gradient(m, data)

    res = minimize(fun, model.flatten(), jac=True, method="L-BFGS-B",
                   options={"maxiter": maxiter, "gtol": 1e-12, "ftol": 1e-15, "maxcor": 30})
    return model.with_params(res.x)


def newton_polish(model: Model, data, tol: float, steps: int) -> Model:
    """Undamped Newton steps with backtracking on the regularized risk."""
    data = as_dataset(data)
    for _ in range(steps):
        g = risk_gradient(model, data)
        if np.linalg.norm(g) <= tol:
            break
        H = gauss_newton_hessian(model, data)
        step = np.linalg.solve(H, g)
        theta, r0, t = model.flatten(), model.risk(data), 1.0
        while t > 1e-8:
            cand = model.with_params(theta - t * step)
            if cand.risk(data) <= r0 + 1e-15 * abs(r0):
                break
            t *= 0.5
        model = cand
    return model


def _sgd(model: Model, data: Dataset, cfg: TrainConfig, epochs: int, rng, layers=None) -> Model:
    n = len(data)
    theta = model.flatten()
    mask = np.ones_like(theta)
    if layers is not None:
        mask[:] = 0.0
        for i, sl in enumerate(model.layer_slices()):
            if i in layers:
                mask[sl] = 1.0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = data[order[start:start + cfg.batch_size]]
            m = model.with_params(theta)
            theta = theta - cfg.lr * mask * risk_gradient(m, batch)
    return model.with_params(theta)


def train(dataset, config: TrainConfig | None = None) -> Model:
    """Fit a fresh model; deterministic for a fixed seed.

    Convex configurations (no hidden layer) are driven to a stationary point
    and raise DidNotConverge if the risk gradient norm stays above grad_tol.
    """
    cfg = config or TrainConfig()
    data = as_dataset(dataset)
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    sizes = (data.X.shape[1],) + tuple(cfg.hidden) + (_output_dim(Head(cfg.head), data.y),)
    model = Model.init(sizes, cfg.activation, cfg.head, seed=cfg.seed, l2=cfg.l2)
    convex = not cfg.hidden
    if cfg.optimizer == "lbfgs":
        model = _lbfgs(model, data, maxiter=max(cfg.epochs, 1) * 10)
    elif cfg.optimizer == "sgd":
        model = _sgd(model, data, cfg, cfg.epochs, np.random.default_rng(cfg.seed))
    else:
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    if convex:
        model = newton_polish(model, data, cfg.grad_tol, cfg.newton_steps)
        gnorm = float(np.linalg.norm(risk_gradient(model, data)))
        if gnorm > cfg.grad_tol:
            raise DidNotConverge(f"risk gradient norm {gnorm:.3e} above {cfg.grad_tol:.1e}")
    return replace(model, theta_hat=True)


@dataclass(frozen=True)
class FineTuneConfig:
    epochs: int = 1
    lr: float = 0.005
    batch_size: int = 10
    head_only: bool = True
    seed: int = 0


def fine_tune(model: Model, data, cfg: FineTuneConfig) -> Model:
    """Continue training on ``data`` with minibatch SGD on the regularized risk.

    With ``head_only`` only the last layer moves. Zero epochs returns the
    parameters unchanged.
    """
    data = as_dataset(data)
    layers = {len(model.layers) - 1} if cfg.head_only else None
    sgd_cfg = TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size)
    return _sgd(model, data, sgd_cfg, cfg.epochs, np.random.default_rng(cfg.seed), layers)
