"""Per-example gradient factors, flat gradients and the Gauss-Newton Hessian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Dataset, Example, Model, as_dataset


@dataclass(frozen=True, eq=False)
class GradientFactors:
    """Per-layer (x, delta) pairs; the weight gradient of layer l is outer(delta_l, x_l)."""

    inputs: tuple  # x_l, shape (d_in,)
    deltas: tuple  # delta_l, shape (d_out,)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([np.outer(d, x).ravel(), d])
                               for x, d in zip(self.inputs, self.deltas)])


@dataclass(frozen=True, eq=False)
class BatchFactors:
    """Factors for n examples at once: inputs[l] is (n, d_in), deltas[l] is (n, d_out)."""

    inputs: tuple
    deltas: tuple

    def __len__(self):
        return len(self.inputs[0])

    def example(self, i: int) -> GradientFactors:
        return GradientFactors(tuple(x[i] for x in self.inputs), tuple(d[i] for d in self.deltas))

    def flat(self) -> np.ndarray:
        """(n, d) matrix of flat per-example gradients in canonical order."""
        blocks = []
        for x, d in zip(self.inputs, self.deltas):
            blocks.append(np.einsum("no,ni->noi", d, x).reshape(len(x), -1))
            blocks.append(d)
        return np.concatenate(blocks, axis=1)


def batch_factors(model: Model, data) -> BatchFactors:
    data = as_dataset(data)
    inputs, pre = model.forward(data.X)
    _, d_out, _ = model.head_terms(pre[-1], data.y)
    deltas = model.backprop(inputs, pre, d_out)
    return BatchFactors(tuple(inputs), tuple(deltas))


def per_example_gradient(model: Model, z: Example) -> GradientFactors:
    """Gradient factors of the unregularized loss l(z; theta)."""
    return batch_factors(model, as_dataset(z)).example(0)


def per_example_gradients(model: Model, data) -> np.ndarray:
    return batch_factors(model, data).flat()


def mean_gradient(model: Model, data) -> np.ndarray:
    return per_example_gradients(model, data).mean(axis=0)


def risk_gradient(model: Model, data) -> np.ndarray:
    return mean_gradient(model, data) + model.l2 * model.flatten()


def output_jacobian(model: Model, X) -> np.ndarray:
    """d logits / d theta for every example: shape (n, C, d)."""
    inputs, pre = model.forward(X)
    n, c = pre[-1].shape
    out = np.empty((n, c, model.num_params))
    for k in range(c):
        e = np.zeros((n, c))
        e[:, k] = 1.0
        deltas = model.backprop(inputs, pre, e)
        out[:, k, :] = BatchFactors(tuple(inputs), tuple(deltas)).flat()
    return out


def gauss_newton_hessian(model: Model, data, include_l2: bool = True) -> np.ndarray:
    """Mean of J^T Lambda J over the data (plus l2 I).

    Coincides with the exact Hessian of the regularized risk when the network
    has no hidden layer, since the loss is then convex in the logits and the
    logits are linear in the parameters.
    """
    data = as_dataset(data)
    J = output_jacobian(model, data.X)
    _, _, lam = model.head_terms(model.logits(data.X), data.y)
    LJ = np.einsum("nij,njd->nid", lam, J)
    H = np.einsum("nid,nie->de", J, LJ) / len(data)
    H = 0.5 * (H + H.T)
    if include_l2:
        H[np.diag_indices_from(H)] += model.l2
    return H


def finite_difference_gradient(model: Model, z, h: float = 1e-5) -> np.ndarray:
    """Central differences of l(z; theta); a reference for the analytic gradient."""
    data = as_dataset(z)
    theta = model.flatten()
    g = np.empty_like(theta)
    for j in range(theta.size):
        tp = theta.copy()
        tp[j] += h
        tm = theta.copy()
        tm[j] -= h
        g[j] = (model.with_params(tp).losses(data).sum() - model.with_params(tm).losses(data).sum()) / (2 * h)
    return g


__all__ = [
    "GradientFactors", "BatchFactors", "Dataset", "batch_factors", "per_example_gradient",
    "per_example_gradients", "mean_gradient", "risk_gradient", "output_jacobian",
    "gauss_newton_hessian", "finite_difference_gradient",
]
