"""Small dense networks in numpy with per-example backprop factors."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, log_softmax, softmax


class Activation(str, enum.Enum):
    RELU = "ReLU"
    IDENTITY = "Identity"
    SIGMOID = "Sigmoid"


class Head(str, enum.Enum):
    BINARY_LOGISTIC = "BinaryLogistic"
    SOFTMAX = "Softmax"
    SQUARED_ERROR = "SquaredError"


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    label: object


@dataclass(frozen=True, eq=False)
class Dataset:
    """Examples stored column-wise: X is (n, d), y is (n,) or (n, outputs)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", np.asarray(self.y))
        if len(self.y) != len(X):
            raise DimensionMismatch(f"{len(X)} feature rows but {len(self.y)} labels")

    def __len__(self):
        return len(self.X)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Example(self.X[idx], self.y[idx])
        return Dataset(self.X[idx], self.y[idx])

    def examples(self):
        return [Example(x, y) for x, y in zip(self.X, self.y)]

    @classmethod
    def from_examples(cls, examples) -> "Dataset":
        examples = list(examples)
        if not examples:
            return cls(np.zeros((0, 0)), np.zeros(0))
        return cls(np.stack([np.asarray(e.features, dtype=float) for e in examples]),
                   np.asarray([e.label for e in examples]))

    @classmethod
    def concat(cls, *parts: "Dataset") -> "Dataset":
        return cls(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]))


def as_dataset(data) -> Dataset:
    if isinstance(data, Dataset):
        return data
    if isinstance(data, Example):
        return Dataset(np.asarray(data.features, dtype=float)[None, :], np.asarray([data.label]))
    return Dataset.from_examples(data)


@dataclass(frozen=True, eq=False)
class Dense:
    W: np.ndarray  # (d_out, d_in)
    b: np.ndarray  # (d_out,)

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]


def _act(kind: Activation, z):
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.SIGMOID:
        return expit(z)
    return z


def _act_grad(kind: Activation, z, h):
    if kind is Activation.RELU:
        return (z > 0).astype(float)
    if kind is Activation.SIGMOID:
        return h * (1.0 - h)
    return np.ones_like(z)


@dataclass(frozen=True, eq=False)
class Model:
    """Feed-forward network; the activation applies to hidden layers only.

    Parameters flatten layer by layer, each as row-major W followed by b.
    """

    layers: tuple
    activation: Activation = Activation.RELU
    head: Head = Head.BINARY_LOGISTIC
    theta_hat: bool = False
    l2: float = 0.0
    _sizes: tuple = field(init=False, repr=False, default=())

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "head", Head(self.head))
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.d_out != nxt.d_in:
                raise DimensionMismatch(f"layer widths do not chain: {prev.d_out} -> {nxt.d_in}")
        if self.head is Head.BINARY_LOGISTIC and self.layers[-1].d_out != 1:
            raise DimensionMismatch("binary logistic head needs one output")
        object.__setattr__(self, "_sizes", tuple(L.W.size + L.b.size for L in self.layers))

    @classmethod
    def init(cls, sizes, activation=Activation.RELU, head=Head.BINARY_LOGISTIC, seed=0, l2=0.0):
        """Random init: Gaussian weights with variance 1/fan_in, zero bias."""
        rng = np.random.default_rng(seed)
        layers = [
            Dense(rng.standard_normal((d_out, d_in)) / np.sqrt(d_in), np.zeros(d_out))
            for d_in, d_out in zip(sizes[:-1], sizes[1:])
        ]
        return cls(tuple(layers), activation, head, False, l2)

    @property
    def input_dim(self) -> int:
        return self.layers[0].d_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].d_out

    @property
    def num_params(self) -> int:
        return sum(self._sizes)

    def layer_slices(self) -> list[slice]:
        out, start = [], 0
        for s in self._sizes:
            out.append(slice(start, start + s))
            start += s
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.concatenate([L.W.ravel(), L.b]) for L in self.layers])

    def with_params(self, theta, theta_hat: bool = False) -> "Model":
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.num_params:
            raise DimensionMismatch(f"expected {self.num_params} parameters, got {theta.size}")
        layers = []
        for L, sl in zip(self.layers, self.layer_slices()):
            chunk = theta[sl]
            nw = L.W.size
            layers.append(Dense(chunk[:nw].reshape(L.W.shape).copy(), chunk[nw:].copy()))
        return replace(self, layers=tuple(layers), theta_hat=theta_hat)

    # -- forward / backward --------------------------------------------

    def forward(self, X):
        """Return (inputs to each layer, pre-activations of each layer)."""
        h = np.atleast_2d(np.asarray(X, dtype=float))
        if h.shape[1] != self.input_dim:
            raise DimensionMismatch(f"model expects {self.input_dim} features, got {h.shape[1]}")
        inputs, pre = [], []
        last = len(self.layers) - 1
        for i, L in enumerate(self.layers):
            inputs.append(h)
            z = h @ L.W.T + L.b
            pre.append(z)
            h = z if i == last else _act(self.activation, z)
        return inputs, pre

    def logits(self, X) -> np.ndarray:
        return self.forward(X)[1][-1]

    def predict_proba(self, X) -> np.ndarray:
        z = self.logits(X)
        if self.head is Head.BINARY_LOGISTIC:
            return expit(z[:, 0])
        if self.head is Head.SOFTMAX:
            return softmax(z, axis=1)
        return z

    def _targets(self, y, n):
        y = np.asarray(y)
        if self.head is Head.SOFTMAX:
            return y.astype(int).reshape(n)
        if self.head is Head.BINARY_LOGISTIC:
            return y.astype(float).reshape(n, 1)
        return y.astype(float).reshape(n, self.output_dim)

    def head_terms(self, z, y):
        """Per-example loss, dloss/dlogits (n, C) and the loss Hessian in logits (n, C, C)."""
        n, c = z.shape
        t = self._targets(y, n)
        if self.head is Head.BINARY_LOGISTIC:
            loss = np.logaddexp(0.0, z[:, 0]) - t[:, 0] * z[:, 0]
            p = expit(z)
            return loss, p - t, (p * (1 - p))[:, :, None]
        if self.head is Head.SOFTMAX:
            ls = log_softmax(z, axis=1)
            p = np.exp(ls)
            loss = -ls[np.arange(n), t]
            d = p.copy()
            d[np.arange(n), t] -= 1.0
            lam = np.einsum("ni,ij->nij", p, np.eye(c)) - np.einsum("ni,nj->nij", p, p)
            return loss, d, lam
        r = z - t
        return 0.5 * np.sum(r * r, axis=1), r, np.broadcast_to(np.eye(c), (n, c, c))

    def losses(self, data) -> np.ndarray:
        data = as_dataset(data)
        return self.head_terms(self.logits(data.X), data.y)[0]

    def mean_loss(self, data) -> float:
        return float(np.mean(self.losses(data)))

    def risk(self, data) -> float:
        """Regularized empirical risk: mean loss + (l2/2)|theta|^2."""
        theta = self.flatten()
        return self.mean_loss(data) + 0.5 * self.l2 * float(theta @ theta)

    def backprop(self, inputs, pre, d_out):
        """Backpropagate per-example output errors; returns deltas per layer."""
        deltas = [None] * len(self.layers)
        d = d_out
        for i in range(len(self.layers) - 1, -1, -1):
            deltas[i] = d
            if i:
                h = _act(self.activation, pre[i - 1])
                d = (d @ self.layers[i].W) * _act_grad(self.activation, pre[i - 1], h)
        return deltas
