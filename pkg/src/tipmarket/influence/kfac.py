"""K-FAC factors, spectral projections and the preconditioned evaluation vector.

Layer inputs are taken in homogeneous form [x, 1] so weight and bias
gradients share one Kronecker factor: the augmented gradient of a layer is
outer(delta, [x, 1]), of shape (d_out, d_in + 1).
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .exact import SingularHessian
from .gradients import BatchFactors, GradientFactors, batch_factors, gauss_newton_hessian
from .model import Model, as_dataset


class EigSolverFailure(np.linalg.LinAlgError):
    pass


def _augment(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.append(x, 1.0)
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _sorted_eigh(C: np.ndarray):
    """Eigenpairs by descending eigenvalue; each vector's largest-|entry| is positive."""
    try:
        vals, vecs = np.linalg.eigh(C)
    except np.linalg.LinAlgError as exc:
        raise EigSolverFailure(str(exc)) from exc
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(vecs))):
        raise EigSolverFailure("non-finite eigendecomposition")
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    pivots = np.argmax(np.abs(vecs), axis=0)
    signs = np.where(vecs[pivots, np.arange(vecs.shape[1])] < 0, -1.0, 1.0)
    return vals, (vecs * signs).T.copy()  # rows are eigenvectors


@dataclass(frozen=True, eq=False)
class KfacLayer:
    c_in: np.ndarray  # (d_in + 1, d_in + 1)
    c_out: np.ndarray  # (d_out, d_out)
    eig_in: tuple  # (values, row eigenvectors)
    eig_out: tuple


@dataclass(frozen=True, eq=False)
class KfacState:
    layers: tuple
    damping: float = 1e-3


def estimate_kfac(model: Model, train_set, damping: float = 1e-3) -> KfacState:
    """C_in = E[x x^T] over augmented inputs, C_out = E[delta delta^T] (empirical)."""
    data = as_dataset(train_set)
    if len(data) == 0:
        raise ValueError("K-FAC needs at least one example")
    if damping <= 0:
        raise ValueError("damping must be positive")
    bf = batch_factors(model, data)
    n = len(data)
    layers = []
    for x, d in zip(bf.inputs, bf.deltas):
        xa = _augment(x)
        c_in = xa.T @ xa / n
        c_out = d.T @ d / n
        c_in = 0.5 * (c_in + c_in.T)
        c_out = 0.5 * (c_out + c_out.T)
        layers.append(KfacLayer(c_in, c_out, _sorted_eigh(c_in), _sorted_eigh(c_out)))
    return KfacState(tuple(layers), damping)


@dataclass(frozen=True, eq=False)
class LayerProjection:
    p_in: np.ndarray  # (k_in, d_in + 1)
    p_out: np.ndarray  # (k_out, d_out)
    mu_in: np.ndarray  # eigenvalues paired with rows of p_in
    mu_out: np.ndarray

    @property
    def k(self) -> int:
        return self.p_in.shape[0] * self.p_out.shape[0]


@dataclass(frozen=True, eq=False)
class ProjectionOperator:
    layers: tuple

    @property
    def k(self) -> int:
        return sum(L.k for L in self.layers)

    def checksum(self) -> bytes:
        h = hashlib.sha256()
        for L in self.layers:
            for arr in (L.p_in, L.p_out):
                h.update(np.asarray(arr.shape, dtype="<u4").tobytes())
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.digest()

    def dense_matrix(self, model: Model) -> np.ndarray:
        """Explicit (k, d) matrix acting on canonically flattened gradients."""
        blocks = []
        for L, layer in zip(self.layers, model.layers):
            d_out, d_in = layer.W.shape
            K = np.kron(L.p_out, L.p_in)  # columns indexed o * (d_in + 1) + i
            o, i = np.divmod(np.arange(d_out * (d_in + 1)), d_in + 1)
            cols = np.where(i < d_in, o * d_in + np.minimum(i, d_in - 1), d_out * d_in + o)
            M = np.zeros((L.k, d_out * (d_in + 1)))
            M[:, cols] = K
            blocks.append(M)
        k = self.k
        out = np.zeros((k, model.num_params))
        r = 0
        for M, sl in zip(blocks, model.layer_slices()):
            out[r:r + M.shape[0], sl] = M
            r += M.shape[0]
        return out


def build_projection(kfac: KfacState, ranks) -> ProjectionOperator:
    """Top-k_in / top-k_out eigenvectors of each layer's factors.

    ``ranks`` is a (k_in, k_out) pair applied to every layer or a list with one
    pair per layer; k_in counts the bias coordinate and a zero rank drops the
    layer from the projection.
    """
    if isinstance(ranks, tuple) and len(ranks) == 2 and np.isscalar(ranks[0]):
        ranks = [ranks] * len(kfac.layers)
    if len(ranks) != len(kfac.layers):
        raise ValueError("one (k_in, k_out) pair per layer required")
    out = []
    for L, (k_in, k_out) in zip(kfac.layers, ranks):
        d_in, d_out = L.c_in.shape[0], L.c_out.shape[0]
        if not (0 <= k_in <= d_in and 0 <= k_out <= d_out):
            raise ValueError(f"ranks ({k_in}, {k_out}) exceed layer dims ({d_in}, {d_out})")
        if k_in == 0 or k_out == 0:
            k_in = k_out = 0
        mu_in, v_in = L.eig_in
        mu_out, v_out = L.eig_out
        out.append(LayerProjection(v_in[:k_in].copy(), v_out[:k_out].copy(),
                                   mu_in[:k_in].copy(), mu_out[:k_out].copy()))
    return ProjectionOperator(tuple(out))


def identity_projection(model: Model) -> ProjectionOperator:
    """Full-rank standard-basis projection (reorders the flat gradient)."""
    layers = []
    for L in model.layers:
        layers.append(LayerProjection(np.eye(L.d_in + 1), np.eye(L.d_out),
                                      np.ones(L.d_in + 1), np.ones(L.d_out)))
    return ProjectionOperator(tuple(layers))


def project_gradient(gf: GradientFactors, proj: ProjectionOperator) -> np.ndarray:
    """Concatenated P_out delta (P_in [x, 1])^T per layer, row-major."""
    parts = []
    for (x, d), L in zip(zip(gf.inputs, gf.deltas), proj.layers):
        if L.k == 0:
            continue
        if L.p_in.shape[1] != x.size + 1 or L.p_out.shape[1] != d.size:
            raise ValueError("projection does not match the model's layer widths")
        parts.append(np.outer(L.p_out @ d, L.p_in @ _augment(x)).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def project_batch(bf: BatchFactors, proj: ProjectionOperator) -> np.ndarray:
    """(n, k) projected gradients for a batch."""
    parts = []
    for x, d, L in zip(bf.inputs, bf.deltas, proj.layers):
        if L.k == 0:
            continue
        a = d @ L.p_out.T
        b = _augment(x) @ L.p_in.T
        parts.append(np.einsum("no,ni->noi", a, b).reshape(len(a), -1))
    n = len(bf)
    return np.concatenate(parts, axis=1) if parts else np.zeros((n, 0))


def projected_gradients(model: Model, data, proj: ProjectionOperator) -> np.ndarray:
    return project_batch(batch_factors(model, data), proj)


class Provenance(str, enum.Enum):
    RAW_GRADIENT = "raw_gradient_sum"
    KFAC = "kfac_preconditioned"
    EXACT = "exact_preconditioned"


@dataclass(frozen=True, eq=False)
class EvalVector:
    values: np.ndarray
    provenance: Provenance
    eval_set_size: int

    @property
    def k(self) -> int:
        return self.values.size


def kfac_precondition(g: np.ndarray, proj: ProjectionOperator, damping: float) -> np.ndarray:
    """Apply (C_out (x) C_in + damping I)^{-1} in the Kronecker eigenbasis.

    Projection rows are eigenvectors of the factors, so inside the projected
    subspace the inverse is a diagonal scaling by 1 / (mu_out mu_in + damping).
    """
    out = np.empty_like(g, dtype=float)
    r = 0
    for L in proj.layers:
        if L.k == 0:
            continue
        scale = np.outer(L.mu_out, L.mu_in).ravel() + damping
        if np.any(scale <= 0):
            raise SingularHessian("damped K-FAC curvature is not positive")
        out[r:r + L.k] = g[r:r + L.k] / scale
        r += L.k
    return out


def preconditioned_eval_vector(model: Model, eval_set, proj: ProjectionOperator,
                               kfac: KfacState | None = None, damping: float | None = None,
                               method: str = "kfac", train_set=None) -> EvalVector:
    """v_eval = H~^{-1} g~_eval with g~_eval the mean projected eval gradient.

    ``method`` is "kfac" (default), "exact" (dense projected Gauss-Newton
    Hessian of ``train_set`` plus damping) or "none" (raw mean gradient).
    """
    data = as_dataset(eval_set)
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    g = projected_gradients(model, data, proj).mean(axis=0)
    if method == "none":
        return EvalVector(g, Provenance.RAW_GRADIENT, len(data))
    if damping is None:
        damping = kfac.damping if kfac is not None else 1e-3
    if damping <= 0:
        raise ValueError("damping must be positive")
    if method == "kfac":
        # the factors model the loss curvature only; the l2 term of the risk
        # Hessian is isotropic and joins the damping
        v = kfac_precondition(g, proj, damping + model.l2)
        return EvalVector(v, Provenance.KFAC, len(data))
    if method == "exact":
        if train_set is None:
            raise ValueError("exact preconditioning needs the training set")
        P = proj.dense_matrix(model)
        Ht = P @ gauss_newton_hessian(model, train_set) @ P.T
        Ht[np.diag_indices_from(Ht)] += damping
        try:
            v = cho_solve(cho_factor(Ht, lower=True), g)
        except LinAlgError as exc:
            raise SingularHessian(str(exc)) from exc
        return EvalVector(v, Provenance.EXACT, len(data))
    raise ValueError(f"unknown preconditioning method {method!r}")
