"""Per-point valuation signals and the additive group value.

``influence_score`` is the predicted change in mean evaluation loss from
upweighting a point; negative means the point helps. The utility of a point
is the negated score, so larger utility is better.
"""

from __future__ import annotations

import numpy as np

from .kfac import EvalVector
from .model import DimensionMismatch


class ZeroVector(ValueError):
    pass


def influence_score(v_eval, g) -> float:
    """s = -v_eval . g."""
    v = v_eval.values if isinstance(v_eval, EvalVector) else np.asarray(v_eval, dtype=float)
    g = np.asarray(g, dtype=float)
    if v.shape != g.shape:
        raise DimensionMismatch(f"eval vector has dim {v.size}, gradient has {g.size}")
    return -float(v @ g)


def influence_scores(v_eval, G: np.ndarray) -> np.ndarray:
    v = v_eval.values if isinstance(v_eval, EvalVector) else np.asarray(v_eval, dtype=float)
    G = np.atleast_2d(G)
    if G.shape[1] != v.size:
        raise DimensionMismatch(f"eval vector has dim {v.size}, gradients have {G.shape[1]}")
    return -(G @ v)


def utility(score):
    """Utility = -score: positive when acquiring the point lowers evaluation loss."""
    return -np.asarray(score, dtype=float) if np.ndim(score) else -float(score)


def cosine_score(g_seller, g_eval) -> float:
    a = np.asarray(g_seller, dtype=float)
    b = np.asarray(g_eval, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch("gradient dimensions differ")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_scores(G: np.ndarray, g_eval) -> np.ndarray:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    b = np.asarray(g_eval, dtype=float)
    norms = np.linalg.norm(G, axis=1)
    nb = np.linalg.norm(b)
    if nb == 0 or np.any(norms == 0):
        raise ZeroVector("cosine of a zero vector is undefined")
    return np.clip(G @ b / (norms * nb), -1.0, 1.0)


def random_score(seed: int, i: int, replicate: int = 0) -> float:
    """Standard normal draw keyed by (seed, replicate, i)."""
    rng = np.random.default_rng([int(seed), int(replicate), int(i)])
    return float(rng.standard_normal())


def random_scores(seed: int, n: int, replicate: int = 0) -> np.ndarray:
    return np.array([random_score(seed, i, replicate) for i in range(n)])


def group_value(scores, subset) -> float:
    """Sum of member utilities (first-order value of acquiring the subset)."""
    scores = np.asarray(scores, dtype=float)
    idx = list(subset)
    if idx and (min(idx) < -len(scores) or max(idx) >= len(scores)):
        raise IndexError("subset index out of range")
    return float(np.sum(scores[idx])) if idx else 0.0


def greedy_top_k(scores, k: int) -> list[int]:
    """Indices of the k highest utilities, ties to the lower index."""
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [int(i) for i in order[:k]]
