"""Encrypted-vs-plaintext scoring cost across batch sizes and projection dimensions."""

from __future__ import annotations

import statistics

import numpy as np

from ..ckks import CkksParams, default_params, keygen
from ..influence import (
    Activation,
    Dataset,
    Head,
    Model,
    build_projection,
    estimate_kfac,
    preconditioned_eval_vector,
)
from ..protocol import BuyerConfig, InProcessTransport, SellerConfig, plaintext_scores, run_session

TIMING_COLUMNS = ["mode", "k", "batch_size", "repeats", "plaintext_seconds", "encrypted_seconds",
                  "per_sample_plaintext", "per_sample_encrypted", "per_sample_overhead"]


def mlp_ranks(k: int, d_in: int, hidden: int):
    """Split k = k_in * k_out on the first layer of a one-hidden-layer MLP."""
    for k_out in range(1, hidden + 1):
        if k % k_out == 0 and k // k_out <= d_in + 1:
            return [(k // k_out, k_out), (0, 0)]
    raise ValueError(f"k={k} does not factor into first-layer ranks for d_in={d_in}, hidden={hidden}")


def synthetic_mlp(seed: int, d_in: int = 64, hidden: int = 64, n: int = 2000):
    """An initialised (untrained) 2-layer MLP and Gaussian data it labels."""
    rng = np.random.default_rng(seed)
    model = Model.init([d_in, hidden, 1], Activation.RELU, Head.BINARY_LOGISTIC, seed=seed, l2=0.01)
    X = rng.standard_normal((n, d_in))
    y = (rng.random(n) < model.predict_proba(X).ravel()).astype(float)
    return model, Dataset(X, y)


def bench_overhead(ks=(384,), batch_sizes=(10, 100, 1000), mode: str = "encrypted",
                   params: CkksParams | None = None, seed: int = 0, min_samples: int = 100):
    """One row per (k, batch size).

    Batches smaller than ``min_samples`` are repeated and the median
    per-sample time is reported, so small batches are not dominated by
    timer granularity.
    """
    if mode not in ("plaintext", "encrypted"):
        raise ValueError(f"unknown mode {mode!r}")
    params = params or default_params()
    model, data = synthetic_mlp(seed)
    kfac = estimate_kfac(model, data[:1000])
    pool = data[1000:]
    eval_set = data[:200]
    keys = keygen(params, seed) if mode == "encrypted" else None
    rows = []
    for k in ks:
        proj = build_projection(kfac, mlp_ranks(k, model.layers[0].d_in, model.layers[0].d_out))
        v = preconditioned_eval_vector(model, eval_set, proj, kfac)
        if mode == "encrypted":
            _session(model, proj, v, keys, pool[:2], seed)  # warm-up
        for b in batch_sizes:
            if b > len(pool):
                raise ValueError(f"batch size {b} exceeds the candidate pool ({len(pool)})")
            cands = pool[:b]
            repeats = max(1, -(-min_samples // b))
            plain, enc = [], []
            for r in range(repeats):
                _, secs = plaintext_scores(model, proj, cands, v)
                plain.append(secs / b)
                if mode == "encrypted":
                    t = _session(model, proj, v, keys, cands, seed + r)
                    enc.append(t.per_sample_encrypted)
            ps_plain = statistics.median(plain)
            ps_enc = statistics.median(enc) if enc else 0.0
            rows.append({
                "mode": mode, "k": k, "batch_size": b, "repeats": repeats,
                "plaintext_seconds": ps_plain * b, "encrypted_seconds": ps_enc * b,
                "per_sample_plaintext": ps_plain, "per_sample_encrypted": ps_enc,
                "per_sample_overhead": max(ps_enc - ps_plain, 0.0) if mode == "encrypted" else 0.0,
            })
    return rows


def _session(model, proj, v, keys, cands, seed):
    res = run_session(InProcessTransport(),
                      BuyerConfig(model, None, proj, keys.params, seed=seed, keys=keys, eval_vector=v),
                      SellerConfig(model, proj, cands, seed=seed + 1))
    if res.aborted:
        raise RuntimeError(res.error)
    return res.timings


def per_sample_spread(rows, k=None) -> float:
    """(max - min) / min of the per-sample encrypted time across batch sizes."""
    t = [r["per_sample_encrypted"] for r in rows if k is None or r["k"] == k]
    return (max(t) - min(t)) / min(t)
