"""Measurement harness for the empirically calibrated test constants.

    python benchmarks/calibrate.py [--trials 1000]

Prints the observed maxima; tests freeze bounds a safety factor above them.
"""

import argparse
import time

import numpy as np

from tipmarket.ckks import decode, decrypt, default_params, encode, encrypt, he_mul, keygen, rotate_and_sum
from tipmarket.influence import (
    Activation,
    Dataset,
    TrainConfig,
    build_projection,
    estimate_kfac,
    exact_influence,
    preconditioned_eval_vector,
    train,
)


def ckks_noise(trials: int):
    params = default_params()
    keys = keygen(params, 1)
    ev = keys.eval_keys
    rng = np.random.default_rng(0)
    fresh = mul = 0.0
    for t in range(trials):
        v = rng.uniform(-1, 1, 384)
        ct = encrypt(keys.public_key, encode(v, params), seed=t)
        fresh = max(fresh, np.max(np.abs(decode(decrypt(keys.secret_key, ct), params) - v)))
        if t < trials // 10:
            w = rng.uniform(-1, 1, 384)
            cw = encrypt(keys.public_key, encode(w, params), seed=10 ** 6 + t)
            got = decode(decrypt(keys.secret_key, he_mul(ct, cw, ev)), params)
            mul = max(mul, np.max(np.abs(got - v * w)))
    print(f"fresh roundtrip max error over {trials} vectors (dim 384, |v|<=1): {fresh:.3e}")
    print(f"mul max error over {trials // 10} pairs: {mul:.3e}")
    for k in (8, 384, 4096):
        errs = []
        for t in range(20):
            a = rng.uniform(-1, 1, k)
            b = rng.uniform(-1, 1, k)
            ca = encrypt(keys.public_key, encode(a, params), seed=2 * t)
            cb = encrypt(keys.public_key, encode(b, params), seed=2 * t + 1)
            got = decode(decrypt(keys.secret_key, rotate_and_sum(he_mul(ca, cb, ev), k, ev)), params, 1)[0]
            errs.append(abs(got - a @ b) / (1 + np.linalg.norm(a) * np.linalg.norm(b)))
        print(f"inner product k={k}: max normalized error {max(errs):.3e}")


def xor_loss():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (200, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float)
    losses = []
    for seed in range(5):
        m = train(Dataset(X, y), TrainConfig(hidden=(8,), activation=Activation.RELU, l2=1e-4, seed=seed))
        losses.append(m.mean_loss(Dataset(X, y)))
    print("XOR hidden=8 training loss per seed:", np.round(losses, 4))


def kfac_cosine():
    """Reference convex config: isotropic features, moderate logistic weights."""
    out = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        d = 8
        X = rng.standard_normal((400, d))
        w = rng.standard_normal(d) * 0.5
        y = (rng.random(400) < 1 / (1 + np.exp(-(X @ w)))).astype(float)
        data = Dataset(X[:300], y[:300])
        ev = Dataset(X[300:], y[300:])
        m = train(data, TrainConfig(l2=0.01))
        kf = estimate_kfac(m, data)
        proj = build_projection(kf, [(d + 1, 1)])
        v = preconditioned_eval_vector(m, ev, proj, kf, damping=1e-3).values
        exact = preconditioned_eval_vector(m, ev, proj, method="exact", damping=1e-3, train_set=data).values
        out.append(v @ exact / np.linalg.norm(v) / np.linalg.norm(exact))
    print("K-FAC vs exact cosine, reference config:", np.round(out, 4), "min", round(min(out), 4))


def upweight_pairs():
    from tipmarket.influence import upweight_derivative

    rng = np.random.default_rng(0)
    d = 10
    X = rng.standard_normal((200, d))
    y = (rng.random(200) < 1 / (1 + np.exp(-(X @ rng.standard_normal(d))))).astype(float)
    data = Dataset(X, y)
    m = train(data, TrainConfig(l2=0.01))
    rel = []
    for _ in range(20):
        i, j = rng.integers(0, 200, 2)
        a = exact_influence(m, data, data[int(i)], data[int(j)])
        b = upweight_derivative(m, data, data[int(i)], data[int(j)])
        rel.append(abs(a - b) / abs(b))
    print("upweighting-oracle relative errors (20 pairs): max", f"{max(rel):.2e}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=1000)
    args = ap.parse_args()
    t0 = time.time()
    ckks_noise(args.trials)
    xor_loss()
    kfac_cosine()
    upweight_pairs()
    print(f"done in {time.time() - t0:.0f} s")
