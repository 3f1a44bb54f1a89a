"""Synthetic market generation, replications and the full simulation pipeline."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..ckks import default_params, keygen, small_params
from ..influence import (
    Dataset,
    FineTuneConfig,
    TrainConfig,
    build_projection,
    cosine_scores,
    estimate_kfac,
    fine_tune,
    influence_scores,
    preconditioned_eval_vector,
    projected_gradients,
    random_scores,
    train,
    utility,
)
from ..protocol import BuyerConfig, InProcessTransport, SellerConfig, run_session
from .bench import TIMING_COLUMNS
from .config import MarketConfig
from .stats import ConstantInput, paired_delta, pearson, rank_distribution, spearman

log = logging.getLogger(__name__)

SIGNALS = ("if", "cos", "rand")


def fmt(x) -> str:
    """Floats with 17 significant digits; everything else via str."""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


@dataclass
class SellerBundle:
    data: Dataset
    shift: float
    noise: float


@dataclass
class MarketInstance:
    config: MarketConfig
    replication: int
    train: Dataset
    eval: Dataset
    sellers: list
    weights: np.ndarray


def _draw(rng, m, std, w, mu, noise):
    X = mu + rng.standard_normal((m, len(std))) * std
    y = (rng.random(m) < 1.0 / (1.0 + np.exp(-(X @ w)))).astype(float)
    flip = rng.random(m) < noise
    y[flip] = 1.0 - y[flip]
    return Dataset(X, y)


def _stratified(rng, n, upper):
    # one draw per equal-width stratum, in shuffled order, so seller
    # heterogeneity never collapses onto one level
    return upper * (rng.permutation(n) + rng.random(n)) / n


def generate_market(config: MarketConfig, replication: int) -> MarketInstance:
    """Anisotropic Gaussian features with logistic labels; sellers get a mean shift and label noise."""
    c = config
    rng = np.random.default_rng([c.master_seed, replication])
    std = np.sqrt(np.geomspace(c.var_min, c.var_max, c.n_features))
    rng.shuffle(std)
    w = rng.standard_normal(c.n_features) / np.sqrt(c.n_features) / std * c.weight_scale
    zero = np.zeros(c.n_features)
    tr = _draw(rng, c.n_train, std, w, zero, 0.0)
    ev = _draw(rng, c.n_eval, std, w, zero, 0.0)
    shifts = _stratified(rng, c.num_sellers, c.shift_max)
    noises = _stratified(rng, c.num_sellers, c.noise_max)
    sellers = []
    for mag, rho in zip(shifts, noises):
        direction = rng.standard_normal(c.n_features)
        direction /= np.linalg.norm(direction)
        sellers.append(SellerBundle(_draw(rng, c.n_seller, std, w, mag * direction * std, rho),
                                    float(mag), float(rho)))
    return MarketInstance(c, replication, tr, ev, sellers, w)


@dataclass
class ReplicationResult:
    replication: int
    rows: list  # one dict per seller
    pearson: dict
    spearman: dict
    mode: str
    valuation_seconds: float = 0.0
    ground_truth_seconds: float = 0.0
    encrypted_utilities: list = field(default_factory=list)

    def signal(self, name: str) -> np.ndarray:
        return np.array([r[f"utility_{name}"] for r in self.rows])

    @property
    def realized(self) -> np.ndarray:
        return np.array([r["realized_benefit"] for r in self.rows])


def _ckks_params(name: str):
    return default_params() if name == "default" else small_params()


def _correlations(rows, fn):
    out = {}
    realized = [r["realized_benefit"] for r in rows]
    for s in SIGNALS:
        try:
            out[s] = fn([r[f"utility_{s}"] for r in rows], realized)
        except (ConstantInput, ValueError):
            out[s] = float("nan")
    return out


def run_replication(instance: MarketInstance, mode: str = "plaintext") -> ReplicationResult:
    """Baseline training, ex-ante valuation of every seller bundle, then ex-post fine-tuning."""
    if mode not in ("plaintext", "encrypted"):
        raise ValueError(f"unknown mode {mode!r}")
    c = instance.config
    rep = instance.replication
    model = train(instance.train, TrainConfig(l2=c.l2, hidden=c.hidden, seed=rep))

    t0 = time.perf_counter()
    kfac = estimate_kfac(model, instance.train)
    head_in = model.layers[-1].d_in + 1
    head_out = model.layers[-1].d_out
    k_in = head_in if c.k_in is None else min(c.k_in, head_in)
    ranks = [(0, 0)] * (len(model.layers) - 1) + [(k_in, min(c.k_out, head_out))]
    proj = build_projection(kfac, ranks)
    v = preconditioned_eval_vector(model, instance.eval, proj, kfac, damping=c.damping)
    g_eval = projected_gradients(model, instance.eval, proj).mean(axis=0)
    rand = random_scores(c.master_seed, len(instance.sellers), rep)

    keys = None
    if mode == "encrypted":
        params = _ckks_params(c.params)
        keys = keygen(params, seed=int(np.random.SeedSequence([c.master_seed, rep]).generate_state(1)[0]))

    rows = []
    enc_utils = []
    for j, bundle in enumerate(instance.sellers):
        G = projected_gradients(model, bundle.data, proj)
        plain = influence_scores(v.values, G)
        if mode == "encrypted":
            res = run_session(
                InProcessTransport(),
                BuyerConfig(model, instance.eval, proj, keys.params, kfac, seed=1000 * rep + j,
                            keys=keys, eval_vector=v),
                SellerConfig(model, proj, bundle.data, seed=1000 * rep + j + 500))
            if res.aborted:
                raise RuntimeError(f"replication {rep}, seller {j}: {res.error}")
            scores = np.array([s for _, s in res.scores])
            enc_utils.append(float(np.sum(utility(scores))))
        else:
            scores = plain
        rows.append({
            "replication": rep, "seller": j, "n_points": len(bundle.data),
            "shift": bundle.shift, "noise": bundle.noise,
            "utility_if": float(np.sum(utility(scores))),
            "utility_if_plain": float(np.sum(utility(plain))),
            "utility_cos": float(np.sum(cosine_scores(G, g_eval))),
            "utility_rand": float(rand[j]),
        })
    t_val = time.perf_counter() - t0

    t0 = time.perf_counter()
    base = model.mean_loss(instance.eval)
    ft = FineTuneConfig(epochs=c.finetune_epochs, lr=c.finetune_lr, batch_size=c.finetune_batch, seed=rep)
    for row, bundle in zip(rows, instance.sellers):
        tuned = fine_tune(model, bundle.data, ft)
        row["realized_benefit"] = float(base - tuned.mean_loss(instance.eval))
    t_gt = time.perf_counter() - t0

    return ReplicationResult(rep, rows, _correlations(rows, pearson), _correlations(rows, spearman),
                             mode, t_val, t_gt, enc_utils)


@dataclass
class MarketSummary:
    config: MarketConfig
    results: list
    summary: dict


def summarize(results, resamples: int = 1000, seed: int = 0) -> dict:
    out = {"num_replications": len(results),
           "num_pairs": sum(len(r.rows) for r in results)}
    for metric in ("pearson", "spearman"):
        table = {s: np.array([abs(getattr(r, metric)[s]) for r in results]) for s in SIGNALS}
        out[f"mean_abs_{metric}"] = {s: float(np.nanmean(v)) if np.isfinite(v).any() else None
                                     for s, v in table.items()}
        ok = np.isfinite(table["if"]) & np.isfinite(table["cos"])
        if ok.any():
            out[f"delta_if_cos_{metric}"] = paired_delta(table["if"][ok], table["cos"][ok],
                                                         resamples, seed).to_dict()
    out["replications"] = [{"replication": r.replication, "mode": r.mode,
                            "pearson": r.pearson, "spearman": r.spearman} for r in results]
    return out


def run_market(config: MarketConfig, mode: str = "plaintext", replications=None) -> MarketSummary:
    idx = range(config.num_replications) if replications is None else replications
    results = []
    for r in idx:
        res = run_replication(generate_market(config, r), mode)
        log.info("replication %d: pearson %s", r, res.pearson)
        results.append(res)
    return MarketSummary(config, results, summarize(results))


REPLICATION_COLUMNS = ["replication", "seller", "n_points", "shift", "noise", "utility_if",
                       "utility_if_plain", "utility_cos", "utility_rand", "realized_benefit"]


def _json_clean(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_json_clean(v) for v in x]
    return x


def write_outputs(result: MarketSummary, out_dir, timings=None) -> dict:
    """replications.csv, summary.json, rank_distribution.csv, timings.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in
             ("replications.csv", "summary.json", "rank_distribution.csv", "timings.csv")}

    with open(paths["replications.csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLICATION_COLUMNS)
        for r in result.results:
            for row in r.rows:
                w.writerow([fmt(row[c]) for c in REPLICATION_COLUMNS])

    doc = {"config": result.config.to_dict(), **result.summary}
    utils = [row["utility_if"] for r in result.results for row in r.rows]
    pairs = [(row["replication"], row["seller"]) for r in result.results for row in r.rows]
    rows, neg = rank_distribution(utils)
    doc["negative_utility_fraction"] = neg
    paths["summary.json"].write_text(json.dumps(_json_clean(doc), indent=2, sort_keys=True) + "\n")

    with open(paths["rank_distribution.csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "replication", "seller", "utility_if"])
        for rank, i, u in rows:
            w.writerow([rank, pairs[i][0], pairs[i][1], fmt(u)])

    with open(paths["timings.csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if timings is None:
            w.writerow(["replication", "mode", "valuation_seconds", "ground_truth_seconds"])
            for r in result.results:
                w.writerow([r.replication, r.mode, fmt(r.valuation_seconds), fmt(r.ground_truth_seconds)])
        else:
            write_timings(w, timings)
    return paths


def write_timings(writer, rows) -> None:
    writer.writerow(TIMING_COLUMNS)
    for row in rows:
        writer.writerow([fmt(row[c]) for c in TIMING_COLUMNS])


def summary_table(summary: dict) -> str:
    """Plain-text table of mean |Pearson| / |Spearman| per signal and the IF - Cos deltas."""
    names = {"if": "FHE-IF", "cos": "Cosine", "rand": "Random"}
    lines = [f"{'Signal':<10}{'Mean |Pearson| (r)':>20}{'Mean |Spearman| (rho)':>24}"]
    for s in SIGNALS:
        p = summary["mean_abs_pearson"][s]
        q = summary["mean_abs_spearman"][s]
        lines.append(f"{names[s]:<10}{_f(p):>20}{_f(q):>24}")
    lines.append("")
    lines.append(f"{'Metric':<10}{'Mean Delta (IF - Cos)':>24}{'95% CI':>24}{'p':>10}")
    for metric in ("pearson", "spearman"):
        d = summary.get(f"delta_if_cos_{metric}")
        if d is None:
            continue
        ci = f"[{d['ci_low']:+.3f}, {d['ci_high']:+.3f}]"
        p = "n/a" if d["p_value"] is None else f"{d['p_value']:.3g}"
        lines.append(f"{metric.capitalize():<10}{d['mean']:>+24.3f}{ci:>24}{p:>10}")
    return "\n".join(lines)


def _f(x):
    return "n/a" if x is None else f"{x:.3f}"
