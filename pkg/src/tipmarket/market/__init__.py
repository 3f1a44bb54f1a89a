"""Synthetic data market: replications, ground truth, statistics and timing."""

from .bench import TIMING_COLUMNS, bench_overhead, mlp_ranks, per_sample_spread, synthetic_mlp
from .config import MarketConfig
from .sim import (
    MarketInstance,
    MarketSummary,
    ReplicationResult,
    SellerBundle,
    fmt,
    generate_market,
    run_market,
    run_replication,
    summarize,
    summary_table,
    write_outputs,
    write_timings,
)
from .stats import ConstantInput, PairedDelta, paired_delta, pearson, rank_distribution, spearman

__all__ = [n for n in dir() if not n.startswith("_")]
