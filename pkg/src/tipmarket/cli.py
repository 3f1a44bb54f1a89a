"""``tip`` command line: keygen, score, simulate, bench.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
Results go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .ckks import (
    CkksParams,
    KeySet,
    default_params,
    deserialize_keys,
    keygen,
    serialize_keys,
    small_params,
)
from .ckks.errors import CkksError, InvalidParams
from .influence import (
    DimensionMismatch,
    TrainConfig,
    build_projection,
    estimate_kfac,
    preconditioned_eval_vector,
    train,
)
from .influence.io import load_model, load_projection, read_dataset, save_model, save_projection
from .market import (
    MarketConfig,
    bench_overhead,
    fmt,
    pearson,
    run_market,
    summary_table,
    write_outputs,
    write_timings,
)
from .protocol import (
    BuyerConfig,
    InProcessTransport,
    ProtocolError,
    SellerConfig,
    SessionLog,
    TcpClientEndpoint,
    TcpBrokerEndpoint,
    TcpTransport,
    plaintext_scores,
    run_broker,
    run_buyer,
    run_seller,
    run_session,
)

KEY_FILES = {"public": "public.tipk", "secret": "secret.tipk", "eval": "eval.tipk"}


class UsageError(Exception):
    """Bad flags or configuration: exit code 2."""


# -- helpers -----------------------------------------------------------------


def load_params(spec: str | None) -> CkksParams:
    if spec in (None, "default"):
        return default_params()
    if spec == "small":
        return small_params()
    try:
        doc = json.loads(Path(spec).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read params file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{spec}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{spec}: expected a JSON object")
    try:
        return CkksParams.from_dict(doc)
    except InvalidParams as exc:
        raise UsageError(f"{spec}: {exc}") from None


def load_keyset(keys_dir, params: CkksParams) -> KeySet:
    d = Path(keys_dir)
    try:
        pk = deserialize_keys((d / KEY_FILES["public"]).read_bytes(), params)
        sk = deserialize_keys((d / KEY_FILES["secret"]).read_bytes(), params)
        ek = deserialize_keys((d / KEY_FILES["eval"]).read_bytes(), params)
    except OSError as exc:
        raise UsageError(f"cannot read keys: {exc}") from None
    return KeySet(params, pk, sk, ek.relin_key, dict(ek.galois_keys))


def _dataset(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    try:
        return read_dataset(path)
    except OSError as exc:
        raise UsageError(f"cannot read {what} data: {exc}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"output directory not writable: {exc}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory not writable: {out}")
    return out


def _print_rows(header, rows):
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])


# -- subcommands -------------------------------------------------------------


def cmd_keygen(args) -> int:
    params = load_params(args.params)
    out = _out_dir(args.keys_dir or args.out or ".")
    keys = keygen(params, args.seed)
    (out / KEY_FILES["public"]).write_bytes(serialize_keys(keys.public_key))
    (out / KEY_FILES["secret"]).write_bytes(serialize_keys(keys.secret_key))
    (out / KEY_FILES["eval"]).write_bytes(serialize_keys(keys.eval_keys))
    print(params.params_hash.hex())
    return 0


def _model_and_projection(args, train_set):
    if args.model:
        model = load_model(args.model)
    else:
        if train_set is None:
            raise UsageError("need --model or --train")
        model = train(train_set, TrainConfig(l2=args.l2, hidden=tuple(args.hidden), seed=args.seed))
    if args.projection:
        proj = load_projection(args.projection)
    else:
        if train_set is None:
            raise UsageError("need --projection or --train")
        kfac = estimate_kfac(model, train_set)
        head_in = model.layers[-1].d_in + 1
        k_in = head_in if args.k_in is None else min(args.k_in, head_in)
        ranks = [(0, 0)] * (len(model.layers) - 1) + [(k_in, min(args.k_out, model.layers[-1].d_out))]
        proj = build_projection(kfac, ranks)
    if args.save_model:
        save_model(args.save_model, model)
    if args.save_projection:
        save_projection(args.save_projection, proj)
    return model, proj


def _write_scores(path, scores, plain=None):
    header = ["index", "score"] + (["plaintext_score"] if plain is not None else [])
    target = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(target, lineterminator="\n")
        w.writerow(header)
        for j, (i, s) in enumerate(scores):
            w.writerow([i, fmt(s)] + ([fmt(plain[j])] if plain is not None else []))
    finally:
        if path:
            target.close()


def cmd_score(args) -> int:
    if args.role and args.transport != "tcp":
        raise UsageError("--role requires --transport tcp")
    if args.role in ("buyer", "seller") and not args.connect:
        raise UsageError(f"--role {args.role} needs --connect host:port")
    params = load_params(args.params)
    timeout = None if args.timeout <= 0 else args.timeout
    slog = SessionLog(args.session_log)

    if args.role == "broker":
        ep = TcpBrokerEndpoint(args.listen or "127.0.0.1:0", timeout)
        print(f"listening {ep.address}", file=sys.stderr, flush=True)
        try:
            ep.accept_peers()
            state = run_broker(ep, None, slog)
        finally:
            ep.close()
            slog.close()
        print(f"scored {state.scored} candidates", file=sys.stderr)
        return 0

    train_set = _dataset(args.train, "train") if args.train else None
    cands = None
    if args.role != "buyer":
        cands = _dataset(args.candidates, "candidates")
        if len(cands) == 0:
            raise UsageError("no candidates")
    model, proj = _model_and_projection(args, train_set)
    if cands is not None and cands.X.shape[1] != model.layers[0].d_in:
        raise UsageError(f"candidate feature width {cands.X.shape[1]} != model input {model.layers[0].d_in}")

    if args.role == "seller":
        ep = TcpClientEndpoint("seller", args.connect, timeout)
        try:
            run_seller(ep, SellerConfig(model, proj, cands, seed=args.seed + 1, unit_norm=args.unit_norm), slog)
        finally:
            ep.close()
            slog.close()
        return 0

    eval_set = _dataset(args.eval, "eval")
    ev = preconditioned_eval_vector(model, eval_set, proj, None, damping=args.damping)
    keys = load_keyset(args.keys_dir, params) if args.keys_dir else None

    if args.mode == "plaintext":
        s, _ = plaintext_scores(model, proj, cands, ev, args.unit_norm)
        _write_scores(args.out, list(enumerate(s.tolist())))
        return 0

    bcfg = BuyerConfig(model, eval_set, proj, params, seed=args.seed, keys=keys, eval_vector=ev)
    if args.role == "buyer":
        ep = TcpClientEndpoint("buyer", args.connect, timeout)
        try:
            scores, _ = run_buyer(ep, bcfg, slog)
        finally:
            ep.close()
            slog.close()
        _write_scores(args.out, scores)
        return 0

    scfg = SellerConfig(model, proj, cands, seed=args.seed + 1, unit_norm=args.unit_norm)
    transport = (TcpTransport(args.listen or "127.0.0.1:0", timeout) if args.transport == "tcp"
                 else InProcessTransport(timeout))
    slog.close()
    res = run_session(transport, bcfg, scfg, log_path=args.session_log)
    if res.aborted:
        raise ProtocolError(res.error)
    plain = None
    if args.verify:
        plain, _ = plaintext_scores(model, proj, cands, ev, args.unit_norm)
    _write_scores(args.out, res.scores, plain)
    if args.verify:
        enc = np.array([s for _, s in res.scores])
        r = pearson(enc, plain) if len(enc) > 1 else float("nan")
        _print_rows(["pearson", "max_abs_error"], [(r, float(np.max(np.abs(enc - plain))))])
    t = res.timings
    print(f"per-sample encrypted {t.per_sample_encrypted:.4g} s, plaintext {t.per_sample_plaintext:.3g} s",
          file=sys.stderr)
    return 0


def cmd_simulate(args) -> int:
    try:
        cfg = MarketConfig.load(args.config) if args.config else MarketConfig()
    except OSError as exc:
        raise UsageError(f"cannot read market config: {exc}") from None
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError(f"market config: {exc}") from None
    if args.seed is not None:
        cfg = MarketConfig.from_dict({**cfg.to_dict(), "master_seed": args.seed})
    if args.replications is not None:
        cfg = MarketConfig.from_dict({**cfg.to_dict(), "num_replications": args.replications})
    out = _out_dir(args.out)
    result = run_market(cfg, mode=args.mode)
    write_outputs(result, out)
    print(summary_table(result.summary))
    return 0


def cmd_bench(args) -> int:
    params = load_params(args.params)
    out = _out_dir(args.out)
    rows = bench_overhead(ks=args.k, batch_sizes=args.batch_sizes, mode=args.mode, params=params,
                          seed=args.seed)
    with open(out / "timings.csv", "w", newline="") as fh:
        write_timings(csv.writer(fh, lineterminator="\n"), rows)
    _print_rows(["k", "batch_size", "per_sample_plaintext", "per_sample_encrypted", "per_sample_overhead"],
                [(r["k"], r["batch_size"], r["per_sample_plaintext"], r["per_sample_encrypted"],
                  r["per_sample_overhead"]) for r in rows])
    return 0


# -- parser ------------------------------------------------------------------


def _int_list(text):
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("values must be positive")
    return vals


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tip", description="Encrypted influence scoring for data markets.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=_positive, default=1,
                        help="worker cap (the pipeline currently runs single-threaded)")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", parents=[common], help="generate public, secret and eval keys")
    k.add_argument("--params", help="params JSON, or 'default' / 'small'")
    k.add_argument("--keys-dir")
    k.add_argument("--out")
    k.set_defaults(fn=cmd_keygen)

    s = sub.add_parser("score", parents=[common], help="run one scoring session")
    s.add_argument("--params")
    s.add_argument("--keys-dir")
    s.add_argument("--train", help="buyer training CSV (fits model and projection if not given)")
    s.add_argument("--eval", help="buyer evaluation CSV")
    s.add_argument("--candidates", help="seller candidate CSV")
    s.add_argument("--model")
    s.add_argument("--projection")
    s.add_argument("--save-model")
    s.add_argument("--save-projection")
    s.add_argument("--hidden", type=_int_list, default=[])
    s.add_argument("--l2", type=float, default=0.01)
    s.add_argument("--k-in", type=_positive)
    s.add_argument("--k-out", type=_positive, default=1)
    s.add_argument("--damping", type=float, default=10.0)
    s.add_argument("--unit-norm", action="store_true")
    s.add_argument("--mode", choices=("plaintext", "encrypted"), default="encrypted")
    s.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    s.add_argument("--listen")
    s.add_argument("--connect")
    s.add_argument("--role", choices=("buyer", "seller", "broker"))
    s.add_argument("--timeout", type=float, default=30.0, help="TCP receive timeout in seconds (0 = none)")
    s.add_argument("--session-log", help="append JSON-lines session events here")
    s.add_argument("--verify", action="store_true", help="add a plaintext reference column")
    s.add_argument("--out", help="scores CSV (stdout if omitted)")
    s.set_defaults(fn=cmd_score)

    m = sub.add_parser("simulate", help="run the synthetic market")
    m.add_argument("--seed", type=int, help="overrides the config's master seed")
    m.add_argument("--threads", type=_positive, default=1)
    m.add_argument("--config", help="market config JSON")
    m.add_argument("--mode", choices=("plaintext", "encrypted"), default="plaintext")
    m.add_argument("--replications", type=_positive)
    m.add_argument("--out", default="market_out")
    m.set_defaults(fn=cmd_simulate)

    b = sub.add_parser("bench", parents=[common], help="encrypted vs plaintext timing")
    b.add_argument("--params")
    b.add_argument("--k", type=_int_list, default=[384])
    b.add_argument("--batch-sizes", type=_int_list, default=[10, 100, 1000])
    b.add_argument("--mode", choices=("plaintext", "encrypted"), default="encrypted")
    b.add_argument("--out", default=".")
    b.set_defaults(fn=cmd_bench)
    return p


def _setup_logging():
    level = os.environ.get("TIP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "listen", None) and getattr(args, "connect", None):
        parser.error("--listen and --connect are mutually exclusive")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.fn(args)
    except UsageError as exc:
        print(f"tip {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DimensionMismatch, ProtocolError, CkksError, OSError, RuntimeError, ValueError) as exc:
        print(f"tip {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
