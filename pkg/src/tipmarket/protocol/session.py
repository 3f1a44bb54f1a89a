"""Role loops and the session driver.

The broker is the hub. Message flow:

    buyer  -> broker : SessionHeader, KeyMaterial(pk), KeyMaterial(eval), EvalVector
    broker -> seller : SessionHeader, KeyMaterial(pk)
    seller -> broker : CandidateGradient x n, Ack(n)
    broker -> buyer  : Ack(progress) per candidate received, ScoreResult x n, Ack(n)

The broker scores only after the seller's final Ack, and the buyer decrypts
only after the broker's final Ack, so logged phases never go backwards.
Progress Acks keep the buyer's idle timeout from firing while the seller
is still encrypting.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..ckks import CkksParams, EvalKeys, KeySet, deserialize_keys
from ..ckks.errors import CkksError, MalformedFrame
from ..influence import (
    DimensionMismatch,
    EvalVector,
    KfacState,
    Model,
    ProjectionOperator,
    influence_scores,
    projected_gradients,
)
from .messages import (
    KEY_EVAL,
    KEY_PUBLIC,
    MsgType,
    ProtocolError,
    ProtocolViolation,
    SessionHeader,
    SessionMessage,
)
from .roles import (
    BrokerState,
    SellerState,
    buyer_finalize,
    buyer_setup,
    broker_handle,
    seller_prepare,
    utility_ranking,
)

DONE = b"done"
PROGRESS = b"progress"


class SessionAborted(ProtocolError):
    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message)


class SessionLog:
    """Thread-safe JSON-lines event log."""

    def __init__(self, path=None):
        self.events: list[dict] = []
        self._lock = threading.Lock()
        self._fh = open(path, "a") if path else None

    def record(self, role: str, phase: int, msg_type: str, nbytes: int, sequence: int | None = None):
        ev = {"timestamp": time.time(), "role": role, "phase": phase,
              "msg_type": msg_type, "bytes": int(nbytes)}
        if sequence is not None:
            ev["sequence"] = int(sequence)
        with self._lock:
            self.events.append(ev)
            if self._fh:
                self._fh.write(json.dumps(ev) + "\n")
                self._fh.flush()

    def phases_monotone(self) -> bool:
        phases = [e["phase"] for e in self.events]
        return all(a <= b for a, b in zip(phases, phases[1:]))

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


@dataclass
class BuyerConfig:
    model: Model
    eval_set: object
    projection: ProjectionOperator
    params: CkksParams
    kfac: KfacState | None = None
    seed: int = 0
    damping: float | None = None
    method: str = "kfac"
    train_set: object = None
    keys: KeySet | None = None
    eval_vector: EvalVector | None = None


@dataclass
class SellerConfig:
    model: Model
    projection: ProjectionOperator
    candidates: object
    seed: int = 1
    unit_norm: bool = False


@dataclass
class BrokerConfig:
    pass


@dataclass
class TimingReport:
    n: int
    encrypt_seconds: float
    score_seconds: float
    decrypt_seconds: float
    plaintext_seconds: float

    @property
    def encrypted_seconds(self) -> float:
        return self.encrypt_seconds + self.score_seconds + self.decrypt_seconds

    @property
    def per_sample_encrypted(self) -> float:
        return self.encrypted_seconds / max(self.n, 1)

    @property
    def per_sample_plaintext(self) -> float:
        return self.plaintext_seconds / max(self.n, 1)

    @property
    def overhead(self) -> float:
        return self.per_sample_encrypted / self.per_sample_plaintext if self.plaintext_seconds > 0 else float("inf")

    def to_dict(self) -> dict:
        return {"n": self.n, "encrypt_seconds": self.encrypt_seconds,
                "score_seconds": self.score_seconds, "decrypt_seconds": self.decrypt_seconds,
                "plaintext_seconds": self.plaintext_seconds,
                "per_sample_encrypted": self.per_sample_encrypted,
                "per_sample_plaintext": self.per_sample_plaintext, "overhead": self.overhead}


@dataclass
class SessionResult:
    scores: list
    ranking: list
    timings: TimingReport | None
    aborted: bool = False
    error: str | None = None
    failed_index: int | None = None
    log: list = field(default_factory=list)
    phases_monotone: bool = True


# -- role loops --------------------------------------------------------------


def _send(ep, peer, msg, log, phase):
    # logged before the send so the receiver's entry can never precede it
    log.record(ep.role, phase, msg.msg_type.name, len(msg), msg.sequence)
    ep.send(peer, msg)


def _recv(ep, peer, log, phase, expect=None):
    msg = ep.recv(peer)
    log.record(ep.role, phase, msg.msg_type.name, len(msg), msg.sequence)
    if msg.msg_type is MsgType.ERROR:
        raise SessionAborted(msg.payload.decode(errors="replace"), msg.sequence)
    if expect is not None and msg.msg_type is not expect:
        raise ProtocolViolation(f"{ep.role} expected {expect.name}, got {msg.msg_type.name}")
    return msg


def run_buyer(ep, cfg: BuyerConfig, log: SessionLog):
    """Returns (scores, buyer state)."""
    state, ev_msg = buyer_setup(cfg.model, cfg.eval_set, cfg.projection, cfg.kfac, cfg.params,
                                cfg.seed, damping=cfg.damping, method=cfg.method,
                                train_set=cfg.train_set, keys=cfg.keys, eval_vector=cfg.eval_vector)
    for msg in [state.header_message(), *state.key_messages(), ev_msg]:
        _send(ep, "broker", msg, log, 1)
    pending = []
    while True:
        msg = ep.recv("broker")
        if msg.msg_type is MsgType.ERROR:
            log.record(ep.role, 4, msg.msg_type.name, len(msg), msg.sequence)
            raise SessionAborted(msg.payload.decode(errors="replace"), msg.sequence)
        if msg.msg_type is MsgType.ACK and msg.payload == PROGRESS:
            continue
        if msg.msg_type is MsgType.ACK and msg.payload == DONE:
            break
        if msg.msg_type is not MsgType.SCORE_RESULT:
            raise ProtocolViolation(f"buyer got unexpected {msg.msg_type.name}")
        pending.append(msg)
    for m in pending:
        log.record(ep.role, 4, m.msg_type.name, len(m), m.sequence)
    log.record(ep.role, 4, msg.msg_type.name, len(msg), msg.sequence)
    scores = buyer_finalize(state, pending, expected=msg.sequence)
    return scores, state


def run_seller(ep, cfg: SellerConfig, log: SessionLog):
    hdr_msg = _recv(ep, "broker", log, 1, MsgType.SESSION_HEADER)
    header = SessionHeader.from_bytes(hdr_msg.payload)
    pk_msg = _recv(ep, "broker", log, 1, MsgType.KEY_MATERIAL)
    if pk_msg.sequence != KEY_PUBLIC:
        raise ProtocolViolation("seller expected the public key")
    state = SellerState.from_session(header, hdr_msg.session_id, pk_msg.payload, cfg.model,
                                     cfg.projection, cfg.seed, cfg.unit_norm)
    frames = seller_prepare(state, cfg.candidates)
    for f in frames:
        _send(ep, "broker", f, log, 2)
    _send(ep, "broker", SessionMessage(state.session_id, MsgType.ACK, len(frames), DONE), log, 2)
    return state


def run_broker(ep, cfg: BrokerConfig | None, log: SessionLog):
    hdr_msg = _recv(ep, "buyer", log, 1, MsgType.SESSION_HEADER)
    header = SessionHeader.from_bytes(hdr_msg.payload)
    sid = hdr_msg.session_id
    pk_msg = _recv(ep, "buyer", log, 1, MsgType.KEY_MATERIAL)
    ek_msg = _recv(ep, "buyer", log, 1, MsgType.KEY_MATERIAL)
    if pk_msg.sequence != KEY_PUBLIC or ek_msg.sequence != KEY_EVAL:
        raise ProtocolViolation("key material out of order")
    ek = deserialize_keys(ek_msg.payload, header.params)
    if type(ek) is not EvalKeys:
        raise ProtocolViolation("broker received non-evaluation key material")
    state = BrokerState(header.params, ek, sid)
    state.accept_eval_vector(_recv(ep, "buyer", log, 1, MsgType.EVAL_VECTOR))
    _send(ep, "seller", hdr_msg, log, 1)
    _send(ep, "seller", pk_msg, log, 1)

    def abort(text, seq):
        err = SessionMessage(sid, MsgType.ERROR, seq, text.encode())
        _send(ep, "buyer", err, log, 3)
        raise SessionAborted(text, seq)

    frames = []
    while True:
        try:
            msg = ep.recv("seller")
        except MalformedFrame as exc:
            log.record(ep.role, 2, "MALFORMED", 0)
            abort(f"candidate {len(frames)}: MalformedFrame: {exc}", len(frames))
        log.record(ep.role, 2, msg.msg_type.name, len(msg), msg.sequence)
        if msg.msg_type is MsgType.ERROR:
            abort("seller: " + msg.payload.decode(errors="replace"), msg.sequence)
        if msg.msg_type is MsgType.ACK:
            if msg.sequence != len(frames):
                abort(f"seller announced {msg.sequence} candidates, sent {len(frames)}", len(frames))
            break
        frames.append(msg)
        ep.send("buyer", SessionMessage(sid, MsgType.ACK, len(frames), PROGRESS))
    for i, f in enumerate(frames):
        if f.sequence != i:
            abort(f"candidate sequence {f.sequence} where {i} was expected", i)
        out = broker_handle(state, f)
        if out.msg_type is MsgType.ERROR:
            abort(out.payload.decode(errors="replace"), out.sequence)
        _send(ep, "buyer", out, log, 3)
    _send(ep, "buyer", SessionMessage(sid, MsgType.ACK, len(frames), DONE), log, 3)
    return state


def notify_failure(ep, peers, exc) -> None:
    """Best effort: tell peers this role failed so they stop waiting."""
    text = f"{ep.role} failed: {type(exc).__name__}: {exc}".encode()
    for peer in peers:
        try:
            ep.send(peer, SessionMessage(b"\x00" * 16, MsgType.ERROR, 0, text))
        except Exception:
            pass


# -- driver ------------------------------------------------------------------


def plaintext_scores(model, projection, candidates, eval_vector: EvalVector, unit_norm=False):
    """Same pipeline without encryption. Returns (scores, seconds)."""
    t0 = time.perf_counter()
    G = projected_gradients(model, candidates, projection)
    if unit_norm:
        norms = np.linalg.norm(G, axis=1, keepdims=True)
        G = np.divide(G, norms, out=np.zeros_like(G), where=norms > 0)
    s = influence_scores(eval_vector.values, G)
    return s, time.perf_counter() - t0


def run_session(transport, buyer_cfg: BuyerConfig, seller_cfg: SellerConfig,
                broker_cfg: BrokerConfig | None = None, log_path=None, join_timeout=None) -> SessionResult:
    """Run all three roles in threads over ``transport``."""
    log = SessionLog(log_path)
    out: dict = {}
    errors: dict = {}

    peers = {"buyer": ("broker",), "seller": ("broker",), "broker": ("buyer", "seller")}

    def wrap(role, fn, cfg):
        ep = None
        try:
            ep = transport.endpoint(role)
            out[role] = fn(ep, cfg, log)
        except BaseException as exc:  # reported below
            errors[role] = exc
            if ep is not None and not isinstance(exc, SessionAborted):
                notify_failure(ep, peers[role], exc)

    threads = [threading.Thread(target=wrap, args=a, daemon=True) for a in
               (("broker", run_broker, broker_cfg), ("buyer", run_buyer, buyer_cfg),
                ("seller", run_seller, seller_cfg))]
    for t in threads:
        t.start()
    for t in threads:
        t.join(join_timeout)
    transport.close()
    log.close()

    if errors:
        first = errors.get("broker") or errors.get("buyer") or errors.get("seller")
        idx = getattr(first, "index", None)
        if not isinstance(first, (ProtocolError, CkksError, DimensionMismatch, OSError)):
            raise first
        return SessionResult([], [], None, aborted=True, error=f"{type(first).__name__}: {first}",
                             failed_index=idx, log=log.events, phases_monotone=log.phases_monotone())
    if len(out) < 3:
        return SessionResult([], [], None, aborted=True, error="session did not finish",
                             log=log.events, phases_monotone=log.phases_monotone())

    scores, bstate = out["buyer"]
    _, plain_secs = plaintext_scores(seller_cfg.model, seller_cfg.projection, seller_cfg.candidates,
                                     bstate.eval_vector, seller_cfg.unit_norm)
    timings = TimingReport(len(scores), out["seller"].encrypt_seconds, out["broker"].score_seconds,
                           bstate.decrypt_seconds, plain_secs)
    return SessionResult(scores, utility_ranking(scores), timings, log=log.events,
                         phases_monotone=log.phases_monotone())
