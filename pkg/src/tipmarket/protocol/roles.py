"""Buyer, seller and broker state and their per-phase operations.

Isolation is structural: SellerState can only hold a PublicKey and
BrokerState only EvalKeys and ciphertexts. Their constructors reject any
other key type, so no secret key can reach either role.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..ckks import (
    Ciphertext,
    CkksParams,
    EvalKeys,
    KeySet,
    PublicKey,
    decode,
    decrypt,
    deserialize_ciphertext,
    deserialize_keys,
    encode,
    encrypt,
    he_mul,
    keygen,
    next_power_of_two,
    rotate_and_sum,
    serialize_ciphertext,
    serialize_keys,
)
from ..ckks.errors import CkksError
from ..influence import (
    DimensionMismatch,
    EvalVector,
    KfacState,
    Model,
    ProjectionOperator,
    preconditioned_eval_vector,
    projected_gradients,
)
from .messages import (
    KEY_EVAL,
    KEY_PUBLIC,
    MissingScore,
    MsgType,
    ProtocolViolation,
    SessionHeader,
    SessionMessage,
    session_id_from_seed,
)


def _derive_seeds(seed: int, count: int) -> list[int]:
    ss = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in ss]


def _check_fits(params: CkksParams, k: int):
    if not 1 <= next_power_of_two(k) <= params.slots:
        raise DimensionMismatch(f"k={k} does not fit in {params.slots} slots")


# -- buyer -----------------------------------------------------------------


@dataclass(eq=False)
class BuyerState:
    params: CkksParams
    keys: KeySet
    eval_vector: EvalVector
    session_id: bytes
    projection_checksum: bytes
    scores: dict = field(default_factory=dict)
    decrypt_seconds: float = 0.0

    @property
    def k(self) -> int:
        return self.eval_vector.k

    def header_message(self) -> SessionMessage:
        hdr = SessionHeader(self.params, self.k, self.projection_checksum)
        return SessionMessage(self.session_id, MsgType.SESSION_HEADER, 0, hdr.to_bytes())

    def key_messages(self) -> list[SessionMessage]:
        return [
            SessionMessage(self.session_id, MsgType.KEY_MATERIAL, KEY_PUBLIC,
                           serialize_keys(self.keys.public_key)),
            SessionMessage(self.session_id, MsgType.KEY_MATERIAL, KEY_EVAL,
                           serialize_keys(self.keys.eval_keys)),
        ]


def buyer_setup(model: Model, eval_set, proj: ProjectionOperator, kfac: KfacState | None,
                params: CkksParams, seed: int, damping: float | None = None,
                method: str = "kfac", train_set=None, keys: KeySet | None = None,
                eval_vector: EvalVector | None = None):
    """Phase 1: keys, v_eval and its encryption. Returns (state, EvalVector frame)."""
    key_seed, enc_seed = _derive_seeds(seed, 2)
    if eval_vector is None:
        eval_vector = preconditioned_eval_vector(model, eval_set, proj, kfac, damping,
                                                 method=method, train_set=train_set)
    _check_fits(params, eval_vector.k)
    if keys is None:
        keys = keygen(params, key_seed)
    elif keys.params != params:
        raise ValueError("key set was generated for different parameters")
    ct = encrypt(keys.public_key, encode(eval_vector.values, params), enc_seed)
    state = BuyerState(params, keys, eval_vector, session_id_from_seed(seed), proj.checksum())
    msg = SessionMessage(state.session_id, MsgType.EVAL_VECTOR, 0, serialize_ciphertext(ct))
    return state, msg


def buyer_receive(state: BuyerState, msg: SessionMessage) -> None:
    """Decrypt one ScoreResult into state.scores (u_i, before negation)."""
    if msg.session_id != state.session_id:
        raise ProtocolViolation("score frame from another session")
    if msg.msg_type is not MsgType.SCORE_RESULT:
        raise ProtocolViolation(f"buyer expected ScoreResult, got {msg.msg_type.name}")
    t0 = time.perf_counter()
    ct = deserialize_ciphertext(msg.payload, state.params)
    u = float(decode(decrypt(state.keys.secret_key, ct), state.params, 1)[0])
    state.decrypt_seconds += time.perf_counter() - t0
    state.scores[msg.sequence] = u


def buyer_finalize(state: BuyerState, frames=(), expected: int | None = None):
    """Phase 4: s_i = -u_i for every candidate, sorted by index.

    ``expected`` is the number of candidates the seller announced; any index
    without a score raises MissingScore.
    """
    for msg in frames:
        buyer_receive(state, msg)
    if expected is not None:
        missing = set(range(expected)) - set(state.scores)
        if missing:
            raise MissingScore(missing)
    return [(i, -state.scores[i]) for i in sorted(state.scores)]


def utility_ranking(scores):
    """Indices ordered by utility (= -score) descending, ties to the lower index."""
    return [i for i, _ in sorted(scores, key=lambda t: (t[1], t[0]))]


# -- seller ----------------------------------------------------------------


@dataclass(eq=False)
class SellerState:
    params: CkksParams
    public_key: PublicKey
    model: Model
    projection: ProjectionOperator
    session_id: bytes
    expected_k: int | None = None
    expected_checksum: bytes | None = None
    seed: int = 0
    unit_norm: bool = False
    encrypt_seconds: float = 0.0

    def __post_init__(self):
        if type(self.public_key) is not PublicKey:
            raise TypeError("seller may only hold the buyer's public key")

    @classmethod
    def from_session(cls, header: SessionHeader, session_id: bytes, pk_bytes: bytes,
                     model: Model, proj: ProjectionOperator, seed: int = 0, unit_norm=False):
        pk = deserialize_keys(pk_bytes, header.params)
        if type(pk) is not PublicKey:
            raise ProtocolViolation("key material for the seller must be a public key")
        return cls(header.params, pk, model, proj, session_id, header.k,
                   header.projection_checksum, seed, unit_norm)


def seller_prepare(state: SellerState, candidates) -> list[SessionMessage]:
    """Phase 2: one encrypted projected gradient per candidate, sequence = index."""
    k = state.projection.k
    if state.expected_k is not None and k != state.expected_k:
        raise DimensionMismatch(f"seller projection has k={k}, buyer published {state.expected_k}")
    if state.expected_checksum is not None and state.projection.checksum() != state.expected_checksum:
        raise DimensionMismatch("seller projection differs from the buyer's")
    _check_fits(state.params, k)
    G = projected_gradients(state.model, candidates, state.projection)
    if state.unit_norm:
        norms = np.linalg.norm(G, axis=1, keepdims=True)
        G = np.divide(G, norms, out=np.zeros_like(G), where=norms > 0)
    seeds = _derive_seeds(state.seed, len(G))
    out = []
    for i, (g, s) in enumerate(zip(G, seeds)):
        t0 = time.perf_counter()
        ct = encrypt(state.public_key, encode(g, state.params), s)
        payload = serialize_ciphertext(ct)
        state.encrypt_seconds += time.perf_counter() - t0
        out.append(SessionMessage(state.session_id, MsgType.CANDIDATE_GRADIENT, i, payload))
    return out


# -- broker ----------------------------------------------------------------


@dataclass(eq=False)
class BrokerState:
    params: CkksParams
    eval_keys: EvalKeys
    session_id: bytes
    ct_eval: Ciphertext | None = None
    score_seconds: float = 0.0
    scored: int = 0

    def __post_init__(self):
        if type(self.eval_keys) is not EvalKeys:
            raise TypeError("broker may only hold evaluation keys")

    def accept_eval_vector(self, msg: SessionMessage) -> None:
        if msg.msg_type is not MsgType.EVAL_VECTOR:
            raise ProtocolViolation(f"expected EvalVector, got {msg.msg_type.name}")
        if self.ct_eval is not None:
            raise ProtocolViolation("EvalVector received twice")
        self.ct_eval = deserialize_ciphertext(msg.payload, self.params)


def broker_score(state: BrokerState, ct_eval: Ciphertext, ct_i: Ciphertext) -> Ciphertext:
    """Phase 3: RotateAndSum(ct_eval * ct_i); slot 0 holds the inner product."""
    k = max(ct_eval.slot_count, ct_i.slot_count)
    return rotate_and_sum(he_mul(ct_eval, ct_i, state.eval_keys), k, state.eval_keys)


def broker_handle(state: BrokerState, msg: SessionMessage) -> SessionMessage:
    """Score one CandidateGradient frame; malformed input yields an Error frame."""
    if msg.session_id != state.session_id:
        return SessionMessage(state.session_id, MsgType.ERROR, msg.sequence, b"session id mismatch")
    if msg.msg_type is not MsgType.CANDIDATE_GRADIENT:
        return SessionMessage(state.session_id, MsgType.ERROR, msg.sequence,
                              f"unexpected {msg.msg_type.name}".encode())
    if state.ct_eval is None:
        raise ProtocolViolation("candidate gradient before EvalVector")
    t0 = time.perf_counter()
    try:
        ct_i = deserialize_ciphertext(msg.payload, state.params)
        if ct_i.slot_count != state.ct_eval.slot_count:
            raise DimensionMismatch(
                f"candidate has {ct_i.slot_count} slots in use, eval vector has {state.ct_eval.slot_count}")
        ct_ip = broker_score(state, state.ct_eval, ct_i)
    except (CkksError, DimensionMismatch) as exc:
        text = f"candidate {msg.sequence}: {type(exc).__name__}: {exc}"
        return SessionMessage(state.session_id, MsgType.ERROR, msg.sequence, text.encode())
    state.score_seconds += time.perf_counter() - t0
    state.scored += 1
    return SessionMessage(state.session_id, MsgType.SCORE_RESULT, msg.sequence, serialize_ciphertext(ct_ip))
