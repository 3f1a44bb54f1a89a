"""Binary formats for ciphertexts ("TIPC") and key material ("TIPK").

All integers are little-endian. Ciphertext parts go on the wire in the
coefficient domain; key polynomials are stored in the NTT domain exactly as
held in memory, since only this library consumes them.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .errors import MalformedFrame, ParamsMismatch, VersionMismatch
from .params import CkksParams
from .rns import get_context
from .scheme import Ciphertext, EvalKeys, KeySet, PublicKey, SecretKey, SwitchingKey

FORMAT_VERSION = 1
CT_MAGIC = b"TIPC"
KEY_MAGIC = b"TIPK"

# magic | version | params hash
_PREFIX = struct.Struct("<4sH32s")
# level | num_parts | scale_log2 | slot_count_used
_CT_HEAD = struct.Struct("<BBdI")

KIND_PUBLIC, KIND_SECRET, KIND_EVAL, KIND_KEYSET = 1, 2, 3, 4
_ROLE_PK, _ROLE_SK, _ROLE_RELIN, _ROLE_GALOIS = 0, 1, 2, 3


class _Reader:
    def __init__(self, data: bytes):
        self.view = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.view):
            raise MalformedFrame(f"truncated frame: need {n} bytes at offset {self.pos}")
        out = self.view[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def finish(self):
        if self.pos != len(self.view):
            raise MalformedFrame(f"{len(self.view) - self.pos} trailing bytes")


def _read_prefix(r: _Reader, magic: bytes, params: CkksParams):
    got_magic, version, phash = r.unpack(_PREFIX)
    if got_magic != magic:
        raise MalformedFrame(f"bad magic {bytes(got_magic)!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, this build reads {FORMAT_VERSION}")
    if phash != params.params_hash:
        raise ParamsMismatch("frame was produced under a different parameter set")


# -- ciphertexts -----------------------------------------------------------


def serialize_ciphertext(ct: Ciphertext) -> bytes:
    ctx = get_context(ct.params)
    rows = ctx.level_rows(ct.level)
    out = [
        _PREFIX.pack(CT_MAGIC, FORMAT_VERSION, ct.params.params_hash),
        _CT_HEAD.pack(ct.level, len(ct.parts), ct.scale_log2, ct.slot_count),
    ]
    for part in ct.parts:
        coeff = ctx.intt(part.copy(), rows)
        out.append(struct.pack("<I", ctx.n))
        out.append(coeff.astype("<u8", copy=False).tobytes())
    return b"".join(out)


def deserialize_ciphertext(data: bytes, params: CkksParams) -> Ciphertext:
    r = _Reader(data)
    _read_prefix(r, CT_MAGIC, params)
    level, nparts, scale_log2, slot_count = r.unpack(_CT_HEAD)
    if level > params.max_level:
        raise MalformedFrame(f"level {level} outside chain")
    if nparts not in (2, 3):
        raise MalformedFrame(f"ciphertext with {nparts} parts")
    if not math.isfinite(scale_log2) or not 0 < slot_count <= params.slots:
        raise MalformedFrame("bad scale or slot count")
    ctx = get_context(params)
    rows = ctx.level_rows(level)
    n = params.ring_degree
    parts = []
    for _ in range(nparts):
        (count,) = r.unpack(struct.Struct("<I"))
        if count != n:
            raise MalformedFrame(f"part has {count} coefficients, ring degree is {n}")
        raw = np.frombuffer(r.take(8 * n * len(rows)), dtype="<u8").reshape(len(rows), n)
        arr = raw.astype(np.uint64)
        if np.any(arr >= ctx.qvec(rows)[:, None]):
            raise MalformedFrame("residue not reduced modulo its prime")
        parts.append(ctx.ntt(arr, rows))
    r.finish()
    return Ciphertext(params, tuple(parts), scale_log2, level, slot_count)


# -- keys ------------------------------------------------------------------

_ENTRY = struct.Struct("<BiIB")  # role, tag (rotation step), galois element, ndim


def _pack_array(role: int, tag: int, galois: int, arr: np.ndarray) -> bytes:
    head = _ENTRY.pack(role, tag, galois, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + np.ascontiguousarray(arr).astype("<u8", copy=False).tobytes()


def _unpack_array(r: _Reader):
    role, tag, galois, ndim = r.unpack(_ENTRY)
    if not 1 <= ndim <= 4:
        raise MalformedFrame(f"bad array rank {ndim}")
    shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
    size = math.prod(shape)
    arr = np.frombuffer(r.take(8 * size), dtype="<u8").astype(np.uint64).reshape(shape)
    return role, tag, galois, arr


def _entries_for(obj) -> tuple[int, list[bytes]]:
    if isinstance(obj, PublicKey):
        return KIND_PUBLIC, [_pack_array(_ROLE_PK, 0, 0, np.stack([obj.b, obj.a]))]
    if isinstance(obj, SecretKey):
        return KIND_SECRET, [_pack_array(_ROLE_SK, 0, 0, obj.ntt)]
    if isinstance(obj, (EvalKeys, KeySet)):
        ents = [_pack_array(_ROLE_RELIN, 0, 0, np.stack([obj.relin_key.b, obj.relin_key.a]))]
        for step in sorted(obj.galois_keys):
            key = obj.galois_keys[step]
            ents.append(_pack_array(_ROLE_GALOIS, step, key.galois_element, np.stack([key.b, key.a])))
        if isinstance(obj, KeySet):
            pk, sk = obj.public_key, obj.secret_key
            ents = [
                _pack_array(_ROLE_PK, 0, 0, np.stack([pk.b, pk.a])),
                _pack_array(_ROLE_SK, 0, 0, sk.ntt),
            ] + ents
            return KIND_KEYSET, ents
        return KIND_EVAL, ents
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def serialize_keys(obj) -> bytes:
    """Serialize a PublicKey, SecretKey, EvalKeys or full KeySet."""
    kind, entries = _entries_for(obj)
    return b"".join(
        [_PREFIX.pack(KEY_MAGIC, FORMAT_VERSION, obj.params.params_hash),
         struct.pack("<BI", kind, len(entries))] + entries
    )


def _secret_from_ntt(params: CkksParams, s_ntt: np.ndarray) -> SecretKey:
    ctx = get_context(params)
    row0 = ctx.intt(s_ntt[:1].copy(), (0,))
    coeffs = ctx.centered(row0[0], 0)
    if np.any(np.abs(coeffs) > 1):
        raise MalformedFrame("secret key is not ternary")
    return SecretKey(params, coeffs, s_ntt)


def deserialize_keys(data: bytes, params: CkksParams):
    r = _Reader(data)
    _read_prefix(r, KEY_MAGIC, params)
    kind, count = r.unpack(struct.Struct("<BI"))
    if kind not in (KIND_PUBLIC, KIND_SECRET, KIND_EVAL, KIND_KEYSET):
        raise MalformedFrame(f"unknown key kind {kind}")
    n = params.ring_degree
    nq = params.max_level + 1
    pk = sk = relin = None
    galois = {}
    for _ in range(count):
        role, tag, g, arr = _unpack_array(r)
        if arr.shape[-1] != n:
            raise MalformedFrame("key polynomial length does not match ring degree")
        if role == _ROLE_PK:
            if arr.shape != (2, nq, n):
                raise MalformedFrame("bad public key shape")
            pk = PublicKey(params, arr[0].copy(), arr[1].copy())
        elif role == _ROLE_SK:
            if arr.shape != (nq + 1, n):
                raise MalformedFrame("bad secret key shape")
            sk = _secret_from_ntt(params, arr)
        elif role in (_ROLE_RELIN, _ROLE_GALOIS):
            if arr.ndim != 4 or arr.shape[0] != 2 or arr.shape[2:] != (nq + 1, n):
                raise MalformedFrame("bad switching key shape")
            key = SwitchingKey(params, arr[0].copy(), arr[1].copy(), g)
            if role == _ROLE_RELIN:
                relin = key
            else:
                galois[tag] = key
        else:
            raise MalformedFrame(f"unknown key role {role}")
    r.finish()
    if kind == KIND_PUBLIC and pk is not None:
        return pk
    if kind == KIND_SECRET and sk is not None:
        return sk
    if kind == KIND_EVAL and relin is not None:
        return EvalKeys(params, relin, galois)
    if kind == KIND_KEYSET and None not in (pk, sk, relin):
        return KeySet(params, pk, sk, relin, galois)
    raise MalformedFrame("key file is missing required entries")
