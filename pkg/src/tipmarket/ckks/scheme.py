"""CKKS key generation, encryption and the depth-1 circuit used for scoring.

Ciphertext parts are kept in the NTT domain over the active primes. Key
switching (relinearization and rotations) decomposes the input into one digit
per RNS prime (optionally split further into w-bit digits), multiplies by keys
defined modulo Q*P, and divides the result by the special prime P.

Every ciphertext carries a heuristic bound on its slot error (``noise_bound``,
in message units) and on its slot magnitudes (``message_bound``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .encoding import Plaintext, next_power_of_two
from .errors import DepthExhausted, LevelMismatch, MissingGaloisKey, Overflow, ScaleMismatch
from .params import CkksParams
from .rns import RnsContext, get_context

# Tail factor for per-slot error bounds (heuristic, Gaussian tails).
_TAIL = 6.0
_CBD_ETA = None  # derived from sigma at sampling time


# -- sampling --------------------------------------------------------------


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _sample_error(rng: np.random.Generator, n: int, sigma: float) -> np.ndarray:
    """Centered binomial with variance ~sigma**2."""
    eta = max(1, round(2 * sigma * sigma))
    return rng.binomial(eta, 0.5, n).astype(np.int64) - rng.binomial(eta, 0.5, n).astype(np.int64)


def _sample_ternary(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(-1, 2, n).astype(np.int64)


def _sample_secret(rng: np.random.Generator, n: int, hamming_weight: int) -> np.ndarray:
    s = np.zeros(n, dtype=np.int64)
    idx = rng.choice(n, size=hamming_weight, replace=False)
    s[idx] = rng.choice(np.array([-1, 1]), size=hamming_weight)
    return s


def _sample_uniform(rng: np.random.Generator, ctx: RnsContext, rows) -> np.ndarray:
    return np.stack([rng.integers(0, ctx.moduli[r], ctx.n, dtype=np.uint64) for r in rows])


# -- key material ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SecretKey:
    params: CkksParams
    coeffs: np.ndarray  # int64 ternary, length N
    ntt: np.ndarray  # (L + 2, N) over chain primes and P


@dataclass(frozen=True, eq=False)
class PublicKey:
    params: CkksParams
    b: np.ndarray  # (L + 1, N) NTT domain, b = -a*s + e
    a: np.ndarray


@dataclass(frozen=True, eq=False)
class SwitchingKey:
    """Key-switching key; digit d is (b_d, a_d) over all chain primes and P."""

    params: CkksParams
    b: np.ndarray  # (digits, L + 2, N)
    a: np.ndarray
    galois_element: int = 0


@dataclass(frozen=True, eq=False)
class EvalKeys:
    """Public evaluation keys: everything the broker needs, nothing it must not have."""

    params: CkksParams
    relin_key: SwitchingKey
    galois_keys: dict = field(default_factory=dict)  # rotation step -> SwitchingKey


@dataclass(frozen=True, eq=False)
class KeySet:
    params: CkksParams
    public_key: PublicKey
    secret_key: SecretKey
    relin_key: SwitchingKey
    galois_keys: dict

    @property
    def eval_keys(self) -> EvalKeys:
        return EvalKeys(self.params, self.relin_key, dict(self.galois_keys))


def _digit_layout(params: CkksParams) -> list[tuple[int, int]]:
    """(prime index, bit shift) for every key-switching digit."""
    w = params.decomposition_log_base
    out = []
    for i, q in enumerate(params.modulus_chain):
        if w == 0 or w >= q.bit_length():
            out.append((i, 0))
        else:
            out.extend((i, sh) for sh in range(0, q.bit_length(), w))
    return out


def _make_switching_key(ctx, rng, s_ntt, target_ntt, galois_element=0) -> SwitchingKey:
    params = ctx.params
    rows = ctx.level_rows(params.max_level, special=True)
    digits = _digit_layout(params)
    P = params.special_modulus
    bs, as_ = [], []
    for prime_idx, shift in digits:
        a = _sample_uniform(rng, ctx, rows)
        e = ctx.ntt(ctx.from_signed(_sample_error(rng, ctx.n, params.noise_stddev), rows), rows)
        b = ctx.sub(e, ctx.mul(a, s_ntt, rows), rows)
        q = ctx.moduli[prime_idx]
        factor = np.zeros(len(rows), dtype=np.uint64)
        factor[prime_idx] = (P % q) * pow(2, shift, q) % q
        b = ctx.add(b, ctx.mul_scalar(target_ntt, factor, rows), rows)
        bs.append(b)
        as_.append(a)
    return SwitchingKey(params, np.stack(bs), np.stack(as_), galois_element)


def power_of_two_steps(slots: int) -> list[int]:
    return [1 << i for i in range(slots.bit_length() - 1)]


def keygen(params: CkksParams, seed: int, rotation_steps=None) -> KeySet:
    """Deterministic key generation.

    ``rotation_steps`` defaults to every power of two below N/2 (1 .. N/4);
    passing a subset trades rotation range for key size.
    """
    ctx = get_context(params)
    root = np.random.SeedSequence(int(seed))
    sk_seq, pk_seq, rl_seq, gk_seq = root.spawn(4)
    n = ctx.n
    rows_all = ctx.level_rows(params.max_level, special=True)
    rows_q = ctx.level_rows(params.max_level)

    s = _sample_secret(np.random.default_rng(sk_seq), n, n // 2)
    s_ntt = ctx.ntt(ctx.from_signed(s, rows_all), rows_all)
    secret = SecretKey(params, s, s_ntt)

    rng = np.random.default_rng(pk_seq)
    a = _sample_uniform(rng, ctx, rows_q)
    e = ctx.ntt(ctx.from_signed(_sample_error(rng, n, params.noise_stddev), rows_q), rows_q)
    s_q = s_ntt[: len(rows_q)]
    public = PublicKey(params, ctx.sub(e, ctx.mul(a, s_q, rows_q), rows_q), a)

    relin = _make_switching_key(
        ctx, np.random.default_rng(rl_seq), s_ntt, ctx.mul(s_ntt, s_ntt, rows_all)
    )

    steps = power_of_two_steps(params.slots) if rotation_steps is None else sorted(set(rotation_steps))
    galois = {}
    for step, seq in zip(steps, gk_seq.spawn(len(steps))):
        g = ctx.galois_element(step)
        target = s_ntt[:, ctx.ntt_permutation(g)]
        galois[step] = _make_switching_key(ctx, np.random.default_rng(seq), s_ntt, target, g)
    return KeySet(params, public, secret, relin, galois)


# -- ciphertexts -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Ciphertext:
    params: CkksParams
    parts: tuple  # 2 or 3 arrays of shape (level + 1, N), NTT domain
    scale_log2: float
    level: int
    slot_count: int
    noise_bound: float = float("inf")
    message_bound: float = float("inf")

    @property
    def scale(self) -> float:
        return 2.0 ** self.scale_log2

    @property
    def slot_count_used(self) -> int:
        return self.slot_count


def _fresh_noise(params: CkksParams, scale: float) -> float:
    n = params.ring_degree
    var = params.noise_stddev ** 2 * (2 * n / 3 + 1 + n / 2) + 1 / 12
    return _TAIL * math.sqrt(n * var) / scale


def _rounding_noise(params: CkksParams, scale: float) -> float:
    """Slot error from rounding c0 + c1*s by +-1/2 (rescale, mod-down)."""
    n = params.ring_degree
    return _TAIL * math.sqrt(n * (1 + n / 2) / 12) / scale


def _keyswitch_noise(params: CkksParams, level: int, scale: float) -> float:
    n = params.ring_degree
    digits = [d for d in _digit_layout(params) if d[0] <= level]
    w = params.decomposition_log_base
    var = 0.0
    for prime_idx, _ in digits:
        q = params.modulus_chain[prime_idx]
        span = q if w == 0 or w >= q.bit_length() else 2 ** w
        var += n * (span ** 2 / 12) * params.noise_stddev ** 2
    var /= params.special_modulus ** 2
    return _TAIL * math.sqrt(n * var) / scale + _rounding_noise(params, scale)


def encrypt(public_key: PublicKey, pt: Plaintext, seed=None) -> Ciphertext:
    """Public-key encryption. ``seed`` (int or Generator) fixes the randomness."""
    params = public_key.params
    ctx = get_context(params)
    rng = _as_rng(seed)
    rows = ctx.level_rows(pt.level)
    nr = len(rows)
    u = ctx.ntt(ctx.from_signed(_sample_ternary(rng, ctx.n), rows), rows)
    e0 = ctx.from_signed(_sample_error(rng, ctx.n, params.noise_stddev), rows)
    e1 = ctx.from_signed(_sample_error(rng, ctx.n, params.noise_stddev), rows)
    m = ctx.add(pt.coeffs, e0, rows)
    ctx.ntt(m, rows)
    ctx.ntt(e1, rows)
    c0 = ctx.add(ctx.mul(public_key.b[:nr], u, rows), m, rows)
    c1 = ctx.add(ctx.mul(public_key.a[:nr], u, rows), e1, rows)
    return Ciphertext(
        params, (c0, c1), pt.scale_log2, pt.level, pt.slot_count,
        noise_bound=_fresh_noise(params, pt.scale), message_bound=pt.message_bound,
    )


def decrypt(secret_key: SecretKey, ct: Ciphertext) -> Plaintext:
    params = secret_key.params
    if not 0 <= ct.level <= params.max_level:
        raise LevelMismatch(f"ciphertext level {ct.level} outside chain of {params.max_level + 1}")
    ctx = get_context(params)
    rows = ctx.level_rows(ct.level)
    s = secret_key.ntt[: len(rows)]
    acc = ct.parts[0].copy()
    s_pow = s
    for part in ct.parts[1:]:
        ctx.mul_acc(acc, part, s_pow, rows)
        s_pow = ctx.mul(s_pow, s, rows)
    ctx.intt(acc, rows)
    return Plaintext(acc, ct.scale_log2, ct.level, ct.slot_count, ct.message_bound)


# -- homomorphic operations ------------------------------------------------


def _check_compatible(ct1: Ciphertext, ct2: Ciphertext):
    if ct1.params != ct2.params:
        raise LevelMismatch("ciphertexts under different parameters")
    if ct1.level != ct2.level:
        raise LevelMismatch(f"levels differ: {ct1.level} vs {ct2.level}")
    if not math.isclose(ct1.scale_log2, ct2.scale_log2, rel_tol=0, abs_tol=1e-9):
        raise ScaleMismatch(f"scales differ: 2^{ct1.scale_log2} vs 2^{ct2.scale_log2}")


def he_add(ct1: Ciphertext, ct2: Ciphertext) -> Ciphertext:
    _check_compatible(ct1, ct2)
    if len(ct1.parts) != len(ct2.parts):
        raise LevelMismatch("cannot add ciphertexts of different degree")
    ctx = get_context(ct1.params)
    rows = ctx.level_rows(ct1.level)
    parts = tuple(ctx.add(a, b, rows) for a, b in zip(ct1.parts, ct2.parts))
    return replace(
        ct1, parts=parts, slot_count=max(ct1.slot_count, ct2.slot_count),
        noise_bound=ct1.noise_bound + ct2.noise_bound,
        message_bound=ct1.message_bound + ct2.message_bound,
    )


def _mod_down(ctx: RnsContext, x: np.ndarray, level: int) -> np.ndarray:
    """Divide an NTT-domain polynomial over (q_0..q_level, P) by P with rounding."""
    rows = ctx.level_rows(level)
    sp = ctx.special_index
    last = x[-1:].copy()
    ctx.intt(last, (sp,))
    centered = ctx.centered(last[0], sp)
    correction = ctx.ntt(ctx.from_signed(centered, rows), rows)
    diff = ctx.sub(x[:-1], correction, rows)
    p_inv = [pow(ctx.moduli[sp] % ctx.moduli[r], -1, ctx.moduli[r]) for r in rows]
    return ctx.mul_scalar(diff, p_inv, rows)


def _key_switch(ctx: RnsContext, c: np.ndarray, level: int, key: SwitchingKey):
    """Return (k0, k1) with k0 + k1*s ~= c * s' where key encrypts s'."""
    params = ctx.params
    rows = ctx.level_rows(level)
    ext = ctx.level_rows(level, special=True)
    key_rows = list(range(level + 1)) + [ctx.special_index]
    coeff = ctx.intt(c.copy(), rows)
    w = params.decomposition_log_base
    acc0 = np.zeros((len(ext), ctx.n), dtype=np.uint64)
    acc1 = np.zeros_like(acc0)
    for d, (prime_idx, shift) in enumerate(_digit_layout(params)):
        if prime_idx > level:
            continue
        q = ctx.moduli[prime_idx]
        if w == 0 or w >= q.bit_length():
            digit = ctx.centered(coeff[prime_idx], prime_idx)
        else:
            digit = ((coeff[prime_idx] >> np.uint64(shift)) & np.uint64((1 << w) - 1)).astype(np.int64)
        dx = ctx.ntt(ctx.from_signed(digit, ext), ext)
        ctx.mul_acc(acc0, dx, np.ascontiguousarray(key.b[d][key_rows]), ext)
        ctx.mul_acc(acc1, dx, np.ascontiguousarray(key.a[d][key_rows]), ext)
    return _mod_down(ctx, acc0, level), _mod_down(ctx, acc1, level)


def _rescale_poly(ctx: RnsContext, x: np.ndarray, level: int, ntt_domain: bool) -> np.ndarray:
    rows = ctx.level_rows(level - 1)
    last = x[level:level + 1].copy()
    if ntt_domain:
        ctx.intt(last, (level,))
    centered = ctx.centered(last[0], level)
    corr = ctx.from_signed(centered, rows)
    if ntt_domain:
        ctx.ntt(corr, rows)
    diff = ctx.sub(x[:level], corr, rows)
    q_inv = [pow(ctx.moduli[level] % ctx.moduli[r], -1, ctx.moduli[r]) for r in rows]
    return ctx.mul_scalar(diff, q_inv, rows)


def rescale(obj):
    """Divide by the top prime of the current level, dropping one level.

    Accepts a Ciphertext or a Plaintext; the scale is divided by the dropped prime.
    """
    params = obj.params if isinstance(obj, Ciphertext) else None
    if obj.level < 1:
        raise DepthExhausted("no prime left to rescale by")
    if isinstance(obj, Plaintext):
        raise TypeError("use rescale_plaintext(pt, params) for plaintexts")
    ctx = get_context(params)
    q_top = ctx.moduli[obj.level]
    parts = tuple(_rescale_poly(ctx, p, obj.level, True) for p in obj.parts)
    new_log2 = obj.scale_log2 - math.log2(q_top)
    noise = obj.noise_bound + _rounding_noise(params, 2.0 ** new_log2)
    return replace(obj, parts=parts, level=obj.level - 1, scale_log2=new_log2, noise_bound=noise)


def rescale_plaintext(pt: Plaintext, params: CkksParams) -> Plaintext:
    if pt.level < 1:
        raise DepthExhausted("no prime left to rescale by")
    ctx = get_context(params)
    q_top = ctx.moduli[pt.level]
    coeffs = _rescale_poly(ctx, pt.coeffs, pt.level, False)
    return replace(pt, coeffs=coeffs, level=pt.level - 1, scale_log2=pt.scale_log2 - math.log2(q_top))


def relinearize(ct: Ciphertext, keys) -> Ciphertext:
    if len(ct.parts) == 2:
        return ct
    ctx = get_context(ct.params)
    rows = ctx.level_rows(ct.level)
    k0, k1 = _key_switch(ctx, ct.parts[2], ct.level, keys.relin_key)
    parts = (ctx.add(ct.parts[0], k0, rows), ctx.add(ct.parts[1], k1, rows))
    noise = ct.noise_bound + _keyswitch_noise(ct.params, ct.level, ct.scale)
    return replace(ct, parts=parts, noise_bound=noise)


def he_mul(ct1: Ciphertext, ct2: Ciphertext, keys) -> Ciphertext:
    """Slotwise product, relinearized and rescaled once."""
    _check_compatible(ct1, ct2)
    if len(ct1.parts) != 2 or len(ct2.parts) != 2:
        raise ValueError("he_mul expects relinearized (two-part) inputs")
    if ct1.level < 1:
        raise DepthExhausted("multiplication needs a level to rescale into")
    params = ct1.params
    ctx = get_context(params)
    rows = ctx.level_rows(ct1.level)
    a0, a1 = ct1.parts
    b0, b1 = ct2.parts
    d0 = ctx.mul(a0, b0, rows)
    d1 = ctx.mul(a0, b1, rows)
    ctx.mul_acc(d1, a1, b0, rows)
    d2 = ctx.mul(a1, b1, rows)

    mb1, mb2 = ct1.message_bound, ct2.message_bound
    nb1, nb2 = ct1.noise_bound, ct2.noise_bound
    noise = mb1 * nb2 + mb2 * nb1 + nb1 * nb2
    tensor = Ciphertext(
        params, (d0, d1, d2), ct1.scale_log2 + ct2.scale_log2, ct1.level,
        max(ct1.slot_count, ct2.slot_count), noise_bound=noise, message_bound=mb1 * mb2,
    )
    out = rescale(relinearize(tensor, keys))
    if math.isfinite(out.message_bound):
        if out.message_bound * out.scale >= params.modulus_product(out.level) / 2:
            raise Overflow("product magnitude exceeds the remaining modulus")
    floor = max(nb1, nb2)
    if not out.noise_bound >= floor:
        out = replace(out, noise_bound=floor)
    return out


def _rotate_pow2(ctx: RnsContext, ct: Ciphertext, step: int, keys) -> Ciphertext:
    try:
        key = keys.galois_keys[step]
    except KeyError:
        raise MissingGaloisKey(f"no Galois key for rotation step {step}") from None
    rows = ctx.level_rows(ct.level)
    perm = ctx.ntt_permutation(key.galois_element)
    c0 = ct.parts[0][:, perm]
    c1 = np.ascontiguousarray(ct.parts[1][:, perm])
    k0, k1 = _key_switch(ctx, c1, ct.level, key)
    noise = ct.noise_bound + _keyswitch_noise(ct.params, ct.level, ct.scale)
    return replace(ct, parts=(ctx.add(c0, k0, rows), k1), noise_bound=noise)


def rotate(ct: Ciphertext, steps: int, keys) -> Ciphertext:
    """Cyclic left rotation of the slot vector by ``steps``.

    Non power-of-two steps are composed from the power-of-two keys.
    """
    if len(ct.parts) != 2:
        raise ValueError("rotate expects a relinearized ciphertext")
    ctx = get_context(ct.params)
    steps %= ct.params.slots
    out = ct
    bit = 1
    while steps:
        if steps & 1:
            out = _rotate_pow2(ctx, out, bit, keys)
        steps >>= 1
        bit <<= 1
    if out is ct:
        out = replace(ct, parts=tuple(p.copy() for p in ct.parts))
    return out


def rotate_and_sum(ct: Ciphertext, k: int, keys) -> Ciphertext:
    """Slot 0 of the result holds the sum of the first k slots.

    Slots k .. next_pow2(k)-1 must be zero (the encoder's padding contract).
    """
    if not 1 <= k <= ct.params.slots:
        raise ValueError(f"k={k} outside 1..{ct.params.slots}")
    kp = next_power_of_two(k)
    out = ct
    step = 1
    while step < kp:
        out = he_add(out, rotate(out, step, keys))
        step <<= 1
    return replace(out, slot_count=1)
