"""Canonical-embedding encoder: real slot vectors <-> scaled integer polynomials.

Slot j is the evaluation of m(X) at zeta^(5^j mod 2N), zeta = exp(i*pi/N), so
the automorphism X -> X^(5^r) rotates slots left by r. Both directions run as
one complex FFT of length N.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import Overflow
from .params import CkksParams
from .rns import get_context


@dataclass(frozen=True, eq=False)
class Plaintext:
    """Coefficient-domain RNS polynomial at ``level`` with its scale."""

    coeffs: np.ndarray  # (level + 1, N) uint64
    scale_log2: float
    level: int
    slot_count: int
    message_bound: float = float("inf")

    @property
    def scale(self) -> float:
        return 2.0 ** self.scale_log2


@functools.lru_cache(maxsize=8)
def _embedding(n: int):
    two_n = 2 * n
    slots = n // 2
    exps = np.empty(slots, dtype=np.int64)
    e = 1
    for j in range(slots):
        exps[j] = e
        e = e * 5 % two_n
    slot_idx = (exps - 1) // 2
    conj_idx = (two_n - exps - 1) // 2
    k = np.arange(n)
    twist = np.exp(1j * np.pi * k / n)
    return slot_idx, conj_idx, twist


def next_power_of_two(k: int) -> int:
    return 1 if k <= 1 else 1 << (k - 1).bit_length()


def _slots_to_coeffs(z: np.ndarray, n: int) -> np.ndarray:
    slot_idx, conj_idx, twist = _embedding(n)
    vals = np.zeros(n, dtype=complex)
    vals[slot_idx] = z
    vals[conj_idx] = np.conj(z)
    return (np.fft.fft(vals) / n * np.conj(twist)).real


def _coeffs_to_slots(m: np.ndarray, n: int) -> np.ndarray:
    slot_idx, _, twist = _embedding(n)
    vals = np.fft.ifft(m * twist) * n
    return vals[slot_idx]


def encode(values, params: CkksParams, level: int | None = None,
           scale_log2: float | None = None) -> Plaintext:
    """Encode a real vector of length k <= N/2 into a plaintext.

    Unused slots are zero, which realizes the zero-padding to the next power
    of two that ``rotate_and_sum`` relies on.
    """
    v = np.asarray(values, dtype=float).ravel()
    k = v.size
    n = params.ring_degree
    if k > params.slots:
        raise ValueError(f"{k} values exceed the {params.slots} available slots")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot encode non-finite values")
    level = params.max_level if level is None else level
    if not 0 <= level <= params.max_level:
        raise ValueError(f"level {level} outside chain")
    scale_log2 = params.scale_log2 if scale_log2 is None else float(scale_log2)
    scale = 2.0 ** scale_log2

    bound = float(np.max(np.abs(v))) if k else 0.0
    if bound * scale >= params.modulus_product(level) / 2:
        raise Overflow(
            f"max|v|={bound:g} at scale 2^{scale_log2:g} exceeds half the level-{level} modulus"
        )

    z = np.zeros(params.slots, dtype=complex)
    z[:k] = v
    m = np.rint(_slots_to_coeffs(z, n) * scale)
    if np.max(np.abs(m), initial=0.0) < 2.0 ** 62:
        ints = m.astype(np.int64)
    else:
        ints = np.array([int(x) for x in m], dtype=object)
    ctx = get_context(params)
    coeffs = ctx.from_signed(ints, ctx.level_rows(level))
    return Plaintext(coeffs, scale_log2, level, k, bound)


def decode(pt: Plaintext, params: CkksParams, k: int | None = None) -> np.ndarray:
    """Real parts of the first ``k`` slots (default: the plaintext's slot count)."""
    if pt.scale <= 0:
        raise ValueError("plaintext scale must be positive")
    ctx = get_context(params)
    ints = ctx.crt_centered(pt.coeffs, ctx.level_rows(pt.level))
    m = ints.astype(float)
    z = _coeffs_to_slots(m / pt.scale, params.ring_degree)
    k = pt.slot_count if k is None else k
    return z[:k].real.copy()
