"""CKKS parameter sets and their JSON form."""

from __future__ import annotations

import enum
import functools
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from sympy import isprime

from .errors import InvalidParams


class SecurityLabel(str, enum.Enum):
    DESK_SCALE = "DeskScale"
    CALIBRATED = "Calibrated"


# Desk-scale defaults for N = 8192. q0 holds the final message; q1, q2 sit just
# above 2**40 so a rescale by q2 keeps the scale within 1e-6 of 2**40.
DEFAULT_RING_DEGREE = 8192
DEFAULT_MODULI = (1152921504606830593, 1099511922689, 1099512004609)
DEFAULT_SPECIAL_MODULUS = 2305843009213317121
DEFAULT_SCALE_LOG2 = 40.0


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class CkksParams:
    """Immutable CKKS parameter set.

    ``modulus_chain`` is ordered q_0..q_L; a ciphertext at level l lives modulo
    q_0*...*q_l and a rescale drops q_l. ``special_modulus`` is the auxiliary
    prime P used only inside key switching. ``decomposition_log_base`` of 0
    means one key-switching digit per RNS prime; w > 0 further splits each
    residue into w-bit digits.
    """

    ring_degree: int = DEFAULT_RING_DEGREE
    modulus_chain: tuple[int, ...] = DEFAULT_MODULI
    scale_log2: float = DEFAULT_SCALE_LOG2
    noise_stddev: float = 3.2
    decomposition_log_base: int = 0
    special_modulus: int = DEFAULT_SPECIAL_MODULUS
    security_label: SecurityLabel = SecurityLabel.DESK_SCALE
    _hash: bytes = field(init=False, repr=False, compare=False, default=b"")

    def __post_init__(self):
        object.__setattr__(self, "modulus_chain", tuple(int(q) for q in self.modulus_chain))
        object.__setattr__(self, "security_label", SecurityLabel(self.security_label))
        self._validate()
        digest = hashlib.sha256(self.canonical_json().encode("ascii")).digest()
        object.__setattr__(self, "_hash", digest)

    def _validate(self):
        n = self.ring_degree
        if not _is_power_of_two(n) or n < 1024:
            raise InvalidParams(f"ring_degree must be a power of two >= 1024, got {n}")
        if len(self.modulus_chain) < 2:
            raise InvalidParams("modulus chain needs at least two primes")
        all_primes = self.modulus_chain + (self.special_modulus,)
        if len(set(all_primes)) != len(all_primes):
            raise InvalidParams("moduli must be distinct")
        scale = 2.0 ** self.scale_log2
        for q in all_primes:
            if q >= 1 << 62:
                raise InvalidParams(f"modulus {q} exceeds 62 bits")
            if q % (2 * n) != 1:
                raise InvalidParams(f"modulus {q} is not NTT-friendly (q != 1 mod 2N)")
            if not isprime(q):
                raise InvalidParams(f"modulus {q} is not prime")
        for q in self.modulus_chain:
            if scale > q:
                raise InvalidParams(f"scale 2^{self.scale_log2} exceeds modulus {q}")
        if self.special_modulus < max(self.modulus_chain):
            raise InvalidParams("special modulus must be at least the largest chain prime")
        if self.noise_stddev <= 0:
            raise InvalidParams("noise_stddev must be positive")
        if self.decomposition_log_base < 0:
            raise InvalidParams("decomposition_log_base must be >= 0")

    @property
    def slots(self) -> int:
        return self.ring_degree // 2

    @property
    def max_level(self) -> int:
        return len(self.modulus_chain) - 1

    @property
    def scale(self) -> float:
        return 2.0 ** self.scale_log2

    @property
    def params_hash(self) -> bytes:
        return self._hash

    def modulus_product(self, level: int) -> int:
        return math.prod(self.modulus_chain[: level + 1])

    def to_dict(self) -> dict:
        return {
            "ring_degree": self.ring_degree,
            "moduli": [str(q) for q in self.modulus_chain],
            "special_modulus": str(self.special_modulus),
            "scale_log2": self.scale_log2,
            "sigma": self.noise_stddev,
            "decomp_log_base": self.decomposition_log_base,
            "security_label": self.security_label.value,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "CkksParams":
        try:
            return cls(
                ring_degree=int(d["ring_degree"]),
                modulus_chain=tuple(int(q) for q in d["moduli"]),
                scale_log2=float(d.get("scale_log2", DEFAULT_SCALE_LOG2)),
                noise_stddev=float(d.get("sigma", 3.2)),
                decomposition_log_base=int(d.get("decomp_log_base", 0)),
                special_modulus=int(d.get("special_modulus", DEFAULT_SPECIAL_MODULUS)),
                security_label=d.get("security_label", "DeskScale"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidParams):
                raise
            raise InvalidParams(f"bad params document: {exc!r}") from exc

    @classmethod
    def load(cls, path) -> "CkksParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def find_ntt_primes(ring_degree: int, bits: int, count: int, above: bool = False) -> list[int]:
    """NTT-friendly primes nearest 2**bits, searching downward (or upward)."""
    m = 2 * ring_degree
    out = []
    q = ((1 << bits) // m) * m + 1
    if above:
        q += m
    step = m if above else -m
    while len(out) < count:
        if q > m and (above or q < 1 << bits) and isprime(q):
            out.append(q)
        q += step
    return out


def default_params() -> CkksParams:
    return CkksParams()


@functools.lru_cache(maxsize=4)
def small_params(ring_degree: int = 1024) -> CkksParams:
    """Fast parameters for tests; same layout as the defaults."""
    q0 = find_ntt_primes(ring_degree, 60, 1)[0]
    q1, q2 = find_ntt_primes(ring_degree, 40, 2, above=True)
    p = find_ntt_primes(ring_degree, 61, 1)[0]
    return CkksParams(ring_degree=ring_degree, modulus_chain=(q0, q1, q2), special_modulus=p)
