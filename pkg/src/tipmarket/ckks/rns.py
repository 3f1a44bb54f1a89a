"""RNS polynomial arithmetic over Z_q[X]/(X^N + 1).

Polynomials are ``uint64`` arrays of shape ``(rows, N)``, one row per prime.
Row indices refer to ``RnsContext.moduli``: the modulus chain followed by the
special prime (index ``L + 1``).
"""

from __future__ import annotations

import functools

import numpy as np

from .. import kernels
from .params import CkksParams


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.uint64)


def _bit_reverse(n_bits: int) -> np.ndarray:
    idx = np.arange(1 << n_bits, dtype=np.int64)
    out = np.zeros_like(idx)
    for b in range(n_bits):
        out |= ((idx >> b) & 1) << (n_bits - 1 - b)
    return out


def _primitive_2n_root(q: int, n: int) -> int:
    exp = (q - 1) // (2 * n)
    for g in range(2, 10_000):
        psi = pow(g, exp, q)
        if pow(psi, n, q) == q - 1:
            return psi
    raise ValueError(f"no primitive 2N-th root of unity mod {q}")


def _shoup(w: np.ndarray, q: int) -> np.ndarray:
    return np.array([(int(x) << 64) // q for x in w], dtype=np.uint64)


class RnsContext:
    """Precomputed tables for one parameter set. Immutable after construction."""

    def __init__(self, params: CkksParams):
        self.params = params
        self.n = n = params.ring_degree
        self.log_n = n.bit_length() - 1
        self.moduli = tuple(params.modulus_chain) + (params.special_modulus,)
        self.special_index = len(self.moduli) - 1
        self.q = np.array(self.moduli, dtype=np.uint64)

        brv = _bit_reverse(self.log_n)
        self._brv = brv
        rows = len(self.moduli)
        self.psi = np.zeros((rows, n), dtype=np.uint64)
        self.psi_shoup = np.zeros_like(self.psi)
        self.ipsi = np.zeros_like(self.psi)
        self.ipsi_shoup = np.zeros_like(self.psi)
        self.ninv = np.zeros(rows, dtype=np.uint64)
        self.ninv_shoup = np.zeros(rows, dtype=np.uint64)
        for r, q in enumerate(self.moduli):
            psi = _primitive_2n_root(q, n)
            ipsi = pow(psi, -1, q)
            pw = [1] * n
            ipw = [1] * n
            for i in range(1, n):
                pw[i] = pw[i - 1] * psi % q
                ipw[i] = ipw[i - 1] * ipsi % q
            fwd = np.array([pw[j] for j in brv], dtype=np.uint64)
            inv = np.array([ipw[j] for j in brv], dtype=np.uint64)
            self.psi[r], self.psi_shoup[r] = fwd, _shoup(fwd, q)
            self.ipsi[r], self.ipsi_shoup[r] = inv, _shoup(inv, q)
            ni = pow(n, -1, q)
            self.ninv[r] = ni
            self.ninv_shoup[r] = (ni << 64) // q

        # NTT slot i holds the evaluation at psi^(2*brv(i)+1).
        self._eval_exp = 2 * brv + 1
        self._exp_to_index = np.zeros(2 * n, dtype=np.int64)
        self._exp_to_index[self._eval_exp] = np.arange(n)
        self._tables: dict = {}
        self._perms: dict = {}

    # -- row bookkeeping ---------------------------------------------------

    def level_rows(self, level: int, special: bool = False) -> tuple[int, ...]:
        rows = tuple(range(level + 1))
        return rows + (self.special_index,) if special else rows

    def _table(self, rows: tuple[int, ...]):
        t = self._tables.get(rows)
        if t is None:
            idx = list(rows)
            t = (
                np.ascontiguousarray(self.psi[idx]),
                np.ascontiguousarray(self.psi_shoup[idx]),
                np.ascontiguousarray(self.ipsi[idx]),
                np.ascontiguousarray(self.ipsi_shoup[idx]),
                np.ascontiguousarray(self.q[idx]),
                np.ascontiguousarray(self.ninv[idx]),
                np.ascontiguousarray(self.ninv_shoup[idx]),
            )
            self._tables[rows] = t
        return t

    def qvec(self, rows) -> np.ndarray:
        return self._table(tuple(rows))[4]

    # -- transforms --------------------------------------------------------

    def ntt(self, a: np.ndarray, rows) -> np.ndarray:
        """Forward NTT in place; returns ``a``."""
        psi, psi_s, _, _, q, _, _ = self._table(tuple(rows))
        kernels.ntt_forward(a, psi, psi_s, q)
        return a

    def intt(self, a: np.ndarray, rows) -> np.ndarray:
        _, _, ipsi, ipsi_s, q, ninv, ninv_s = self._table(tuple(rows))
        kernels.ntt_inverse(a, ipsi, ipsi_s, q, ninv, ninv_s)
        return a

    # -- elementwise -------------------------------------------------------

    def mul(self, a, b, rows) -> np.ndarray:
        a, b = _c(a), _c(b)
        out = np.empty_like(a)
        kernels.mulmod(a, b, self.qvec(rows), out)
        return out

    def mul_acc(self, acc, a, b, rows) -> None:
        kernels.mulmod_acc(acc, _c(a), _c(b), self.qvec(rows))

    def mul_scalar(self, a, consts, rows) -> np.ndarray:
        a = _c(a)
        out = np.empty_like(a)
        kernels.mulmod_scalar(a, np.asarray(consts, dtype=np.uint64), self.qvec(rows), out)
        return out

    def add(self, a, b, rows) -> np.ndarray:
        q = self.qvec(rows)[:, None]
        s = a + b
        return np.where(s >= q, s - q, s)

    def sub(self, a, b, rows) -> np.ndarray:
        q = self.qvec(rows)[:, None]
        return np.where(a >= b, a - b, a + (q - b))

    def neg(self, a, rows) -> np.ndarray:
        q = self.qvec(rows)[:, None]
        return np.where(a == 0, a, q - a)

    # -- conversions -------------------------------------------------------

    def from_signed(self, coeffs: np.ndarray, rows) -> np.ndarray:
        """Reduce signed integer coefficients (int64 or object) into RNS rows."""
        out = np.empty((len(rows), self.n), dtype=np.uint64)
        if coeffs.dtype == object:
            for i, r in enumerate(rows):
                out[i] = (coeffs % self.moduli[r]).astype(np.uint64)
        else:
            c = coeffs.astype(np.int64, copy=False)
            for i, r in enumerate(rows):
                out[i] = np.mod(c, np.int64(self.moduli[r])).astype(np.uint64)
        return out

    def centered(self, row: np.ndarray, r: int) -> np.ndarray:
        """Centered int64 representative of a single coefficient-domain row."""
        q = self.moduli[r]
        x = row.astype(np.int64)
        return np.where(row > q // 2, x - np.int64(q), x)

    def crt_centered(self, a: np.ndarray, rows) -> np.ndarray:
        """Exact CRT composition to centered Python integers (object array)."""
        rows = tuple(rows)
        if len(rows) == 1:
            return self.centered(a[0], rows[0]).astype(object)
        mods = [self.moduli[r] for r in rows]
        big_q = 1
        for q in mods:
            big_q *= q
        acc = np.zeros(self.n, dtype=object)
        for i, q in enumerate(mods):
            qhat = big_q // q
            coef = qhat * pow(qhat % q, -1, q)
            acc = acc + a[i].astype(object) * coef
        acc = acc % big_q
        half = big_q // 2
        return np.where(acc > half, acc - big_q, acc)

    # -- automorphisms -----------------------------------------------------

    def galois_element(self, steps: int) -> int:
        return pow(5, steps % (self.n // 2), 2 * self.n)

    def ntt_permutation(self, galois_elt: int) -> np.ndarray:
        """Index map with ``ntt(phi_g(a)) == ntt(a)[:, perm]``."""
        perm = self._perms.get(galois_elt)
        if perm is None:
            target = (self._eval_exp * galois_elt) % (2 * self.n)
            perm = self._exp_to_index[target]
            self._perms[galois_elt] = perm
        return perm

    def automorphism_coeff(self, a: np.ndarray, galois_elt: int, rows) -> np.ndarray:
        """X -> X^g applied in the coefficient domain (reference path)."""
        n = self.n
        k = (np.arange(n) * galois_elt) % (2 * n)
        dest = k % n
        flip = k >= n
        out = np.empty_like(a)
        for i, r in enumerate(rows):
            q = np.uint64(self.moduli[r])
            vals = np.where(flip & (a[i] != 0), q - a[i], a[i])
            out[i, dest] = vals
        return out

    # -- products ----------------------------------------------------------

    def poly_mul(self, a: np.ndarray, b: np.ndarray, rows, schoolbook: bool = False) -> np.ndarray:
        """Negacyclic product of coefficient-domain polynomials.

        ``schoolbook=True`` takes the quadratic exact-integer route; it exists as
        an independent oracle for the NTT path.
        """
        rows = tuple(rows)
        if schoolbook:
            return np.stack(
                [schoolbook_negacyclic(a[i], b[i], self.moduli[r]) for i, r in enumerate(rows)]
            )
        fa = self.ntt(a.copy(), rows)
        fb = self.ntt(b.copy(), rows)
        return self.intt(self.mul(fa, fb, rows), rows)


def schoolbook_negacyclic(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    """c = a*b mod (X^N + 1, q) by direct convolution over Python integers."""
    n = len(a)
    ao = [int(x) for x in a]
    bo = np.array([int(x) for x in b], dtype=object)
    acc = np.zeros(2 * n, dtype=object)
    for i, ai in enumerate(ao):
        if ai:
            acc[i:i + n] += ai * bo
    res = (acc[:n] - acc[n:]) % q
    return res.astype(np.uint64)


@functools.lru_cache(maxsize=8)
def get_context(params: CkksParams) -> RnsContext:
    return RnsContext(params)
