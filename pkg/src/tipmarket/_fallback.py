"""Pure numpy implementations of the RNS kernels in ``_native.pyx``.

Same signatures and in-place semantics as the compiled module. Modular
products use an extended-precision quotient estimate when the platform's
``longdouble`` carries a 64-bit mantissa, and exact Python integers otherwise.
"""

import numpy as np

_LONG_DOUBLE_OK = np.finfo(np.longdouble).nmant >= 63


def _mulmod_ld(a, b, q):
    q = np.asarray(q, dtype=np.uint64)
    quot = np.floor(
        a.astype(np.longdouble) * b.astype(np.longdouble) / q.astype(np.longdouble)
    ).astype(np.uint64)
    r = (a * b - quot * q).view(np.int64)
    qi = q.astype(np.int64)
    r = np.where(r < 0, r + qi, r)
    r = np.where(r >= qi, r - qi, r)
    return r.astype(np.uint64)


def _mulmod_obj(a, b, q):
    q = np.broadcast_to(np.asarray(q, dtype=np.uint64), np.broadcast(a, b).shape)
    prod = a.astype(object) * b.astype(object) % q.astype(object)
    return prod.astype(np.uint64)


_mul = _mulmod_ld if _LONG_DOUBLE_OK else _mulmod_obj


def _addmod(a, b, q):
    s = a + b
    return np.where(s >= q, s - q, s)


def _submod(a, b, q):
    return np.where(a >= b, a - b, a + (q - b))


def ntt_forward(a, psi, psi_shoup, q):
    rows, n = a.shape
    qc = np.asarray(q, dtype=np.uint64).reshape(rows, 1, 1)
    t, m = n, 1
    while m < n:
        t >>= 1
        blk = a.reshape(rows, m, 2 * t)
        s = psi[:, m:2 * m].reshape(rows, m, 1)
        u = blk[:, :, :t].copy()
        v = _mul(blk[:, :, t:], s, qc)
        blk[:, :, :t] = _addmod(u, v, qc)
        blk[:, :, t:] = _submod(u, v, qc)
        m <<= 1


def ntt_inverse(a, ipsi, ipsi_shoup, q, ninv, ninv_shoup):
    rows, n = a.shape
    qc = np.asarray(q, dtype=np.uint64).reshape(rows, 1, 1)
    t, m = 1, n
    while m > 1:
        h = m >> 1
        blk = a.reshape(rows, h, 2 * t)
        s = ipsi[:, h:2 * h].reshape(rows, h, 1)
        u = blk[:, :, :t].copy()
        v = blk[:, :, t:].copy()
        blk[:, :, :t] = _addmod(u, v, qc)
        blk[:, :, t:] = _mul(_submod(u, v, qc), s, qc)
        t <<= 1
        m >>= 1
    a[...] = _mul(a, np.asarray(ninv, dtype=np.uint64)[:, None], qc[:, :, 0])


def mulmod(a, b, q, out):
    out[...] = _mul(a, b, np.asarray(q, dtype=np.uint64)[:, None])


def mulmod_acc(acc, a, b, q):
    qc = np.asarray(q, dtype=np.uint64)[:, None]
    acc[...] = _addmod(acc, _mul(a, b, qc), qc)


def mulmod_scalar(a, c, q, out):
    qc = np.asarray(q, dtype=np.uint64)[:, None]
    cc = (np.asarray(c, dtype=np.uint64)[:, None]) % qc
    out[...] = _mul(a, np.broadcast_to(cc, a.shape), qc)
