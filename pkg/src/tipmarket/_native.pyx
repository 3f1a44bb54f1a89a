# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RNS kernels: negacyclic NTT and modular products on uint64 rows.

Every 2-D array is laid out one row per prime; ``q[r]`` is the modulus of row r.
All moduli must be below 2**62.
"""

cdef extern from *:
    ctypedef unsigned long long u128 "unsigned __int128"

ctypedef unsigned long long u64
ctypedef long long i64


cdef inline u64 _mul_shoup(u64 a, u64 w, u64 wp, u64 q) noexcept nogil:
    cdef u64 hi = <u64>((<u128>a * wp) >> 64)
    cdef u64 r = a * w - hi * q
    if r >= q:
        r -= q
    return r


cdef inline u64 _mulmod(u64 a, u64 b, u64 q) noexcept nogil:
    return <u64>((<u128>a * b) % q)


def ntt_forward(u64[:, ::1] a, u64[:, ::1] psi, u64[:, ::1] psi_shoup, u64[::1] q):
    """In-place forward NTT of each row (output in bit-reversed order)."""
    cdef Py_ssize_t rows = a.shape[0], n = a.shape[1]
    cdef Py_ssize_t r, m, t, i, j, j1
    cdef u64 qq, S, Sp, U, V, x
    cdef u64 *p
    cdef u64 *w
    cdef u64 *wp
    with nogil:
        for r in range(rows):
            qq = q[r]
            p = &a[r, 0]
            w = &psi[r, 0]
            wp = &psi_shoup[r, 0]
            t = n
            m = 1
            while m < n:
                t >>= 1
                for i in range(m):
                    j1 = 2 * i * t
                    S = w[m + i]
                    Sp = wp[m + i]
                    for j in range(j1, j1 + t):
                        U = p[j]
                        V = _mul_shoup(p[j + t], S, Sp, qq)
                        # branchless: moduli < 2**62 keep the sign bit free
                        x = U + V - qq
                        x += qq & <u64>((<i64>x) >> 63)
                        p[j] = x
                        x = U - V
                        p[j + t] = x + (qq & <u64>((<i64>x) >> 63))
                m <<= 1


def ntt_inverse(u64[:, ::1] a, u64[:, ::1] ipsi, u64[:, ::1] ipsi_shoup, u64[::1] q,
                u64[::1] ninv, u64[::1] ninv_shoup):
    """In-place inverse NTT of each row (input in bit-reversed order)."""
    cdef Py_ssize_t rows = a.shape[0], n = a.shape[1]
    cdef Py_ssize_t r, m, h, t, i, j, j1
    cdef u64 qq, S, Sp, U, V, x
    cdef u64 *p
    cdef u64 *w
    cdef u64 *wp
    with nogil:
        for r in range(rows):
            qq = q[r]
            p = &a[r, 0]
            w = &ipsi[r, 0]
            wp = &ipsi_shoup[r, 0]
            t = 1
            m = n
            while m > 1:
                j1 = 0
                h = m >> 1
                for i in range(h):
                    S = w[h + i]
                    Sp = wp[h + i]
                    for j in range(j1, j1 + t):
                        U = p[j]
                        V = p[j + t]
                        x = U + V - qq
                        p[j] = x + (qq & <u64>((<i64>x) >> 63))
                        x = U - V
                        x += qq & <u64>((<i64>x) >> 63)
                        p[j + t] = _mul_shoup(x, S, Sp, qq)
                    j1 += 2 * t
                t <<= 1
                m >>= 1
            S = ninv[r]
            Sp = ninv_shoup[r]
            for j in range(n):
                p[j] = _mul_shoup(p[j], S, Sp, qq)


def mulmod(u64[:, ::1] a, u64[:, ::1] b, u64[::1] q, u64[:, ::1] out):
    cdef Py_ssize_t rows = a.shape[0], n = a.shape[1], r, j
    cdef u64 qq
    with nogil:
        for r in range(rows):
            qq = q[r]
            for j in range(n):
                out[r, j] = _mulmod(a[r, j], b[r, j], qq)


def mulmod_acc(u64[:, ::1] acc, u64[:, ::1] a, u64[:, ::1] b, u64[::1] q):
    """acc <- acc + a*b (mod q), row-wise."""
    cdef Py_ssize_t rows = a.shape[0], n = a.shape[1], r, j
    cdef u64 qq, x
    with nogil:
        for r in range(rows):
            qq = q[r]
            for j in range(n):
                x = acc[r, j] + _mulmod(a[r, j], b[r, j], qq)
                if x >= qq:
                    x -= qq
                acc[r, j] = x


def mulmod_scalar(u64[:, ::1] a, u64[::1] c, u64[::1] q, u64[:, ::1] out):
    """out <- a * c[r] (mod q[r]); one constant per row."""
    cdef Py_ssize_t rows = a.shape[0], n = a.shape[1], r, j
    cdef u64 qq, cc, cp
    with nogil:
        for r in range(rows):
            qq = q[r]
            cc = c[r] % qq
            cp = <u64>((<u128>cc << 64) // qq)
            for j in range(n):
                out[r, j] = _mul_shoup(a[r, j], cc, cp, qq)
