import numpy as np
import pytest

from tipmarket import kernels
from tipmarket.ckks import default_params, small_params
from tipmarket.ckks.rns import get_context, schoolbook_negacyclic


def _rand(ctx, rows, rng):
    return np.stack([rng.integers(0, int(ctx.moduli[r]), ctx.n, dtype=np.uint64) for r in rows])


def _backends():
    names = ["python"]
    try:
        kernels.get_backend("native")
        names.append("native")
    except ImportError:
        pass
    return names


def test_backend_selected():
    assert kernels.BACKEND in ("native", "python")
    with pytest.raises(ValueError):
        kernels.get_backend("gpu")


@pytest.mark.skipif("native" not in _backends(), reason="compiled kernels not built")
def test_native_matches_fallback():
    ctx = get_context(default_params())
    rows = tuple(range(len(ctx.moduli)))
    psi, psi_s, ipsi, ipsi_s, q, ninv, ninv_s = ctx._table(rows)
    rng = np.random.default_rng(0)
    a, b = _rand(ctx, rows, rng), _rand(ctx, rows, rng)
    c = np.array([int(rng.integers(0, int(m))) for m in ctx.moduli], dtype=np.uint64)
    nat, py = kernels.get_backend("native"), kernels.get_backend("python")

    outs = []
    for k in (nat, py):
        x = a.copy()
        k["ntt_forward"](x, psi, psi_s, q)
        y = x.copy()
        k["ntt_inverse"](y, ipsi, ipsi_s, q, ninv, ninv_s)
        m = np.empty_like(a)
        k["mulmod"](a, b, q, m)
        acc = a.copy()
        k["mulmod_acc"](acc, a, b, q)
        s = np.empty_like(a)
        k["mulmod_scalar"](a, c, q, s)
        outs.append((x, y, m, acc, s))
    for u, v in zip(*outs):
        assert np.array_equal(u, v)
    # inverse undoes forward
    assert np.array_equal(outs[0][1], a)


@pytest.mark.parametrize("backend", _backends())
def test_mulmod_against_python_ints(backend):
    k = kernels.get_backend(backend)
    q = np.array([1152921504606830593, 1099511922689], dtype=np.uint64)
    rng = np.random.default_rng(1)
    a = np.stack([rng.integers(0, int(x), 64, dtype=np.uint64) for x in q])
    b = np.stack([rng.integers(0, int(x), 64, dtype=np.uint64) for x in q])
    out = np.empty_like(a)
    k["mulmod"](a, b, q, out)
    for r in range(2):
        expect = [int(x) * int(y) % int(q[r]) for x, y in zip(a[r], b[r])]
        assert [int(v) for v in out[r]] == expect


def test_schoolbook_tiny_by_hand():
    # (1 + x) * x^3 = x^3 + x^4 = x^3 - 1 in Z_17[x]/(x^4 + 1)
    a = np.array([1, 1, 0, 0], dtype=np.uint64)
    b = np.array([0, 0, 0, 1], dtype=np.uint64)
    assert schoolbook_negacyclic(a, b, 17).tolist() == [16, 0, 0, 1]


def test_schoolbook_vs_ntt_50_pairs():
    params = small_params()
    ctx = get_context(params)
    rows = tuple(range(len(ctx.moduli)))
    rng = np.random.default_rng(2024)
    for _ in range(50):
        a, b = _rand(ctx, rows, rng), _rand(ctx, rows, rng)
        fast = ctx.poly_mul(a, b, rows)
        slow = ctx.poly_mul(a, b, rows, schoolbook=True)
        assert np.array_equal(fast, slow)
