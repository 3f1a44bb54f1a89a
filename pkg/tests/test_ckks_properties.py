import numpy as np
from hypothesis import given, settings, strategies as st

from tipmarket.ckks import decode, decrypt, encode, encrypt, he_add, he_mul, rotate, rotate_and_sum, keygen, serialize_ciphertext, serialize_keys

SEEDS = st.integers(0, 2 ** 32 - 1)
MANY = settings(max_examples=200, deadline=None, derandomize=True)
FEW = settings(max_examples=30, deadline=None, derandomize=True)


def _pair(keys, seed, dim, bound):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-bound, bound, (2, dim))
    ca = encrypt(keys.public_key, encode(a, keys.params), seed=2 * seed)
    cb = encrypt(keys.public_key, encode(b, keys.params), seed=2 * seed + 1)
    return a, b, ca, cb


def _dec(keys, ct, k=None):
    return decode(decrypt(keys.secret_key, ct), keys.params, k)


@MANY
@given(seed=SEEDS, dim=st.integers(1, 4096))
def test_add_homomorphism(keys, seed, dim):
    a, b, ca, cb = _pair(keys, seed, dim, 10.0)
    out = he_add(ca, cb)
    err = np.max(np.abs(_dec(keys, out) - (a + b)))
    assert err <= 1e-4
    assert err <= out.noise_bound


@MANY
@given(seed=SEEDS, dim=st.integers(1, 4096))
def test_mul_homomorphism(keys, seed, dim):
    a, b, ca, cb = _pair(keys, seed, dim, 10.0)
    out = he_mul(ca, cb, keys.eval_keys)
    err = np.max(np.abs(_dec(keys, out) - a * b))
    assert err <= 1e-3
    assert err <= out.noise_bound


@FEW
@given(seed=SEEDS, k=st.sampled_from([8, 384, 4096]))
def test_inner_product(keys, seed, k):
    a, b, ca, cb = _pair(keys, seed, k, 1.0)
    got = _dec(keys, rotate_and_sum(he_mul(ca, cb, keys.eval_keys), k, keys.eval_keys), 1)[0]
    assert abs(got - a @ b) <= 1e-3 * (1 + np.linalg.norm(a) * np.linalg.norm(b))


@FEW
@given(seed=SEEDS, i=st.integers(0, 5000), j=st.integers(0, 5000))
def test_rotation_group_law(keys, seed, i, j):
    slots = keys.params.slots
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1, 1, slots)
    ct = encrypt(keys.public_key, encode(v, keys.params), seed=seed)
    ev = keys.eval_keys
    twice = _dec(keys, rotate(rotate(ct, i, ev), j, ev), slots)
    once = _dec(keys, rotate(ct, (i + j) % slots, ev), slots)
    assert np.max(np.abs(twice - once)) <= 1e-5
    assert np.max(np.abs(once - np.roll(v, -(i + j)))) <= 1e-5


@settings(max_examples=10, deadline=None, derandomize=True)
@given(seed=st.integers(0, 10 ** 6))
def test_determinism(sparams, seed):
    k1, k2 = keygen(sparams, seed), keygen(sparams, seed)
    assert serialize_keys(k1) == serialize_keys(k2)
    pt = encode(np.arange(5.0), sparams)
    assert serialize_ciphertext(encrypt(k1.public_key, pt, seed)) == serialize_ciphertext(encrypt(k2.public_key, pt, seed))
