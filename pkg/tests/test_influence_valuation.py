import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tipmarket.ckks.errors import MalformedFrame
from tipmarket.influence import (
    Dataset,
    DimensionMismatch,
    Example,
    Model,
    Provenance,
    TrainConfig,
    ZeroVector,
    build_projection,
    cosine_score,
    cosine_scores,
    estimate_kfac,
    exact_influence,
    group_value,
    greedy_top_k,
    identity_projection,
    influence_matrix,
    influence_score,
    influence_scores,
    per_example_gradient,
    per_example_gradients,
    preconditioned_eval_vector,
    project_gradient,
    projected_gradients,
    random_score,
    random_scores,
    retrain_loss_delta,
    train,
    upweight_derivative,
    utility,
)
from tipmarket.influence import io as tio
from tipmarket.influence.kfac import KfacLayer, KfacState, _sorted_eigh, kfac_precondition

from .conftest import logistic_data


@pytest.fixture(scope="module")
def small_convex():
    """d = 3 logistic model on 50 points, l2 = 0.01."""
    data = logistic_data(5, 80, 3, scale=1.0)
    train_set, pool = data[:50], data[50:]
    return train(train_set, TrainConfig(l2=0.01)), train_set, pool


# -- exact influence -------------------------------------------------------


def test_zero_gradient_point_has_zero_influence(small_convex):
    from scipy.special import expit

    m, tr, pool = small_convex
    # x = 0 with soft label sigma(b): residual and input both vanish
    z = Example(np.zeros(3), expit(m.layers[0].b[0]))
    assert not np.any(per_example_gradient(m, z).flat())
    assert exact_influence(m, tr, z, pool[0]) == 0.0


def test_quadratic_risk_closed_form():
    # squared-error head at theta = 0 on one point x = 1, y = 0: the Hessian in
    # (w, b) is [[1, 1], [1, 1]]; the damping makes it invertible
    from tipmarket.influence import Activation, Dense, Head

    m = Model((Dense(np.zeros((1, 1)), np.zeros(1)),), Activation.IDENTITY, Head.SQUARED_ERROR, True)
    tr = Dataset(np.array([[1.0]]), np.array([[0.0]]))
    a, b = 2.0, -3.0
    z_s = Example(np.array([1.0]), np.array([-a]))  # gradient (a, a)
    z_e = Example(np.array([1.0]), np.array([-b]))
    H = np.array([[1.0, 1.0], [1.0, 1.0]]) + np.eye(2)
    expect = -np.array([b, b]) @ np.linalg.solve(H, np.array([a, a]))
    assert exact_influence(m, tr, z_s, z_e, damping=1.0) == pytest.approx(expect, rel=1e-12)
    # a = b = 1 with H = I gives -1
    H1 = Model((Dense(np.zeros((1, 1)), np.zeros(1)),), Activation.IDENTITY, Head.SQUARED_ERROR, True)
    tr1 = Dataset(np.array([[0.0]]), np.array([[0.0]]))  # H = [[0, 0], [0, 1]] + I
    z1 = Example(np.array([0.0]), np.array([-1.0]))  # gradient (0, 1)
    assert exact_influence(H1, tr1, z1, z1, damping=1.0) == pytest.approx(-0.5, rel=1e-12)


def test_upweight_oracle_small(small_convex):
    m, tr, pool = small_convex
    rng = np.random.default_rng(0)
    for _ in range(10):
        i, j = rng.integers(0, len(pool), 2)
        a = exact_influence(m, tr, pool[int(i)], pool[int(j)])
        b = upweight_derivative(m, tr, pool[int(i)], pool[int(j)])
        assert abs(a - b) <= 0.01 * abs(b)


def test_influence_matrix_matches_pairwise(small_convex):
    m, tr, pool = small_convex
    M = influence_matrix(m, tr, pool[:3], pool[3:5])
    for i in range(3):
        for j in range(2):
            assert M[i, j] == pytest.approx(exact_influence(m, tr, pool[i], pool[3 + j]), rel=1e-10)


# -- K-FAC -----------------------------------------------------------------


def test_kfac_single_example():
    m = Model.init((3, 1), seed=0)
    x = np.array([1.0, -2.0, 0.5])
    kf = estimate_kfac(m, Dataset(x[None, :], np.array([1.0])))
    xa = np.r_[x, 1.0]
    assert np.array_equal(kf.layers[0].c_in, np.outer(xa, xa))


def test_kfac_whitened_inputs():
    rng = np.random.default_rng(0)
    n, d = 200, 4
    A = rng.standard_normal((n, d))
    A -= A.mean(axis=0)
    Q, _ = np.linalg.qr(A)
    X = Q * np.sqrt(n)  # zero mean, X^T X / n = I
    kf = estimate_kfac(Model.init((d, 1)), Dataset(X, rng.integers(0, 2, n).astype(float)))
    np.testing.assert_allclose(kf.layers[0].c_in, np.eye(d + 1), atol=1e-12)


def test_kfac_symmetric_psd(reference):
    for L in reference["kfac"].layers:
        for C in (L.c_in, L.c_out):
            assert np.max(np.abs(C - C.T)) == 0
            assert np.linalg.eigvalsh(C).min() >= -1e-8


def _layer(c_in, c_out):
    return KfacLayer(c_in, c_out, _sorted_eigh(c_in), _sorted_eigh(c_out))


def test_projection_forced_eigenvector():
    kf = KfacState((_layer(np.diag([4.0, 1.0]), np.eye(1)),))
    proj = build_projection(kf, (1, 1))
    np.testing.assert_array_equal(proj.layers[0].p_in, [[1.0, 0.0]])
    # sign convention: largest entry positive even if the solver returns -v
    kf = KfacState((_layer(np.diag([1.0, 4.0]), np.eye(1)),))
    np.testing.assert_array_equal(build_projection(kf, (1, 1)).layers[0].p_in, [[0.0, 1.0]])


@settings(max_examples=25, deadline=None, derandomize=True)
@given(seed=st.integers(0, 10 ** 6), d=st.integers(2, 9), data=st.data())
def test_projection_dense_eig_oracle(seed, d, data):
    k = data.draw(st.integers(1, d))
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d))
    C = A @ A.T
    P = build_projection(KfacState((_layer(C, np.eye(1)),)), (k, 1)).layers[0].p_in
    np.testing.assert_allclose(P @ P.T, np.eye(k), atol=1e-10)
    top = np.sort(np.linalg.eigvalsh(C))[::-1][:k]
    np.testing.assert_allclose(P @ C @ P.T, np.diag(top), atol=1e-8 * max(1.0, top[0]))


def test_full_rank_projection_is_isometry(reference):
    m, pool = reference["model"], reference["pool"]
    proj = reference["proj"]
    assert proj.k == m.num_params
    G = per_example_gradients(m, pool)
    Gt = projected_gradients(m, pool, proj)
    np.testing.assert_allclose(np.linalg.norm(Gt, axis=1), np.linalg.norm(G, axis=1), rtol=1e-10)


def test_identity_projection_reorders():
    m = Model.init((3, 2, 1), seed=4)
    z = Example(np.array([0.1, 0.2, -0.3]), 1.0)
    gf = per_example_gradient(m, z)
    got = project_gradient(gf, identity_projection(m))
    assert sorted(got) == pytest.approx(sorted(gf.flat()))
    assert got.size == m.num_params


def test_project_gradient_zero_delta():
    m = Model.init((3, 1), seed=0).with_params([0, 0, 0, 10.0])
    gf = per_example_gradient(m, Example(np.zeros(3), 1.0))
    gf0 = type(gf)(gf.inputs, tuple(np.zeros_like(d) for d in gf.deltas))
    assert not np.any(project_gradient(gf0, identity_projection(m)))


def test_project_gradient_dense_oracle():
    data = logistic_data(3, 60, 5)
    m = train(data, TrainConfig(hidden=(4,), epochs=20, seed=1))
    proj = build_projection(estimate_kfac(m, data), [(3, 2), (2, 1)])
    P = proj.dense_matrix(m)
    G = per_example_gradients(m, data[:10])
    np.testing.assert_allclose(projected_gradients(m, data[:10], proj), G @ P.T, atol=1e-10)
    for i in range(3):
        np.testing.assert_allclose(project_gradient(per_example_gradient(m, data[i]), proj), P @ G[i], atol=1e-10)


# -- eval vector -----------------------------------------------------------


def test_eval_vector_damping_dominance(reference):
    m, ev, proj, kf = reference["model"], reference["eval"], reference["proj"], reference["kfac"]
    raw = preconditioned_eval_vector(m, ev, proj, method="none")
    v = preconditioned_eval_vector(m, ev, proj, kf, damping=1e6)
    assert raw.provenance is Provenance.RAW_GRADIENT and v.provenance is Provenance.KFAC
    assert v.k == proj.k and v.eval_set_size == len(ev)
    np.testing.assert_allclose(v.values, raw.values / 1e6, rtol=1e-5)


def test_isotropic_preconditioner_keeps_orthogonality():
    m = Model.init((3, 1), seed=0)
    proj = identity_projection(m)  # unit eigenvalues: isotropic factors
    g = np.array([1.0, 2.0, 0.0, -1.0])
    h = np.array([2.0, -1.0, 5.0, 0.0])
    assert g @ h == 0
    v = kfac_precondition(g, proj, 0.3)
    assert influence_score(v, h) == 0.0


def test_kfac_tracks_exact_on_reference_config():
    # reference convex config from benchmarks/calibrate.py (min 0.977 over 10 seeds)
    for seed in range(3):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((400, 8))
        w = rng.standard_normal(8) * 0.5
        y = (rng.random(400) < 1 / (1 + np.exp(-(X @ w)))).astype(float)
        tr, ev = Dataset(X[:300], y[:300]), Dataset(X[300:], y[300:])
        m = train(tr, TrainConfig(l2=0.01))
        kf = estimate_kfac(m, tr)
        proj = build_projection(kf, [(9, 1)])
        v = preconditioned_eval_vector(m, ev, proj, kf, damping=1e-3).values
        e = preconditioned_eval_vector(m, ev, proj, method="exact", damping=1e-3, train_set=tr).values
        assert v @ e / np.linalg.norm(v) / np.linalg.norm(e) >= 0.9


def test_eval_vector_errors(reference):
    m, proj = reference["model"], reference["proj"]
    with pytest.raises(ValueError):
        preconditioned_eval_vector(m, reference["eval"], proj, reference["kfac"], damping=0.0)
    with pytest.raises(ValueError):
        preconditioned_eval_vector(m, reference["eval"][:0], proj, reference["kfac"])
    with pytest.raises(ValueError):
        preconditioned_eval_vector(m, reference["eval"], proj, method="exact")


# -- scores ----------------------------------------------------------------


def test_influence_score_examples():
    assert influence_score(np.ones(4), np.zeros(4)) == 0.0
    e1 = np.eye(3)[0]
    assert influence_score(e1, e1) == -1.0
    with pytest.raises(DimensionMismatch):
        influence_score(np.ones(3), np.ones(4))
    with pytest.raises(DimensionMismatch):
        influence_scores(np.ones(3), np.ones((2, 4)))


def test_projection_consistency_with_exact(small_convex):
    m, tr, pool = small_convex
    ev, cand = pool[:10], pool[10:]
    lam = 1e-6
    v = preconditioned_eval_vector(m, ev, identity_projection(m), method="exact", damping=lam, train_set=tr)
    s = influence_scores(v, projected_gradients(m, cand, identity_projection(m)))
    expect = influence_matrix(m, tr, cand, ev, damping=lam).mean(axis=1)
    # score = +mean exact influence: both are predicted d L_eval / d eps
    np.testing.assert_allclose(s, expect, rtol=1e-8, atol=1e-12)


@settings(max_examples=30, deadline=None, derandomize=True)
@given(seed=st.integers(0, 10 ** 6), c=st.floats(1e-3, 1e3))
def test_ranking_invariant_to_positive_scale(seed, c):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(16)
    G = rng.standard_normal((12, 16))
    assert np.array_equal(np.argsort(influence_scores(v, G), kind="stable"),
                          np.argsort(influence_scores(c * v, G), kind="stable"))


@settings(max_examples=30, deadline=None, derandomize=True)
@given(i=st.integers(0, 29), lam=st.floats(1e-4, 10.0))
def test_self_utility_positive(small_convex, i, lam):
    m, tr, pool = small_convex
    z = pool[i:i + 1]
    proj = identity_projection(m)
    v = preconditioned_eval_vector(m, z, proj, method="exact", damping=lam, train_set=tr)
    assert utility(influence_score(v, projected_gradients(m, z, proj)[0])) > 0
    kf = estimate_kfac(m, tr)
    v = preconditioned_eval_vector(m, z, build_projection(kf, [(4, 1)]), kf, damping=lam)
    g = projected_gradients(m, z, build_projection(kf, [(4, 1)]))[0]
    assert utility(influence_score(v, g)) > 0


def test_cosine_examples():
    a = np.array([1.0, 2.0, -1.0])
    assert cosine_score(a, a) == pytest.approx(1.0)
    assert cosine_score(a, -a) == pytest.approx(-1.0)
    assert cosine_score([1.0, 0.0], [0.0, 3.0]) == 0.0
    with pytest.raises(ZeroVector):
        cosine_score(np.zeros(3), a)
    np.testing.assert_allclose(cosine_scores(np.vstack([a, -a]), a), [1.0, -1.0])


def test_random_scores():
    assert random_score(1, 3) == random_score(1, 3)
    assert random_score(1, 3, replicate=0) != random_score(1, 3, replicate=1)
    assert np.array_equal(random_scores(4, 5, 2), [random_score(4, i, 2) for i in range(5)])
    draws = np.random.default_rng([7, 0]).standard_normal(10 ** 5)  # same generator family
    assert abs(draws.mean()) < 0.02 and abs(draws.std() - 1) < 0.02
    lln = random_scores(7, 20000)
    assert abs(lln.mean()) < 0.03 and abs(lln.std() - 1) < 0.03


def test_random_scores_lln_full():
    s = np.array([random_score(11, i) for i in range(10 ** 5)])
    assert abs(s.mean()) <= 0.02 and abs(s.std() - 1) <= 0.02


def test_group_value_examples():
    u = np.array([0.5, -1.0, 2.0, 0.25])
    assert group_value(u, []) == 0.0
    assert group_value(u, [2]) == 2.0
    assert group_value(u, [0, 1]) + group_value(u, [2, 3]) == group_value(u, [0, 1, 2, 3])
    with pytest.raises(IndexError):
        group_value(u, [7])
    assert greedy_top_k(u, 2) == [2, 0]
    assert greedy_top_k([1.0, 1.0, 0.0], 1) == [0]


@settings(max_examples=50, deadline=None, derandomize=True)
@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=40), st.data())
def test_group_value_additive(vals, data):
    # dyadic utilities keep float sums exact
    u = np.array(vals, dtype=float) / 8
    idx = list(range(len(u)))
    s1 = data.draw(st.sets(st.sampled_from(idx)))
    s2 = data.draw(st.sets(st.sampled_from(sorted(set(idx) - s1))) if len(s1) < len(idx) else st.just(set()))
    assert group_value(u, s1 | s2) == group_value(u, s1) + group_value(u, s2)
    k = len(s1)
    if k:
        top = greedy_top_k(u, k)
        assert group_value(u, top) >= group_value(u, s1)


def test_group_value_vs_retraining():
    # 400 training points keep the 1/n upweight in the first-order regime
    data = logistic_data(5, 440, 3, scale=1.0)
    tr, ev, cand = data[:400], data[400:420], data[420:]
    m = train(tr, TrainConfig(l2=0.01))
    proj = identity_projection(m)
    v = preconditioned_eval_vector(m, ev, proj, method="exact", damping=1e-9, train_set=tr)
    u = utility(influence_scores(v, projected_gradients(m, cand, proj)))
    n = len(tr)
    order = np.argsort(u)
    # same-sign subsets: the first-order term is not cancelled away, so the
    # relative comparison is meaningful
    small = [list(order[:k]) for k in (1, 2, 3)] + [list(order[-k:]) for k in (1, 2)]
    for subset in small + [list(range(len(cand)))]:
        pred = group_value(u, subset) / n
        actual = retrain_loss_delta(m, tr, cand[subset], ev)
        assert np.sign(pred) == np.sign(actual)
        if len(subset) <= 3:
            assert abs(pred - actual) <= 0.25 * abs(actual)


# -- io --------------------------------------------------------------------


def test_model_and_projection_roundtrip(tmp_path, reference):
    m = reference["model"]
    tio.save_model(tmp_path / "m.tipm", m)
    back = tio.load_model(tmp_path / "m.tipm")
    assert np.array_equal(back.flatten(), m.flatten()) and back.l2 == m.l2 and back.head == m.head
    assert tio.model_to_bytes(back) == tio.model_to_bytes(m)
    proj = reference["proj"]
    tio.save_projection(tmp_path / "p.tipp", proj)
    pb = tio.load_projection(tmp_path / "p.tipp")
    assert pb.checksum() == proj.checksum()
    with pytest.raises(MalformedFrame):
        tio.model_from_bytes(tio.model_to_bytes(m)[:-3])
    with pytest.raises(MalformedFrame):
        tio.projection_from_bytes(tio.projection_to_bytes(proj)[:10])


def test_dataset_csv_roundtrip(tmp_path):
    data = logistic_data(9, 12, 3)
    tio.write_dataset(tmp_path / "d.csv", data)
    back = tio.read_dataset(tmp_path / "d.csv")
    assert np.array_equal(back.X, data.X) and np.array_equal(back.y, data.y)
    (tmp_path / "bad.csv").write_text("a,label\nx,1\n")
    with pytest.raises(ValueError):
        tio.read_dataset(tmp_path / "bad.csv")
