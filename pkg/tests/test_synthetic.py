import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from capa.core import DataMatrix, DimensionError, Kind, ModelParams, NumericError, Solver, center
from capa.em import MeanFieldState, e_step, mean_field_variance
from capa.ml import ml_fit
from capa.priors import (Neighbourhood, NeighbourhoodSpec, PriorOperators,
                         build_prior_operators, lambda_schedule)
from capa.synthetic import (dense_gaussian_oracle, make_gaussian_clusters, make_slow_signals,
                            make_swiss_roll, nearest_mean_errors, simplex_vertices, slowness,
                            subspace_angles)


def test_swiss_roll_parametrization():
    ds = make_swiss_roll(200, 0.0, seed=3)
    u, h = ds.ground_truth
    x, y, z = ds.raw
    np.testing.assert_allclose(x ** 2 + z ** 2, u ** 2, rtol=1e-12)
    np.testing.assert_array_equal(y, h)
    assert u.min() >= 1.5 * np.pi and u.max() <= 4.5 * np.pi
    assert h.min() >= 0 and h.max() <= 21


def test_swiss_roll_shape_and_radius_range():
    ds = make_swiss_roll(1500, 0.05, seed=0)
    assert ds.raw.shape == (3, 1500)
    r = np.hypot(ds.raw[0], ds.raw[2])
    assert r.min() >= 1.5 * np.pi - 3 * 0.05 * np.sqrt(2)
    assert r.max() <= 4.5 * np.pi + 3 * 0.05 * np.sqrt(2)


def test_generators_are_reproducible():
    for make in (lambda s: make_swiss_roll(50, 0.1, s),
                 lambda s: make_gaussian_clusters(3, 10, 4, 5.0, 1.0, s),
                 lambda s: make_slow_signals(2, 50, [0.9, 0.4], s, 3, 0.1)):
        a, b, c = make(7), make(7), make(8)
        assert a.raw.tobytes() == b.raw.tobytes()
        assert a.descriptor == b.descriptor
        assert a.raw.tobytes() != c.raw.tobytes()


def test_swiss_roll_minimum_size():
    with pytest.raises(DimensionError):
        make_swiss_roll(9)


@pytest.mark.parametrize("K, dim", [(2, 1), (3, 2), (5, 7)])
def test_simplex_pairwise_distances(K, dim):
    V = simplex_vertices(K, dim, 4.0)
    d = np.linalg.norm(V[:, :, None] - V[:, None, :], axis=0)
    np.testing.assert_allclose(d[~np.eye(K, dtype=bool)], 4.0)


def test_clusters_validation():
    with pytest.raises(DimensionError):
        make_gaussian_clusters(1, 10, 2, 1.0)
    with pytest.raises(DimensionError):
        make_gaussian_clusters(4, 10, 2, 1.0)


def test_clusters_without_separation_have_unit_lda_eigenvalues():
    ds = make_gaussian_clusters(3, 400, 3, 0.0, 1.0, seed=0)
    p = ml_fit(ds.data, Kind.LDA, None, 3)
    np.testing.assert_allclose(p.fit_meta["eigenvalues"], 1.0, atol=0.03)


def test_separated_clusters_are_classified_perfectly():
    ds = make_gaussian_clusters(3, 50, 4, 10.0, 1.0, seed=1)
    X = ds.data
    p = ml_fit(X, Kind.LDA, None, 2)
    assert nearest_mean_errors(p.W @ X.values, X.labels) == 0


def test_white_noise_latents():
    T = 4000
    ds = make_slow_signals(1, T, [0.0], mixing_seed=0)
    y = ds.ground_truth[0]
    assert abs(np.corrcoef(y[1:], y[:-1])[0, 1]) < 3 / np.sqrt(T)


def test_slow_latent_statistics():
    ds = make_slow_signals(1, 5000, [0.99], mixing_seed=0)
    y = ds.ground_truth[0]
    assert abs(np.corrcoef(y[1:], y[:-1])[0, 1] - 0.99) < 0.03
    ds = make_slow_signals(1, 5000, [0.5], mixing_seed=0)
    assert abs(ds.ground_truth[0].var() - 1.0) < 0.05


def test_slow_signals_mixing_is_orthonormal():
    ds = make_slow_signals(2, 100, [0.9, 0.5], mixing_seed=5, dim=4)
    A = ds.extras["mixing"]
    np.testing.assert_allclose(A.T @ A, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(ds.raw, A @ ds.ground_truth)
    assert ds.data.is_sequence


def test_slow_signals_validation():
    with pytest.raises(DimensionError):
        make_slow_signals(2, 10, [0.5])
    with pytest.raises(DimensionError):
        make_slow_signals(1, 10, [1.0])
    with pytest.raises(DimensionError):
        make_slow_signals(2, 10, [0.5, 0.4], dim=1)


def test_subspace_angle_examples(rng):
    W = rng.standard_normal((2, 5))
    np.testing.assert_allclose(subspace_angles(W, W), 0.0, atol=1e-7)
    np.testing.assert_allclose(subspace_angles([[1.0, 0.0]], [[0.0, 1.0]]), [np.pi / 2])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_subspace_angles_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((3, 6))
    R, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    ang = subspace_angles(W, R @ W)
    assert np.all(ang < 1e-10)
    assert np.all((ang >= 0) & (ang <= np.pi / 2))


def test_subspace_angles_small_angle_accuracy():
    eps = 1e-9
    a = subspace_angles([[1.0, 0.0, 0.0]], [[1.0, eps, 0.0]])
    np.testing.assert_allclose(a, [eps], rtol=1e-6)


def test_subspace_angles_rejects_rank_deficiency():
    with pytest.raises(DimensionError):
        subspace_angles([[1.0, 0.0], [2.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(DimensionError):
        subspace_angles([[1.0, 0.0]], [[1.0, 0.0, 0.0]])


def test_slowness_and_nearest_mean_metrics():
    t = np.arange(500)
    Y = np.vstack([np.sin(t / 40.0), np.random.default_rng(0).standard_normal(500)])
    s = slowness(Y)
    assert s[0] < 0.01 and 1.5 < s[1] < 2.5
    Y = np.array([[0.0, 0.1, 5.0, 5.1, 1.5]])
    assert nearest_mean_errors(Y, np.array([0, 0, 1, 1, 1])) == 1


def _pca_ops(T, lam, s2, N=1):
    X = center(np.random.default_rng(0).standard_normal((1, T)))
    return build_prior_operators(Kind.PCA, X, None, np.asarray(lam), np.asarray(s2))


def test_oracle_pca_three_samples_by_hand():
    lam, s2 = np.array([0.5]), np.array([0.75])
    ops = _pca_ops(3, lam, s2)
    W, sx2 = np.array([[1.5]]), 0.4
    X = np.array([[1.0, -2.0, 0.5]])
    # P = Λ1 I + Λ2 M with Λ1 = 1.25/0.75, Λ2 = 1/0.75; posterior precision adds W²/σ²
    l1, l2 = 1.25 / 0.75, 1.0 / 0.75
    P = l1 * np.eye(3) - l2 * np.ones((3, 3)) / 3 + (1.5 ** 2 / 0.4) * np.eye(3)
    rhs = 1.5 * X[0] / 0.4
    ref = dense_gaussian_oracle(ops, W, sx2, X)
    np.testing.assert_allclose(ref.mean[0], np.linalg.solve(P, rhs), rtol=1e-12)


def test_oracle_near_zero_lambda_factorizes():
    lam, s2 = np.array([1e-12]), np.array([1.0])
    ops = _pca_ops(4, lam, s2)
    rng = np.random.default_rng(2)
    W = rng.standard_normal((3, 1))
    X = rng.standard_normal((3, 4))
    ref = dense_gaussian_oracle(ops, W, 0.5, X)
    params = ModelParams(Kind.PCA, Solver.EM, W, 0.5, lam, s2, np.zeros(3))
    sig = mean_field_variance(Kind.PCA, lam, s2)
    mom = e_step(DataMatrix(X, np.zeros(3)), params, MeanFieldState.build(np.zeros((1, 4)), sig, 0.5))
    np.testing.assert_allclose(ref.mean, mom.mean, atol=1e-10)
    np.testing.assert_allclose(ref.cov[0], mom.cov, atol=1e-10)


def test_oracle_size_cap_and_indefinite_prior():
    ops = _pca_ops(65, [0.5], [0.75])
    with pytest.raises(DimensionError):
        dense_gaussian_oracle(ops, np.ones((1, 1)), 1.0, np.zeros((1, 65)))
    bad = PriorOperators(Kind.PCA, 3, np.diag([-1.0]), np.diag([0.0]))
    with pytest.raises(NumericError, match="min eigenvalue -1"):
        dense_gaussian_oracle(bad, np.ones((1, 1)), 1.0, np.zeros((1, 3)))


@pytest.mark.parametrize("seed", range(5))
def test_oracle_posterior_is_definite_for_shipped_priors(seed):
    rng = np.random.default_rng(seed)
    X = center(rng.standard_normal((3, 10)), labels=np.arange(10) % 3, is_sequence=True)
    lam, s2 = lambda_schedule(3)
    W = rng.standard_normal((3, 3))
    for kind in Kind:
        spec = NeighbourhoodSpec(Neighbourhood.KNN, k=3) if kind is Kind.LPP else None
        ops = build_prior_operators(kind, X, spec, lam, s2)
        ref = dense_gaussian_oracle(ops, W, 0.3, X)
        assert np.linalg.eigvalsh(ref.joint_cov).min() > 0
