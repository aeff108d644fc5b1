import numpy as np
import pytest

from capa import _kernels
from capa.core import (ConfigurationError, DataMatrix, Kind, ModelParams, NumericError, Solver,
                       center)
from capa.em import EmOptions, MeanFieldState, e_step
from capa.sfa import (LAMBDA_MAX, LAMBDA_MIN, ChainMoments, _lambda_objective, chain_smooth,
                      sfa_em_fit, sfa_ml_fit, update_lambda)
from capa.synthetic import (chain_precision, dense_gaussian_oracle, make_slow_signals, slowness,
                            subspace_angles)

KERNELS = [pytest.param(_kernels.rts_smooth_python, id="python")]
if _kernels.rts_smooth_compiled is not None:
    KERNELS.append(pytest.param(_kernels.rts_smooth_compiled, id="compiled"))


def _chain_params(rng, F, N, lam=None, sx2=None):
    W = rng.standard_normal((F, N))
    lam = rng.uniform(0.05, 0.95, N) if lam is None else np.asarray(lam, float)
    sx2 = rng.uniform(0.1, 2.0) if sx2 is None else sx2
    return ModelParams(Kind.SFA, Solver.EM, W, sx2, lam, 1 - lam ** 2, np.zeros(F))


def _dense_loglik(Xv, params):
    F, T = Xv.shape
    N = params.latent_dim
    Sy = np.linalg.inv(chain_precision(params.lambda_, params.sigma2, T))
    big_W = np.kron(np.eye(T), params.W)
    C = big_W @ Sy @ big_W.T + params.sigma_x2 * np.eye(F * T)
    x = Xv.T.ravel()
    _, logdet = np.linalg.slogdet(C)
    return -0.5 * (F * T * np.log(2 * np.pi) + logdet + x @ np.linalg.solve(C, x))


@pytest.mark.parametrize("kernel", KERNELS)
def test_scalar_chain_matches_dense_conditioning(kernel):
    rng = np.random.default_rng(0)
    params = _chain_params(rng, 1, 1)
    X = rng.standard_normal((1, 4))
    cm = chain_smooth(X, params, kernel=kernel)
    ref = dense_gaussian_oracle(params, params.W, params.sigma_x2, X)
    np.testing.assert_allclose(cm.mean, ref.mean, atol=1e-8)
    np.testing.assert_allclose(cm.cov, ref.cov, atol=1e-8)


@pytest.mark.parametrize("kernel", KERNELS)
@pytest.mark.parametrize("seed", range(25))
def test_chain_matches_dense_conditioning(kernel, seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 4))
    T = int(rng.integers(1, 9))
    F = int(rng.integers(1, 5))
    params = _chain_params(rng, F, N)
    X = rng.standard_normal((F, T))
    cm = chain_smooth(X, params, kernel=kernel)
    ref = dense_gaussian_oracle(params, params.W, params.sigma_x2, X)
    np.testing.assert_allclose(cm.mean, ref.mean, atol=1e-8)
    np.testing.assert_allclose(cm.cov, ref.cov, atol=1e-8)
    np.testing.assert_allclose(cm.cross_cov, ref.cross_cov, atol=1e-8)
    assert cm.loglik == pytest.approx(_dense_loglik(X, params), rel=1e-9)
    for P in cm.cov:
        assert np.linalg.eigvalsh(P).min() >= -1e-10


def test_kernels_agree():
    if _kernels.rts_smooth_compiled is None:
        pytest.skip("compiled kernel not built")
    rng = np.random.default_rng(3)
    params = _chain_params(rng, 7, 4)
    X = rng.standard_normal((7, 500))
    a = chain_smooth(X, params, kernel=_kernels.rts_smooth_python)
    b = chain_smooth(X, params, kernel=_kernels.rts_smooth_compiled)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(a.cov, b.cov, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(a.cross_cov, b.cross_cov, rtol=1e-10, atol=1e-12)
    assert a.loglik == pytest.approx(b.loglik, rel=1e-12)


def test_zero_dynamics_factorize():
    rng = np.random.default_rng(4)
    params = _chain_params(rng, 3, 2, lam=[0.0, 0.0], sx2=0.5)
    X = rng.standard_normal((3, 6))
    cm = chain_smooth(X, params)
    mf = MeanFieldState.build(np.zeros((2, 6)), [1.0, 1.0], 0.5)
    ref = e_step(DataMatrix(X, np.zeros(3)), params, mf)
    np.testing.assert_allclose(cm.mean, ref.mean, atol=1e-12)
    np.testing.assert_allclose(cm.cov, np.repeat(ref.cov[None], 6, axis=0), atol=1e-12)


def test_single_step_is_gaussian_conditioning():
    rng = np.random.default_rng(5)
    params = _chain_params(rng, 3, 2)
    x = rng.standard_normal((3, 1))
    cm = chain_smooth(x, params)
    W, s = params.W, params.sigma_x2
    C = np.linalg.inv(np.eye(2) + W.T @ W / s)
    np.testing.assert_allclose(cm.cov[0], C, atol=1e-12)
    np.testing.assert_allclose(cm.mean[:, 0], C @ W.T @ x[:, 0] / s, atol=1e-12)
    assert cm.cross_cov.shape == (0, 2, 2)


@pytest.mark.parametrize("kernel", KERNELS)
def test_indefinite_filter_reports_time_step(kernel):
    W = np.eye(1)
    lam = np.array([0.5])
    params = ModelParams(Kind.SFA, Solver.EM, W, 1.0, lam, np.array([-5.0]), np.zeros(1))
    with pytest.raises(NumericError, match="t=1"):
        chain_smooth(np.ones((1, 3)), params, kernel=kernel)


def test_chain_smooth_requires_sfa_and_positive_noise(rng):
    p = _chain_params(rng, 2, 1)
    with pytest.raises(ConfigurationError):
        chain_smooth(np.ones((2, 3)), ModelParams(Kind.PCA, Solver.EM, p.W, 1.0, p.lambda_,
                                                  p.sigma2, p.data_mean))
    with pytest.raises(NumericError):
        chain_smooth(np.ones((2, 3)), ModelParams(Kind.SFA, Solver.EM, p.W, 0.0, p.lambda_,
                                                  p.sigma2, p.data_mean))


def _moments(rng, N=2, T=50):
    params = _chain_params(rng, 4, N)
    X = rng.standard_normal((4, T)) * 2
    return chain_smooth(X, params)


def test_constrained_lambda_maximizes_tied_objective(rng):
    cm = _moments(rng)
    lam = update_lambda(cm, "constrained")
    E = cm.mean
    Ey2 = E ** 2 + np.diagonal(cm.cov, axis1=1, axis2=2).T
    b = np.diagonal(cm.cross_moment, axis1=1, axis2=2).sum(axis=0)
    grid = np.linspace(LAMBDA_MIN, LAMBDA_MAX, 200001)
    for n in range(2):
        vals = _lambda_objective(grid, E.shape[1] - 1, Ey2[n, 1:].sum(), b[n], Ey2[n, :-1].sum())
        best = _lambda_objective(lam[n], E.shape[1] - 1, Ey2[n, 1:].sum(), b[n],
                                 Ey2[n, :-1].sum())
        assert best >= vals.max() - 1e-9 * abs(vals.max())


def test_ratio_lambda_rule(rng):
    cm = _moments(rng)
    E = cm.mean
    num = np.array([sum(cm.cross_cov[t, n, n] + E[n, t + 1] * E[n, t] for t in range(49))
                    for n in range(2)])
    den = np.array([sum(cm.cov[t, n, n] + E[n, t] ** 2 for t in range(49)) for n in range(2)])
    np.testing.assert_allclose(update_lambda(cm, "ratio"), np.clip(num / den, LAMBDA_MIN, LAMBDA_MAX))


def test_lambda_update_stays_inside_unit_interval():
    mean = np.array([[1.0, -1.0, 1.0, -1.0]])
    cm = ChainMoments(mean, np.zeros((4, 1, 1)), np.zeros((3, 1, 1)), 0.0)
    for rule in ("constrained", "ratio"):
        lam = update_lambda(cm, rule)
        assert LAMBDA_MIN <= lam[0] <= LAMBDA_MAX


def test_sfa_requires_sequence():
    X = center(np.random.default_rng(0).standard_normal((3, 20)))
    with pytest.raises(ConfigurationError):
        sfa_ml_fit(X, 1)
    with pytest.raises(ConfigurationError):
        sfa_em_fit(X, 1)


@pytest.fixture(scope="module")
def slow_fit():
    ds = make_slow_signals(2, 2000, [0.99, 0.5], mixing_seed=0, dim=4, noise_var=0.01)
    params, trace = sfa_em_fit(ds.data, 2, EmOptions(max_iter=300))
    return ds, params, trace


def test_em_recovers_lambdas(slow_fit):
    _, params, trace = slow_fit
    np.testing.assert_allclose(params.lambda_, [0.99, 0.5], atol=0.05)
    np.testing.assert_allclose(params.sigma2, 1 - params.lambda_ ** 2)
    assert trace.is_monotone()


def test_em_latent_order_follows_slowness(slow_fit):
    ds, params, _ = slow_fit
    E = chain_smooth(ds.data, params).mean
    assert np.all(np.diff(params.lambda_) < 0)
    assert np.all(np.diff(slowness(E)) > 0)


def test_em_span_matches_mixing(slow_fit):
    ds, params, _ = slow_fit
    A = ds.extras["mixing"]
    assert subspace_angles(params.loading.T, A.T).max() < 5e-2


def test_em_and_ml_spans_agree_on_long_sequences():
    # the deterministic rows converge slowly: λ=0.99 leaves ~T/200 effective samples
    ds = make_slow_signals(2, 20000, [0.99, 0.5], mixing_seed=2, dim=3, noise_var=0.25)
    ml = sfa_ml_fit(ds.data, 2)
    em, _ = sfa_em_fit(ds.data, 2, EmOptions(max_iter=300))
    assert subspace_angles(ml.W, em.loading.T).max() < 0.1


def test_em_is_deterministic():
    ds = make_slow_signals(2, 200, [0.9, 0.3], mixing_seed=1, dim=3, noise_var=0.05)
    a, ta = sfa_em_fit(ds.data, 2, EmOptions(max_iter=20, seed=4))
    b, tb = sfa_em_fit(ds.data, 2, EmOptions(max_iter=20, seed=4))
    np.testing.assert_array_equal(a.W, b.W)
    assert ta.objective == tb.objective


def test_ml_rows_are_whitened():
    ds = make_slow_signals(3, 400, [0.95, 0.7, 0.2], mixing_seed=2, dim=5, noise_var=0.1)
    X = ds.data
    W = sfa_ml_fit(X, 3).W
    G = W @ X.values @ X.values.T @ W.T
    off = G - np.diag(np.diag(G))
    assert np.abs(off).sum() < 1e-8 * np.abs(np.diag(G)).sum()


def test_ratio_rule_fit_runs():
    ds = make_slow_signals(1, 300, [0.9], mixing_seed=3, dim=2, noise_var=0.05)
    params, trace = sfa_em_fit(ds.data, 1, EmOptions(max_iter=50, lambda_update="ratio"))
    assert 0 < params.lambda_[0] < 1
