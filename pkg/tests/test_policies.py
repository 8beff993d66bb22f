import numpy as np
import pytest

from dualac.policies import (
    GaussianRbfPolicy,
    LinearValue,
    RbfFeatureMap,
    TabularSoftmaxPolicy,
    TabularValue,
    load_named_arrays,
    median_trick_bandwidth,
    save_named_arrays,
)


def fd_grad(f, x0, h=1e-5):
    g = np.zeros_like(x0)
    for i in range(len(x0)):
        e = np.zeros_like(x0)
        e[i] = h
        g[i] = (f(x0 + e) - f(x0 - e)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# Median trick


def test_median_trick_two_points():
    assert median_trick_bandwidth(np.array([[0.0], [2.0]])) == pytest.approx(2.0)


def test_median_trick_three_points_line():
    assert median_trick_bandwidth(np.array([0.0, 1.0, 3.0])) == pytest.approx(2.0)


def test_median_trick_matches_brute_force():
    rng = np.random.default_rng(101)
    x = rng.standard_normal((1000, 3))
    dists = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    brute = np.median(dists[np.triu_indices(1000, k=1)])
    assert median_trick_bandwidth(x) == pytest.approx(brute)
    # sanity: concentrates near sqrt(2 d) for standard normal data
    assert abs(median_trick_bandwidth(x) - np.sqrt(2 * 3)) < 0.3


def test_median_trick_identical_points_rejected():
    with pytest.raises(ValueError):
        median_trick_bandwidth(np.zeros((5, 2)))


# ---------------------------------------------------------------------------
# RBF features


def test_rbf_zero_frequencies_give_ones():
    fmap = RbfFeatureMap(frequencies=np.zeros((4, 2)), phases=np.zeros(4), bandwidth=1.0)
    assert np.allclose(fmap(np.array([0.3, -0.7])), np.ones(4))


def test_rbf_range():
    fmap = RbfFeatureMap.create(64, 3, bandwidth=0.8, seed=5)
    rng = np.random.default_rng(6)
    for _ in range(20):
        f = fmap(rng.normal(size=3) * 4)
        assert np.all(f >= -1.0) and np.all(f <= 1.0)


def test_rbf_kernel_approximation():
    # (1/n) f(x).f(y) -> 0.5 exp(-||x-y||^2 / (2 bw^2)) as n grows
    bw = 1.3
    fmap = RbfFeatureMap.create(10_000, 2, bandwidth=bw, seed=7)
    rng = np.random.default_rng(8)
    for _ in range(5):
        x, y = rng.normal(size=2), rng.normal(size=2)
        approx = fmap(x) @ fmap(y) / fmap.n_features
        exact = 0.5 * np.exp(-np.sum((x - y) ** 2) / (2 * bw**2))
        assert abs(approx - exact) < 0.02


def test_rbf_determinism():
    a = RbfFeatureMap.create(16, 3, bandwidth=1.0, seed=42)
    b = RbfFeatureMap.create(16, 3, bandwidth=1.0, seed=42)
    assert np.array_equal(a.frequencies, b.frequencies)
    assert np.array_equal(a.phases, b.phases)


def test_rbf_dimension_mismatch():
    fmap = RbfFeatureMap.create(8, 3, bandwidth=1.0, seed=1)
    with pytest.raises(ValueError):
        fmap(np.zeros(4))


# ---------------------------------------------------------------------------
# Gaussian policy


def make_gaussian(seed=11, n_features=6, state_dim=3, action_dim=2):
    fmap = RbfFeatureMap.create(n_features, state_dim, bandwidth=1.0, seed=seed)
    pol = GaussianRbfPolicy(fmap, action_dim=action_dim, init_log_std=-0.3, seed=seed + 1)
    rng = np.random.default_rng(seed + 2)
    pol.weights = rng.standard_normal(pol.weights.shape) * 0.5
    pol.log_std = rng.uniform(-1.0, 0.5, size=action_dim)
    return pol


def test_gaussian_log_prob_at_mean():
    pol = make_gaussian()
    s = np.array([0.1, -0.4, 0.9])
    a = pol.mean(s)
    logp, grad = pol.log_prob_and_grad(s, a)
    assert logp == pytest.approx(-0.5 * np.sum(np.log(2 * np.pi * np.exp(2 * pol.log_std))))
    assert np.allclose(grad[: pol.weights.size], 0.0)


def test_gaussian_grad_matches_finite_differences():
    rng = np.random.default_rng(13)
    for trial in range(100):
        pol = make_gaussian(seed=trial)
        s = rng.normal(size=3)
        a = rng.normal(size=2)
        _, grad = pol.log_prob_and_grad(s, a)

        def f(theta, pol=pol, s=s, a=a):
            c = pol.copy()
            c.set_params(theta)
            return c.log_prob(s, a)

        num = fd_grad(f, pol.get_params())
        assert np.allclose(grad, num, rtol=1e-4, atol=1e-6)


def test_gaussian_sampling_round_trip():
    pol = make_gaussian(seed=21)
    s = np.array([0.5, 0.0, -1.0])
    rng = np.random.default_rng(22)
    draws = np.array([pol.sample(s, rng) for _ in range(10_000)])
    mu, sd = pol.mean(s), np.exp(pol.log_std)
    se_mean = sd / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - mu) < 3 * se_mean)
    var = draws.var(axis=0, ddof=1)
    se_var = sd**2 * np.sqrt(2.0 / (len(draws) - 1))
    assert np.all(np.abs(var - sd**2) < 3 * se_var)


def test_gaussian_kl_zero_to_self_and_fd_grad():
    pol = make_gaussian(seed=31)
    old = pol.copy()
    states = np.random.default_rng(32).normal(size=(5, 3))
    assert pol.kl(old, states) == pytest.approx(0.0, abs=1e-12)
    # gradient check at a perturbed point
    pol.weights += 0.05
    pol.log_std += 0.02

    def f(theta):
        c = pol.copy()
        c.set_params(theta)
        return c.kl(old, states)

    assert np.allclose(pol.kl_grad(old, states), fd_grad(f, pol.get_params()), rtol=1e-4, atol=1e-7)


# ---------------------------------------------------------------------------
# Tabular softmax policy


def test_softmax_uniform_two_actions():
    pol = TabularSoftmaxPolicy(1, 2)
    logp, grad = pol.log_prob_and_grad(0, 0)
    assert logp == pytest.approx(np.log(0.5))
    assert np.allclose(grad, [0.5, -0.5])


def test_softmax_grad_matches_finite_differences():
    rng = np.random.default_rng(33)
    for _ in range(100):
        pol = TabularSoftmaxPolicy(3, 4, logits=rng.normal(size=(3, 4)))
        s, a = int(rng.integers(3)), int(rng.integers(4))
        _, grad = pol.log_prob_and_grad(s, a)

        def f(theta, pol=pol, s=s, a=a):
            c = pol.copy()
            c.set_params(theta)
            return c.log_prob(s, a)

        assert np.allclose(grad, fd_grad(f, pol.get_params()), rtol=1e-4, atol=1e-7)


def test_softmax_rows_normalize():
    pol = TabularSoftmaxPolicy(4, 3, logits=np.random.default_rng(34).normal(size=(4, 3)) * 10)
    p = pol.prob_matrix()
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0)


def test_softmax_kl_grad_matches_fd():
    rng = np.random.default_rng(35)
    old = TabularSoftmaxPolicy(3, 3, logits=rng.normal(size=(3, 3)))
    pol = TabularSoftmaxPolicy(3, 3, logits=old.logits + 0.1 * rng.normal(size=(3, 3)))
    states = [0, 1, 2, 1]

    def f(theta):
        c = pol.copy()
        c.set_params(theta)
        return c.kl(old, states)

    assert np.allclose(pol.kl_grad(old, states), fd_grad(f, pol.get_params()), rtol=1e-4, atol=1e-8)


# ---------------------------------------------------------------------------
# Value functions


def test_linear_value_zero_weights():
    fmap = RbfFeatureMap.create(8, 2, bandwidth=1.0, seed=51)
    v = LinearValue(fmap)
    s = np.array([0.2, -0.1])
    val, grad = v.eval_and_grad(s)
    assert val == 0.0
    assert np.allclose(grad, fmap(s))


def test_tabular_value_indicator_grad():
    v = TabularValue(5)
    v.values = np.arange(5.0)
    val, grad = v.eval_and_grad(3)
    assert val == 3.0
    assert np.allclose(grad, np.eye(5)[3])


def test_value_grads_match_finite_differences():
    rng = np.random.default_rng(52)
    fmap = RbfFeatureMap.create(8, 2, bandwidth=1.0, seed=53)
    v = LinearValue(fmap)
    v.weights = rng.normal(size=8)
    s = rng.normal(size=2)
    _, grad = v.eval_and_grad(s)

    def f(theta):
        c = v.copy()
        c.set_params(theta)
        return c.value(s)

    assert np.allclose(grad, fd_grad(f, v.get_params()), rtol=1e-6, atol=1e-9)


def test_named_array_round_trip(tmp_path):
    path = str(tmp_path / "params.json")
    arrays = {"weights": np.random.default_rng(54).normal(size=(3, 4)), "log_std": np.array([0.1, -0.2])}
    save_named_arrays(path, arrays)
    back = load_named_arrays(path)
    assert set(back) == {"weights", "log_std"}
    assert np.array_equal(back["weights"], arrays["weights"])
    assert np.array_equal(back["log_std"], arrays["log_std"])
