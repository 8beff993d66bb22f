"""Exact saddle-point objectives on tabular MDPs.

The one-step objective couples a value vector v with a start-state weighting
alpha and a policy pi through the advantage-like residual
Delta[v](s, a) = R(s, a) + gamma E[v(s')] - v(s).  Its multi-step extension
replaces Delta with the discounted k-step residual delta along sampled paths,
and the path-regularized variant adds a squared penalty pulling v toward the
behavior policy's exact return.  Everything is computed in closed form or by
exhaustive path enumeration so the stochastic estimators have a noise-free
target.

`alpha` arguments are plain length-S distribution vectors over start states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import TabularMdp, policy_value, q_values, transition_under, validate_policy


class EnumerationLimitError(RuntimeError):
    """Exact path enumeration would exceed the configured path cap."""


@dataclass(frozen=True)
class KStepPath:
    """A realized path s_0, a_0, r_0, ..., a_k, r_k, s_{k+1}."""

    states: np.ndarray   # (k+2,)
    actions: np.ndarray  # (k+1,)
    rewards: np.ndarray  # (k+1,)

    def __post_init__(self):
        object.__setattr__(self, "states", np.asarray(self.states))
        object.__setattr__(self, "actions", np.asarray(self.actions))
        object.__setattr__(self, "rewards", np.asarray(self.rewards, dtype=float))
        n = len(self.actions)  # n = k + 1 steps
        if len(self.states) != n + 1 or len(self.rewards) != n:
            raise ValueError("path must have k+2 states and k+1 actions/rewards")


def validate_distribution(w: np.ndarray, name: str = "alpha") -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a probability distribution")
    return w


def _as_value_fn(v):
    if callable(v):
        return v
    vec = np.asarray(v, dtype=float)
    return lambda s: float(vec[s])


def delta_k(v, path: KStepPath, gamma: float) -> float:
    """Discounted residual sum_i gamma^i r_i + gamma^{k+1} v(s_{k+1}) - v(s_0)."""
    vf = _as_value_fn(v)
    n = len(path.rewards)
    disc = gamma ** np.arange(n)
    return float(disc @ path.rewards + gamma**n * vf(path.states[-1]) - vf(path.states[0]))


def one_step_lagrangian(mdp: TabularMdp, v: np.ndarray, alpha: np.ndarray, pi: np.ndarray) -> float:
    """(1-gamma) E_mu[v] + sum_{s,a} alpha(s) pi(a|s) Delta[v](s, a), exactly."""
    alpha = validate_distribution(alpha)
    pi = validate_policy(mdp, pi)
    v = np.asarray(v, dtype=float)
    residual = q_values(mdp, v) - v[:, None]
    return float((1.0 - mdp.gamma) * mdp.mu @ v + np.sum(alpha[:, None] * pi * residual))


def _step_distributions(mdp: TabularMdp, alpha: np.ndarray, pi: np.ndarray, k: int) -> np.ndarray:
    """Stack of state marginals d_0..d_{k+1} under pi from start distribution alpha."""
    p_pi = transition_under(mdp, pi)
    d = np.empty((k + 2, mdp.n_states))
    d[0] = alpha
    for i in range(k + 1):
        d[i + 1] = p_pi.T @ d[i]
    return d


def expected_delta_dp(mdp: TabularMdp, v: np.ndarray, alpha: np.ndarray, pi: np.ndarray, k: int) -> float:
    """E_alpha^pi[delta_k] by marginal-distribution recursion (no path enumeration)."""
    alpha = validate_distribution(alpha)
    v = np.asarray(v, dtype=float)
    d = _step_distributions(mdp, alpha, pi, k)
    r_pi = (validate_policy(mdp, pi) * mdp.reward).sum(axis=1)
    total = sum(mdp.gamma**i * d[i] @ r_pi for i in range(k + 1))
    return float(total + mdp.gamma ** (k + 1) * d[k + 1] @ v - alpha @ v)


def iter_paths(mdp: TabularMdp, alpha: np.ndarray, pi: np.ndarray, k: int, max_paths: int = 1_000_000):
    """Yield (probability, states, actions) over all positive-probability k-step paths.

    Raises EnumerationLimitError once more than max_paths paths are produced.
    """
    alpha = validate_distribution(alpha)
    pi = validate_policy(mdp, pi)
    count = 0
    stack = [(s0, float(alpha[s0]), (s0,), ()) for s0 in range(mdp.n_states) if alpha[s0] > 0]
    while stack:
        s, prob, states, actions = stack.pop()
        if len(actions) == k + 1:
            count += 1
            if count > max_paths:
                raise EnumerationLimitError(
                    f"path enumeration exceeded cap of {max_paths}; "
                    "raise max_paths or use the Monte Carlo mode"
                )
            yield prob, states, actions
            continue
        for a in range(mdp.n_actions):
            pa = pi[s, a]
            if pa == 0.0:
                continue
            for s2 in range(mdp.n_states):
                pt = mdp.transition[s, a, s2]
                if pt == 0.0:
                    continue
                stack.append((s2, prob * pa * pt, states + (s2,), actions + (a,)))


def _delta_over_paths(mdp, v, alpha, pi, k, max_paths):
    v = np.asarray(v, dtype=float)
    disc = mdp.gamma ** np.arange(k + 1)
    total = 0.0
    for prob, states, actions in iter_paths(mdp, alpha, pi, k, max_paths):
        rewards = mdp.reward[list(states[:-1]), list(actions)]
        total += prob * (disc @ rewards + mdp.gamma ** (k + 1) * v[states[-1]] - v[states[0]])
    return total


def sample_delta(mdp: TabularMdp, v, alpha, pi, k: int, rng: np.random.Generator) -> float:
    """One Monte Carlo draw of delta_k under alpha and pi."""
    v = np.asarray(v, dtype=float)
    s = int(rng.choice(mdp.n_states, p=alpha))
    s0, total = s, 0.0
    for i in range(k + 1):
        a = int(rng.choice(mdp.n_actions, p=pi[s]))
        total += mdp.gamma**i * mdp.reward[s, a]
        s = int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))
    return total + mdp.gamma ** (k + 1) * v[s] - v[s0]


def multi_step_lagrangian(
    mdp: TabularMdp,
    v: np.ndarray,
    alpha: np.ndarray,
    pi: np.ndarray,
    k: int,
    max_paths: int = 1_000_000,
    monte_carlo: bool = False,
    mc_samples: int = 100_000,
    rng: np.random.Generator | None = None,
):
    """(1 - gamma^{k+1}) E_mu[v] + E_alpha^pi[delta_k].

    Exact mode enumerates every positive-probability path (guarded by
    max_paths).  With monte_carlo=True the expectation is estimated from
    mc_samples sampled paths and the return value is (estimate, stderr).
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    v = np.asarray(v, dtype=float)
    lead = (1.0 - mdp.gamma ** (k + 1)) * mdp.mu @ v
    if monte_carlo:
        if rng is None:
            rng = np.random.default_rng(0)
        alpha = validate_distribution(alpha)
        pi = validate_policy(mdp, pi)
        draws = np.array([sample_delta(mdp, v, alpha, pi, k, rng) for _ in range(mc_samples)])
        stderr = float(draws.std(ddof=1) / np.sqrt(mc_samples))
        return float(lead + draws.mean()), stderr
    return float(lead + _delta_over_paths(mdp, v, alpha, pi, k, max_paths))


def path_reg_lagrangian(
    mdp: TabularMdp,
    v: np.ndarray,
    alpha: np.ndarray,
    pi: np.ndarray,
    pi_b: np.ndarray,
    k: int,
    eta_v: float,
    max_paths: int = 1_000_000,
) -> float:
    """Multi-step objective plus eta_v E_mu[(V^{pi_b}(s) - v(s))^2].

    V^{pi_b} is the exact infinite-horizon return of the behavior policy
    (linear solve), so the penalty target carries no sampling noise.
    """
    if eta_v < 0:
        raise ValueError("eta_v must be nonnegative")
    base = multi_step_lagrangian(mdp, v, alpha, pi, k, max_paths=max_paths)
    v_b = policy_value(mdp, pi_b)
    v = np.asarray(v, dtype=float)
    return float(base + eta_v * mdp.mu @ (v_b - v) ** 2)


def value_linear_coefficient(mdp: TabularMdp, alpha: np.ndarray, pi: np.ndarray, k: int) -> np.ndarray:
    """Gradient of the multi-step objective w.r.t. a tabular v (a constant vector):
    (1 - gamma^{k+1}) mu + gamma^{k+1} d_{k+1} - alpha."""
    alpha = validate_distribution(alpha)
    d = _step_distributions(mdp, alpha, pi, k)
    return (1.0 - mdp.gamma ** (k + 1)) * mdp.mu + mdp.gamma ** (k + 1) * d[k + 1] - alpha


def path_reg_value_gradient(
    mdp: TabularMdp,
    v: np.ndarray,
    alpha: np.ndarray,
    pi: np.ndarray,
    pi_b: np.ndarray,
    k: int,
    eta_v: float,
) -> np.ndarray:
    """Exact gradient of the path-regularized objective w.r.t. tabular v."""
    v = np.asarray(v, dtype=float)
    v_b = policy_value(mdp, pi_b)
    return value_linear_coefficient(mdp, alpha, pi, k) + 2.0 * eta_v * mdp.mu * (v - v_b)


def k_step_weighting(mdp: TabularMdp, pi: np.ndarray, k: int) -> np.ndarray:
    """Start-state weighting fixed to the k-step flow equation
    alpha = (1 - gamma^{k+1}) mu + gamma^{k+1} ((P^pi)^T)^{k+1} alpha.

    At k = 0 this is the ordinary discounted occupancy; for the k-step
    objective it is the weighting at which the value gradient vanishes, hence
    the saddle-point alpha used by the exact verification suite.
    """
    p_pow = np.linalg.matrix_power(transition_under(mdp, pi), k + 1)
    g = mdp.gamma ** (k + 1)
    S = mdp.n_states
    alpha = np.linalg.solve(np.eye(S) - g * p_pow.T, (1.0 - g) * mdp.mu)
    alpha = np.clip(alpha, 0.0, None)
    return alpha / alpha.sum()


def inner_min_v_exact(
    mdp: TabularMdp,
    alpha: np.ndarray,
    pi: np.ndarray,
    pi_b: np.ndarray,
    k: int,
    eta_v: float,
) -> np.ndarray:
    """Unique tabular minimizer of the path-regularized objective over v.

    The objective is linear-plus-diagonal-quadratic in v, so the normal
    equations are diagonal: v = V^{pi_b} - g_lin / (2 eta_v mu).
    """
    if eta_v < 0:
        raise ValueError("eta_v must be nonnegative")
    g_lin = value_linear_coefficient(mdp, alpha, pi, k)
    v_b = policy_value(mdp, pi_b)
    if eta_v == 0.0:
        raise np.linalg.LinAlgError("inner minimization over v is singular for eta_v = 0")
    curvature = 2.0 * eta_v * mdp.mu
    out = np.empty(mdp.n_states)
    for s in range(mdp.n_states):
        if curvature[s] > 0:
            out[s] = v_b[s] - g_lin[s] / curvature[s]
        elif abs(g_lin[s]) > 1e-14:
            raise np.linalg.LinAlgError(
                f"objective is unbounded below in v({s}): mu({s}) = 0 but the linear term is nonzero"
            )
        else:
            out[s] = v_b[s]
    return out
