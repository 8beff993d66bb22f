"""Finite MDPs, Bellman operators, and exact linear-programming oracles.

Everything here is deterministic and pure: value iteration doubles as the
primal-LP oracle, and the occupancy measure of the greedy policy doubles as
the dual-LP oracle.  All stochastic components elsewhere in the package are
validated against these functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

_PROB_ATOL = 1e-12


@dataclass(frozen=True)
class TabularMdp:
    """Discounted MDP with dense transition tensor P[s, a, s'] and reward R[s, a]."""

    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray      # (S, A)
    gamma: float
    mu: np.ndarray          # (S,) initial-state distribution

    def __post_init__(self):
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=float))
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        P, R, mu = self.transition, self.reward, self.mu
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[0], P.shape[1]
        if R.shape != (S, A):
            raise ValueError(f"reward must have shape ({S}, {A}), got {R.shape}")
        if mu.shape != (S,):
            raise ValueError(f"mu must have shape ({S},), got {mu.shape}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        if np.any(P < 0):
            raise ValueError("transition probabilities must be nonnegative")
        row_sums = P.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > _PROB_ATOL:
            raise ValueError("every transition[s, a, :] must sum to 1")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > _PROB_ATOL:
            raise ValueError("mu must be a probability distribution")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def value_bound(self) -> float:
        """Upper bound max|R| / (1 - gamma) on the sup-norm of any fixed point."""
        return float(np.max(np.abs(self.reward)) / (1.0 - self.gamma))


def validate_policy(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """Check that policy is a row-stochastic (S, A) matrix for this MDP."""
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy must have shape ({mdp.n_states}, {mdp.n_actions}), got {pi.shape}")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > _PROB_ATOL:
        raise ValueError("policy rows must be probability distributions")
    return pi


def _check_value(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise ValueError(f"value vector must have shape ({mdp.n_states},), got {v.shape}")
    return v


def q_values(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    """Q[s, a] = R(s, a) + gamma * E_{s'|s,a}[v(s')]."""
    v = _check_value(mdp, v)
    return mdp.reward + mdp.gamma * mdp.transition @ v


def bellman_optimality_operator(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    """One-step optimality backup (T v)(s) = max_a {R(s,a) + gamma E[v(s')]}."""
    return q_values(mdp, v).max(axis=1)


def k_step_bellman(mdp: TabularMdp, v: np.ndarray, k: int) -> np.ndarray:
    """(k+1)-fold composition of the one-step optimality backup.

    k = 0 is the plain one-step operator.  On tabular MDPs the composition
    coincides with exhaustive closed-loop maximization over length-(k+1)
    action sequences, which the test suite checks by policy enumeration.
    """
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    out = _check_value(mdp, v)
    for _ in range(k + 1):
        out = bellman_optimality_operator(mdp, out)
    return out


def lambda_bellman(mdp: TabularMdp, v: np.ndarray, lam: float, k_max: int) -> np.ndarray:
    """Geometric mixture (1-lam) sum_k lam^k (T_k v), truncated at k_max.

    The tail mass lam^k_max is folded into the last term so the mixture
    weights sum to exactly 1; callers should pick k_max with lam^k_max small.
    """
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"lambda must lie in [0, 1), got {lam}")
    if k_max < 1:
        raise ValueError(f"k_max must be positive, got {k_max}")
    out = np.zeros(mdp.n_states)
    term = bellman_optimality_operator(mdp, _check_value(mdp, v))  # T_0 v
    for k in range(k_max + 1):
        weight = lam**k_max if k == k_max else (1.0 - lam) * lam**k
        out += weight * term
        if k < k_max:
            term = bellman_optimality_operator(mdp, term)
    return out


def value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iters: int = 1_000_000) -> np.ndarray:
    """Iterate the one-step backup until ||T v - v||_inf <= tol.

    Serves as the primal-LP oracle: the LP optimum equals the fixed point.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        v_next = bellman_optimality_operator(mdp, v)
        if np.max(np.abs(v_next - v)) <= tol:
            return v_next
        v = v_next
    raise RuntimeError(f"value iteration failed to reach tol={tol} in {max_iters} sweeps")


def greedy_policy(mdp: TabularMdp, v: np.ndarray) -> np.ndarray:
    """Deterministic argmax policy w.r.t. the one-step backup; ties go to the lowest action index."""
    best = np.argmax(q_values(mdp, v), axis=1)
    pi = np.zeros((mdp.n_states, mdp.n_actions))
    pi[np.arange(mdp.n_states), best] = 1.0
    return pi


def transition_under(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """Markov chain P^pi[s, s'] = sum_a pi(a|s) P(s'|s,a)."""
    pi = validate_policy(mdp, policy)
    return np.einsum("sa,sat->st", pi, mdp.transition)


def policy_value(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """Exact V^pi by linear solve of (I - gamma P^pi) V = r^pi."""
    pi = validate_policy(mdp, policy)
    p_pi = transition_under(mdp, pi)
    r_pi = (pi * mdp.reward).sum(axis=1)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)


def discounted_state_occupancy(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """Normalized discounted state-visitation alpha = (1-gamma) mu + gamma (P^pi)^T alpha."""
    p_pi = transition_under(mdp, policy)
    S = mdp.n_states
    alpha = np.linalg.solve(np.eye(S) - mdp.gamma * p_pi.T, (1.0 - mdp.gamma) * mdp.mu)
    # Guard against tiny negative round-off; the exact solution is nonnegative.
    alpha = np.clip(alpha, 0.0, None)
    return alpha / alpha.sum()


def occupancy_from_policy(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """State-action occupancy rho[s, a] = alpha(s) pi(a|s); the dual-LP oracle at pi."""
    pi = validate_policy(mdp, policy)
    return discounted_state_occupancy(mdp, pi)[:, None] * pi


def policy_from_occupancy(rho: np.ndarray) -> np.ndarray:
    """Row-normalize an occupancy measure into a policy; zero-mass rows become uniform."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("occupancy entries must be nonnegative")
    mass = rho.sum(axis=1)
    n_actions = rho.shape[1]
    pi = np.empty_like(rho)
    for s in range(rho.shape[0]):
        if mass[s] < 1e-12:
            pi[s] = 1.0 / n_actions
        else:
            pi[s] = rho[s] / mass[s]
    return pi


def occupancy_flow_residual(mdp: TabularMdp, rho: np.ndarray) -> float:
    """Max violation of the dual-LP flow constraint
    sum_a rho(s', a) = (1-gamma) mu(s') + gamma sum_{s,a} rho(s,a) P(s'|s,a)."""
    rho = np.asarray(rho, dtype=float)
    inflow = (1.0 - mdp.gamma) * mdp.mu + mdp.gamma * np.einsum("sa,sat->t", rho, mdp.transition)
    return float(np.max(np.abs(rho.sum(axis=1) - inflow)))


def duality_gap(mdp: TabularMdp, v: np.ndarray, rho: np.ndarray) -> float:
    """(1-gamma) E_mu[v] - sum_{s,a} R(s,a) rho(s,a); zero at the primal/dual optima."""
    v = _check_value(mdp, v)
    return float((1.0 - mdp.gamma) * mdp.mu @ v - np.sum(mdp.reward * np.asarray(rho, dtype=float)))


def random_mdp(
    n_states: int,
    n_actions: int,
    gamma: float,
    rng: np.random.Generator,
    deterministic: bool = False,
    reward_scale: float = 1.0,
) -> TabularMdp:
    """Sample a dense random MDP (Dirichlet rows, uniform rewards, uniform-ish mu)."""
    if deterministic:
        P = np.zeros((n_states, n_actions, n_states))
        targets = rng.integers(0, n_states, size=(n_states, n_actions))
        for s in range(n_states):
            for a in range(n_actions):
                P[s, a, targets[s, a]] = 1.0
    else:
        P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(0.0, reward_scale, size=(n_states, n_actions))
    mu = rng.dirichlet(np.ones(n_states))
    return TabularMdp(transition=P, reward=R, gamma=gamma, mu=mu)


# ---------------------------------------------------------------------------
# Text-format round trip (JSON; field names mirror the TabularMdp dataclass).


def save_mdp(mdp: TabularMdp, path: str) -> None:
    payload = {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.gamma,
        "reward": mdp.reward.tolist(),
        "transition": mdp.transition.tolist(),
        "mu": mdp.mu.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_mdp(path: str) -> TabularMdp:
    with open(path) as fh:
        payload = json.load(fh)
    mdp = TabularMdp(
        transition=np.array(payload["transition"], dtype=float),
        reward=np.array(payload["reward"], dtype=float),
        gamma=float(payload["gamma"]),
        mu=np.array(payload["mu"], dtype=float),
    )
    if mdp.n_states != payload["n_states"] or mdp.n_actions != payload["n_actions"]:
        raise ValueError("header (n_states, n_actions) disagrees with array shapes")
    return mdp
