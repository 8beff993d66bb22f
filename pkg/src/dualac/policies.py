"""Policy and value parameterizations with hand-derived gradients.

Three families, matching what the training driver needs:

* GaussianRbfPolicy - diagonal Gaussian whose mean is linear in random
  Fourier features of the state (continuous control).
* TabularSoftmaxPolicy - per-state softmax logits (tabular verification
  vehicle for the estimator equalities).
* LinearValue / TabularValue - value functions linear in features or in
  state indicators.

All parameter gradients are returned as flat vectors so the optimizer can
treat every family uniformly.  No autodiff: each gradient is derived by hand
and checked against finite differences in the tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

_LOG_2PI = float(np.log(2.0 * np.pi))


def median_trick_bandwidth(states: np.ndarray, max_points: int = 1000, rng=None) -> float:
    """Median pairwise Euclidean distance of a state sample (subsampled for cost)."""
    x = np.asarray(states, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 2:
        raise ValueError("median trick needs at least two samples")
    if len(x) > max_points:
        if rng is None:
            rng = np.random.default_rng(0)
        x = x[rng.choice(len(x), size=max_points, replace=False)]
    med = float(np.median(pdist(x)))
    if med <= 0.0:
        raise ValueError("median pairwise distance is zero (identical samples)")
    return med


@dataclass(frozen=True)
class RbfFeatureMap:
    """Random Fourier features f_j(s) = cos(w_j . s / bandwidth + b_j).

    Frequencies are standard normal and phases uniform on [0, 2pi), both
    frozen at construction, so (1/n) f(x).f(y) approximates half the RBF
    kernel exp(-||x-y||^2 / (2 bandwidth^2)).
    """

    frequencies: np.ndarray  # (n_features, state_dim)
    phases: np.ndarray       # (n_features,)
    bandwidth: float

    @classmethod
    def create(cls, n_features: int, state_dim: int, bandwidth: float, seed: int) -> "RbfFeatureMap":
        if bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        rng = np.random.default_rng(seed)
        return cls(
            frequencies=rng.standard_normal((n_features, state_dim)),
            phases=rng.uniform(0.0, 2.0 * np.pi, size=n_features),
            bandwidth=float(bandwidth),
        )

    @property
    def n_features(self) -> int:
        return self.frequencies.shape[0]

    @property
    def state_dim(self) -> int:
        return self.frequencies.shape[1]

    def __call__(self, state: np.ndarray) -> np.ndarray:
        """Features for one state (D,) -> (F,), or a batch (N, D) -> (N, F)."""
        x = np.asarray(state, dtype=float)
        if x.ndim == 1:
            if x.shape[0] != self.state_dim:
                raise ValueError(f"state dim {x.shape[0]} != feature map dim {self.state_dim}")
            return np.cos(self.frequencies @ x / self.bandwidth + self.phases)
        if x.shape[1] != self.state_dim:
            raise ValueError(f"state dim {x.shape[1]} != feature map dim {self.state_dim}")
        return np.cos(x @ self.frequencies.T / self.bandwidth + self.phases)


class BiasedFeatureMap:
    """Appends a constant 1 to a base feature map (intercept for linear values)."""

    def __init__(self, base):
        self.base = base
        self.n_features = base.n_features + 1

    def __call__(self, state):
        f = self.base(state)
        if f.ndim == 1:
            return np.append(f, 1.0)
        return np.concatenate([f, np.ones((len(f), 1))], axis=1)


class GaussianRbfPolicy:
    """pi(a|s) = Normal(W f(s), diag(exp(2 log_std))).

    min_log_std, when set, lower-bounds the noise scale so exploration cannot
    collapse; the bound is enforced whenever parameters are assigned.
    """

    def __init__(
        self,
        feature_map: RbfFeatureMap,
        action_dim: int,
        init_log_std: float = 0.0,
        seed: int = 0,
        min_log_std: float | None = None,
    ):
        rng = np.random.default_rng(seed)
        self.feature_map = feature_map
        self.min_log_std = min_log_std
        self.weights = 0.01 * rng.standard_normal((action_dim, feature_map.n_features))
        self.log_std = self._clamp(np.full(action_dim, float(init_log_std)))

    def _clamp(self, log_std: np.ndarray) -> np.ndarray:
        if self.min_log_std is None:
            return log_std
        return np.maximum(log_std, self.min_log_std)

    @property
    def action_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.log_std.size

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.log_std])

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        nw = self.weights.size
        self.weights = flat[:nw].reshape(self.weights.shape).copy()
        self.log_std = self._clamp(flat[nw:].copy())

    def copy(self) -> "GaussianRbfPolicy":
        clone = GaussianRbfPolicy.__new__(GaussianRbfPolicy)
        clone.feature_map = self.feature_map
        clone.min_log_std = self.min_log_std
        clone.weights = self.weights.copy()
        clone.log_std = self.log_std.copy()
        return clone

    def mean(self, state: np.ndarray) -> np.ndarray:
        return self.weights @ self.feature_map(state)

    def mean_batch(self, states: np.ndarray) -> np.ndarray:
        return self.feature_map(states) @ self.weights.T

    def sample(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.mean(state) + np.exp(self.log_std) * rng.standard_normal(self.action_dim)

    def log_prob(self, state: np.ndarray, action: np.ndarray) -> float:
        z = (np.asarray(action, dtype=float) - self.mean(state)) / np.exp(self.log_std)
        return float(-0.5 * z @ z - self.log_std.sum() - 0.5 * self.action_dim * _LOG_2PI)

    def log_prob_and_grad(self, state, action):
        phi = self.feature_map(state)
        sigma = np.exp(self.log_std)
        diff = np.asarray(action, dtype=float) - self.weights @ phi
        z = diff / sigma
        logp = float(-0.5 * z @ z - self.log_std.sum() - 0.5 * self.action_dim * _LOG_2PI)
        grad_w = np.outer(diff / sigma**2, phi)
        grad_ls = z**2 - 1.0
        return logp, np.concatenate([grad_w.ravel(), grad_ls])

    def score_batch(self, states, actions) -> np.ndarray:
        """Stacked log-probability gradients, one row per (state, action) pair."""
        phi = self.feature_map(np.asarray(states, dtype=float))  # (N, F)
        acts = np.asarray(actions, dtype=float).reshape(len(phi), self.action_dim)
        diff = acts - phi @ self.weights.T
        var = np.exp(2 * self.log_std)
        grad_w = (diff / var)[:, :, None] * phi[:, None, :]
        grad_ls = diff**2 / var - 1.0
        return np.concatenate([grad_w.reshape(len(phi), -1), grad_ls], axis=1)

    def kl(self, old: "GaussianRbfPolicy", states: np.ndarray) -> float:
        """Mean over states of KL(self(.|s) || old(.|s))."""
        mu1, mu2 = self.mean_batch(states), old.mean_batch(states)
        var1, var2 = np.exp(2 * self.log_std), np.exp(2 * old.log_std)
        per_dim = (old.log_std - self.log_std) + (var1 + (mu1 - mu2) ** 2) / (2 * var2) - 0.5
        return float(per_dim.sum(axis=1).mean())

    def kl_grad(self, old: "GaussianRbfPolicy", states: np.ndarray) -> np.ndarray:
        phi = self.feature_map(states)  # (N, F)
        mu1, mu2 = phi @ self.weights.T, old.mean_batch(states)
        var1, var2 = np.exp(2 * self.log_std), np.exp(2 * old.log_std)
        n = len(states)
        grad_w = ((mu1 - mu2) / var2).T @ phi / n
        grad_ls = var1 / var2 - 1.0  # state-independent
        return np.concatenate([grad_w.ravel(), grad_ls])


class TabularSoftmaxPolicy:
    """Per-state softmax over action logits."""

    def __init__(self, n_states: int, n_actions: int, logits: np.ndarray | None = None):
        self.logits = np.zeros((n_states, n_actions)) if logits is None else np.array(logits, dtype=float)

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    @property
    def n_params(self) -> int:
        return self.logits.size

    def get_params(self) -> np.ndarray:
        return self.logits.ravel().copy()

    def set_params(self, flat: np.ndarray) -> None:
        self.logits = np.asarray(flat, dtype=float).reshape(self.logits.shape).copy()

    def copy(self) -> "TabularSoftmaxPolicy":
        return TabularSoftmaxPolicy(self.n_states, self.n_actions, logits=self.logits)

    def log_prob_matrix(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def prob_matrix(self) -> np.ndarray:
        return np.exp(self.log_prob_matrix())

    def probs(self, state: int) -> np.ndarray:
        p = self.prob_matrix()[state]
        return p / p.sum()

    def sample(self, state: int, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_actions, p=self.probs(state)))

    def log_prob(self, state: int, action: int) -> float:
        return float(self.log_prob_matrix()[state, action])

    def log_prob_and_grad(self, state: int, action: int):
        p = self.probs(state)
        grad = np.zeros_like(self.logits)
        grad[state] = -p
        grad[state, action] += 1.0
        return float(np.log(p[action])), grad.ravel()

    def score_batch(self, states, actions) -> np.ndarray:
        p = self.prob_matrix()
        out = np.zeros((len(states), self.n_params))
        for i, (s, a) in enumerate(zip(states, actions)):
            row = np.zeros_like(self.logits)
            row[int(s)] = -p[int(s)]
            row[int(s), int(a)] += 1.0
            out[i] = row.ravel()
        return out

    def kl(self, old: "TabularSoftmaxPolicy", states) -> float:
        lp, lq = self.log_prob_matrix(), old.log_prob_matrix()
        per_state = np.sum(np.exp(lp) * (lp - lq), axis=1)
        return float(np.mean([per_state[s] for s in states]))

    def kl_grad(self, old: "TabularSoftmaxPolicy", states) -> np.ndarray:
        lp, lq = self.log_prob_matrix(), old.log_prob_matrix()
        p, ratio = np.exp(lp), lp - lq
        per_state_kl = np.sum(p * ratio, axis=1)
        grad = np.zeros_like(self.logits)
        for s in states:
            grad[s] += p[s] * (ratio[s] - per_state_kl[s])
        return grad.ravel() / len(states)


class LinearValue:
    """v(s) = w . f(s) for a fixed feature map."""

    def __init__(self, feature_map, n_features: int | None = None):
        self.feature_map = feature_map
        dim = n_features if n_features is not None else feature_map.n_features
        self.weights = np.zeros(dim)

    @property
    def n_params(self) -> int:
        return self.weights.size

    def get_params(self) -> np.ndarray:
        return self.weights.copy()

    def set_params(self, flat: np.ndarray) -> None:
        self.weights = np.asarray(flat, dtype=float).copy()

    def copy(self) -> "LinearValue":
        clone = LinearValue.__new__(LinearValue)
        clone.feature_map = self.feature_map
        clone.weights = self.weights.copy()
        return clone

    def value(self, state) -> float:
        return float(self.weights @ self.feature_map(state))

    def value_batch(self, states) -> np.ndarray:
        return self.feature_map(states) @ self.weights

    def eval_and_grad(self, state):
        phi = self.feature_map(state)
        return float(self.weights @ phi), phi


class TabularValue:
    """One value parameter per state; the gradient is the state indicator."""

    def __init__(self, n_states: int):
        self.values = np.zeros(n_states)

    @property
    def n_params(self) -> int:
        return self.values.size

    def get_params(self) -> np.ndarray:
        return self.values.copy()

    def set_params(self, flat: np.ndarray) -> None:
        self.values = np.asarray(flat, dtype=float).copy()

    def copy(self) -> "TabularValue":
        clone = TabularValue(len(self.values))
        clone.values = self.values.copy()
        return clone

    def value(self, state) -> float:
        return float(self.values[int(state)])

    def value_batch(self, states) -> np.ndarray:
        return self.values[np.asarray(states, dtype=int)]

    def eval_and_grad(self, state):
        grad = np.zeros_like(self.values)
        grad[int(state)] = 1.0
        return float(self.values[int(state)]), grad

    def vector(self) -> np.ndarray:
        return self.values.copy()


# ---------------------------------------------------------------------------
# Named-array checkpoints (flat JSON text)


def save_named_arrays(path: str, arrays: dict) -> None:
    payload = {name: np.asarray(arr).tolist() for name, arr in arrays.items()}
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_named_arrays(path: str) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    return {name: np.array(val, dtype=float) for name, val in payload.items()}
