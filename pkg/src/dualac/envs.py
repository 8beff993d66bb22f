"""Desk-scale environments behind one reset/step interface.

Tabular environments wrap an explicit TabularMdp (so their simulation
statistics are checkable against the exact oracles), and the pendulum is the
classic torque-limited swing-up task with semi-implicit Euler dynamics.

Each environment exposes two layers:

* a pure kernel - initial_state / step_state / observe - used by the batch
  trajectory sampler, with all randomness passed in explicitly;
* a stateful wrapper - reset(seed) / step(action) -> (obs, reward, done) -
  for interactive use; stepping a finished episode raises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import TabularMdp, load_mdp


@dataclass(frozen=True)
class EnvSpec:
    horizon: int
    gamma_hint: float
    tabular: bool
    n_states: int | None = None
    n_actions: int | None = None
    obs_dim: int | None = None
    action_dim: int | None = None
    action_low: float | None = None
    action_high: float | None = None


class TabularEnv:
    """Finite MDP simulator; absorbing terminals are zero-reward self-loops."""

    def __init__(self, mdp: TabularMdp, horizon: int, terminal_states=(), name: str = "tabular"):
        self.mdp = mdp
        self.name = name
        self.terminal_states = frozenset(int(s) for s in terminal_states)
        self.spec = EnvSpec(
            horizon=horizon,
            gamma_hint=mdp.gamma,
            tabular=True,
            n_states=mdp.n_states,
            n_actions=mdp.n_actions,
        )
        self._state: int | None = None
        self._steps = 0
        self._done = True

    # pure kernel -----------------------------------------------------------

    def initial_state(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.mdp.n_states, p=self.mdp.mu))

    def step_state(self, state: int, action: int, rng: np.random.Generator):
        if not 0 <= action < self.mdp.n_actions:
            raise ValueError(f"action {action} out of range")
        reward = float(self.mdp.reward[state, action])
        nxt = int(rng.choice(self.mdp.n_states, p=self.mdp.transition[state, action]))
        return nxt, reward

    def observe(self, state: int) -> int:
        return int(state)

    def is_terminal(self, state) -> bool:
        return int(state) in self.terminal_states

    # stateful wrapper ------------------------------------------------------

    def reset(self, seed: int) -> int:
        self._rng = np.random.default_rng(seed)
        self._state = self.initial_state(self._rng)
        self._steps = 0
        self._done = self.is_terminal(self._state)
        return self.observe(self._state)

    def step(self, action: int):
        if self._done or self._state is None:
            raise RuntimeError("episode is finished; call reset() first")
        nxt, reward = self.step_state(self._state, int(action), self._rng)
        self._state = nxt
        self._steps += 1
        self._done = self._steps >= self.spec.horizon or self.is_terminal(nxt)
        return self.observe(nxt), reward, self._done

    def as_tabular(self) -> TabularMdp:
        return self.mdp


class PendulumEnv:
    """Torque-limited swing-up: state (theta, theta_dot), theta = 0 upright.

    Dynamics are semi-implicit Euler with the standard classic-control
    constants (g = 10, m = l = 1, dt = 0.05, torque bound 2, speed cap 8);
    the per-step reward is -(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2)
    evaluated before the state update.  Episodes run a fixed horizon.
    """

    def __init__(
        self,
        g: float = 10.0,
        m: float = 1.0,
        l: float = 1.0,
        dt: float = 0.05,
        max_torque: float = 2.0,
        max_speed: float = 8.0,
        horizon: int = 200,
        gamma_hint: float = 0.995,
    ):
        self.g, self.m, self.l, self.dt = g, m, l, dt
        self.max_torque, self.max_speed = max_torque, max_speed
        self.name = "pendulum"
        self.spec = EnvSpec(
            horizon=horizon,
            gamma_hint=gamma_hint,
            tabular=False,
            obs_dim=3,
            action_dim=1,
            action_low=-max_torque,
            action_high=max_torque,
        )
        self.clip_count = 0
        self._state: np.ndarray | None = None
        self._steps = 0
        self._done = True

    # pure kernel -----------------------------------------------------------

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])

    def step_state(self, state: np.ndarray, action, rng=None):
        th, thdot = float(state[0]), float(state[1])
        u = float(np.asarray(action).reshape(-1)[0])
        if abs(u) > self.max_torque:
            self.clip_count += 1
            u = max(-self.max_torque, min(self.max_torque, u))
        reward = -(wrap_angle(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2)
        thdot = thdot + (3.0 * self.g / (2.0 * self.l) * math.sin(th) + 3.0 * u / (self.m * self.l**2)) * self.dt
        thdot = max(-self.max_speed, min(self.max_speed, thdot))
        th = wrap_angle(th + thdot * self.dt)
        return np.array([th, thdot]), reward

    def observe(self, state: np.ndarray) -> np.ndarray:
        th, thdot = float(state[0]), float(state[1])
        return np.array([math.cos(th), math.sin(th), thdot])

    def is_terminal(self, state) -> bool:
        return False

    # stateful wrapper ------------------------------------------------------

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self._state = self.initial_state(rng)
        self._steps = 0
        self._done = False
        return self.observe(self._state)

    def step(self, action):
        if self._done or self._state is None:
            raise RuntimeError("episode is finished; call reset() first")
        self._state, reward = self.step_state(self._state, action)
        self._steps += 1
        self._done = self._steps >= self.spec.horizon
        return self.observe(self._state), reward, self._done

    def as_tabular(self):
        raise NotImplementedError("the pendulum has no tabular representation")

    def energy(self, state) -> float:
        """Mechanical energy of the free rod: (1/6) m l^2 w^2 + (m g l / 2) cos(theta)."""
        th, thdot = float(state[0]), float(state[1])
        return self.m * self.l**2 * thdot**2 / 6.0 + self.m * self.g * self.l * math.cos(th) / 2.0


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    out = math.fmod(theta + math.pi, 2.0 * math.pi)
    if out <= 0.0:
        out += 2.0 * math.pi
    return out - math.pi


# ---------------------------------------------------------------------------
# Builders


def two_state_chain(gamma: float = 0.5, horizon: int = 32, mu0: float = 0.9) -> TabularEnv:
    """Hand-solvable chain: s0 -(a1)-> s1, s1 pays 1 forever; V* = (1, 2) at gamma = 0.5.

    Starts are spread over both states (mu0 on s0) so that every value
    coordinate is anchored when training on sampled starts.
    """
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = 1.0
    P[0, 1, 1] = 1.0
    P[1, :, 1] = 1.0
    R = np.array([[0.0, 0.0], [1.0, 1.0]])
    mdp = TabularMdp(P, R, gamma, np.array([mu0, 1.0 - mu0]))
    return TabularEnv(mdp, horizon=horizon, name="chain2")


def five_state_chain(gamma: float = 0.9, slip: float = 0.1, horizon: int = 64) -> TabularEnv:
    """Five states in a line with slip; sitting at the right end pays 1 per step."""
    S, A = 5, 2
    P = np.zeros((S, A, S))
    for s in range(S):
        left, right = max(s - 1, 0), min(s + 1, S - 1)
        P[s, 0, left] += 1.0 - slip
        P[s, 0, right] += slip
        P[s, 1, right] += 1.0 - slip
        P[s, 1, left] += slip
    R = np.zeros((S, A))
    R[S - 1, :] = 1.0
    mu = np.zeros(S)
    mu[0] = 1.0
    mdp = TabularMdp(P, R, gamma, mu)
    return TabularEnv(mdp, horizon=horizon, name="chain5")


def gridworld_5x5(gamma: float = 0.9, horizon: int = 60) -> TabularEnv:
    """5x5 grid, deterministic moves, absorbing goal at the bottom-right corner.

    Reward 1 on the transition that enters the goal; uniform start over the
    24 non-goal cells.
    """
    side = 5
    S, A = side * side, 4
    goal = S - 1
    moves = [(1, 0), (0, 1), (-1, 0), (0, -1)]  # right, down, left, up
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for s in range(S):
        x, y = s % side, s // side
        for a, (dx, dy) in enumerate(moves):
            if s == goal:
                P[s, a, s] = 1.0
                continue
            nx = min(max(x + dx, 0), side - 1)
            ny = min(max(y + dy, 0), side - 1)
            ns = ny * side + nx
            P[s, a, ns] = 1.0
            if ns == goal:
                R[s, a] = 1.0
    mu = np.full(S, 1.0 / (S - 1))
    mu[goal] = 0.0
    mdp = TabularMdp(P, R, gamma, mu)
    return TabularEnv(mdp, horizon=horizon, terminal_states=(goal,), name="gridworld")


_REGISTRY = {
    "chain2": two_state_chain,
    "chain5": five_state_chain,
    "gridworld": gridworld_5x5,
    "pendulum": PendulumEnv,
}


def make_env(name: str, **overrides):
    """Instantiate a registered environment, or load `mdp:<path>` as a TabularEnv."""
    if name.startswith("mdp:"):
        mdp = load_mdp(name[4:])
        return TabularEnv(mdp, horizon=int(overrides.get("horizon", 100)), name=name)
    if name not in _REGISTRY:
        raise KeyError(f"unknown environment {name!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**overrides)
