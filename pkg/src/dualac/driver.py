"""Outer dual-ascent training loop and the ablation harness.

One iteration, in order: sample a batch under the current policy, fit the
value function on the sampled objective, refresh the closed-form start-state
reweighting, decay the stepsize, estimate the policy gradient with the
refreshed start weights, and take the KL prox step (natural-gradient
approximation by default, exact prox on request).
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .envs import make_env
from .estimators import (
    Trajectory,
    alpha_closed_form,
    delta_means_by_start,
    grad_pi_estimate,
    grad_v_estimate,
    mc_return,
    sample_trajectories,
    traj_deltas,
)
from .mdp import discounted_state_occupancy, policy_value
from .optim import (
    CgConfig,
    FitDivergedError,
    StepsizeSchedule,
    exact_prox_pi,
    fisher_estimate,
    fit_value,
    natural_gradient_step,
)
from .policies import (
    BiasedFeatureMap,
    GaussianRbfPolicy,
    LinearValue,
    RbfFeatureMap,
    TabularSoftmaxPolicy,
    TabularValue,
    median_trick_bandwidth,
)

ABLATIONS = ("full", "no_multistep", "no_pathreg", "no_unbiased_v", "naive")


class IterationError(RuntimeError):
    """A training iteration failed; the last checkpointable state is preserved."""

    def __init__(self, iteration: int, reason: str):
        super().__init__(f"iteration {iteration}: {reason}")
        self.iteration = iteration
        self.reason = reason


@dataclass(frozen=True)
class InnerVConfig:
    stepsize: float = 0.1
    max_iters: int = 300
    grad_tol: float = 1e-3
    biased_iters: int = 1  # inner steps used by the under-fitted variants


@dataclass(frozen=True)
class DualAcConfig:
    k: int = 10
    eta_v: float = 0.1
    eta_alpha: float = 1.0
    eta_mu: float = 0.1
    schedule: StepsizeSchedule = field(default_factory=StepsizeSchedule)
    batch_m: int = 24
    gamma: float | None = None      # None: use the environment's gamma hint
    horizon: int | None = None      # None: use the environment's horizon
    inner_v: InnerVConfig = field(default_factory=InnerVConfig)
    cg: CgConfig = field(default_factory=CgConfig)
    ablation: str = "full"
    seed: int = 0
    iterations: int = 100
    exact_prox: bool = False
    normalize_grad: bool = True
    n_rbf_features: int = 100
    init_log_std: float = 0.0
    min_log_std: float | None = None  # exploration floor for Gaussian policies
    feature_seed: int = 0  # random-feature draw is architecture, shared across run seeds
    replay_behavior: bool = True  # previous batch joins the penalty's behavior data

    def __post_init__(self):
        # accept plain dicts for the nested configs (JSON round trips)
        if isinstance(self.schedule, dict):
            object.__setattr__(self, "schedule", StepsizeSchedule(**self.schedule))
        if isinstance(self.cg, dict):
            object.__setattr__(self, "cg", CgConfig(**self.cg))
        if isinstance(self.inner_v, dict):
            object.__setattr__(self, "inner_v", InnerVConfig(**self.inner_v))
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.k < 0 or self.batch_m < 1 or self.iterations < 0:
            raise ValueError("need k >= 0, batch_m >= 1, iterations >= 0")
        if not 0.0 < self.eta_mu <= 1.0:
            raise ValueError("eta_mu must lie in (0, 1]")
        if self.eta_alpha <= 0 or self.eta_v < 0:
            raise ValueError("need eta_alpha > 0 and eta_v >= 0")

    def resolved(self, env) -> "DualAcConfig":
        """Fill env-dependent defaults and apply the ablation constraints."""
        changes: dict = {}
        if self.gamma is None:
            changes["gamma"] = env.spec.gamma_hint
        if self.horizon is None:
            changes["horizon"] = env.spec.horizon
        if self.ablation == "no_multistep":
            changes.update(k=0, eta_v=0.0)
        elif self.ablation == "no_pathreg":
            changes.update(eta_v=0.0)
        elif self.ablation == "naive":
            changes.update(k=0, eta_v=0.0)
        return dataclasses.replace(self, **changes)

    @property
    def inner_fit_iters(self) -> int:
        if self.ablation == "naive":
            return 1  # single stochastic-gradient V update per iteration
        if self.ablation == "no_unbiased_v":
            return self.inner_v.biased_iters
        return self.inner_v.max_iters

    @property
    def inner_fit_tol(self) -> float:
        if self.ablation in ("no_unbiased_v", "naive"):
            return 0.0  # always take exactly the fixed number of steps
        return self.inner_v.grad_tol

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "DualAcConfig":
        return cls(**payload)  # nested dicts are coerced in __post_init__


@dataclass
class IterationRecord:
    iteration: int
    mean_return: float          # undiscounted per-trajectory total reward
    mean_disc_return: float     # discounted return at the config's gamma
    mean_delta: float
    inner_converged: bool
    inner_residual: float
    kl: float
    stepsize: float
    wall_time: float = field(default=0.0, compare=False)

    def to_json_line(self) -> str:
        return json.dumps(dataclasses.asdict(self))

    @classmethod
    def from_json_line(cls, line: str) -> "IterationRecord":
        return cls(**json.loads(line))


@dataclass
class TrainingState:
    env: object
    cfg: DualAcConfig           # resolved config
    policy: object
    value: object
    t: int = 0
    tilde_alpha: np.ndarray | None = None   # per-state (tabular envs only)
    last_batch: list = field(default_factory=list)


def init_state(cfg: DualAcConfig, env) -> TrainingState:
    cfg = cfg.resolved(env)
    if env.spec.tabular:
        policy = TabularSoftmaxPolicy(env.spec.n_states, env.spec.n_actions)
        value = TabularValue(env.spec.n_states)
        tilde = np.zeros(env.spec.n_states)
    else:
        probe_rng = np.random.default_rng([cfg.feature_seed, 0xBAD])
        probe = []
        for _ in range(10):
            s = env.initial_state(probe_rng)
            probe.append(env.observe(s))
            for _ in range(50):
                u = probe_rng.uniform(env.spec.action_low, env.spec.action_high, size=env.spec.action_dim)
                s, _ = env.step_state(s, u, probe_rng)
                probe.append(env.observe(s))
        bandwidth = median_trick_bandwidth(np.array(probe))
        fmap = RbfFeatureMap.create(cfg.n_rbf_features, env.spec.obs_dim, bandwidth, seed=cfg.feature_seed)
        policy = GaussianRbfPolicy(
            fmap,
            env.spec.action_dim,
            init_log_std=cfg.init_log_std,
            seed=cfg.seed,
            min_log_std=cfg.min_log_std,
        )
        value = LinearValue(BiasedFeatureMap(fmap))  # intercept: returns sit far from 0
        tilde = None
    return TrainingState(env=env, cfg=cfg, policy=policy, value=value, tilde_alpha=tilde)


def _assign_start_weights(state: TrainingState, batch: list[Trajectory]) -> np.ndarray:
    """Refresh the closed-form reweighting from the batch deltas at the current
    value function and stamp (tilde_alpha + eta_mu) onto each trajectory.

    Returns the per-trajectory delta values used (for the record)."""
    cfg = state.cfg
    deltas = traj_deltas(batch, state.value, cfg.gamma, cfg.k)
    if state.env.spec.tabular:
        means, _ = delta_means_by_start(batch, state.value, cfg.gamma, cfg.k, state.env.spec.n_states)
        tilde = alpha_closed_form(means, cfg.eta_alpha)
        state.tilde_alpha = tilde
        for traj in batch:
            traj.start_weight = float(tilde[int(traj.states[0])] + cfg.eta_mu)
    else:
        tilde = alpha_closed_form(deltas, cfg.eta_alpha)
        for traj, ta in zip(batch, tilde):
            traj.start_weight = float(ta + cfg.eta_mu)
    return deltas


def dual_ac_iteration(state: TrainingState, trace: list | None = None):
    """Run one outer iteration in place; returns (state, IterationRecord)."""
    cfg = state.cfg
    t = state.t + 1
    tic = time.perf_counter()

    # line 3: sample under pi^{t-1}, weighted by the previous reweighting
    batch = sample_trajectories(state.env, state.policy, cfg.batch_m, cfg.horizon, rng_seed=(cfg.seed, t))
    _assign_start_weights(state, batch)  # alpha^{t-1}: closed form at V^{t-1}
    if trace is not None:
        trace.append("sample")

    # line 4: V^t = argmin of the sampled path-regularized objective; the
    # penalty may also anchor on the previous batch (behavior-policy replay)
    behavior = batch + state.last_batch if cfg.replay_behavior else batch

    def value_grad(params):
        probe = state.value.copy()
        probe.set_params(params)
        return grad_v_estimate(batch, behavior, probe, cfg.gamma, cfg.k, cfg.eta_v)

    try:
        fit = fit_value(
            state.value.get_params(),
            value_grad,
            kappa=cfg.inner_v.stepsize,
            max_iters=cfg.inner_fit_iters,
            grad_tol=cfg.inner_fit_tol,
        )
    except FitDivergedError as err:
        raise IterationError(t, f"inner value fit diverged ({err})") from err
    state.value.set_params(fit.params)
    if trace is not None:
        trace.append("fit_v")

    # line 5: closed-form reweighting at V^t
    deltas = _assign_start_weights(state, batch)
    if trace is not None:
        trace.append("alpha")

    # line 6: stepsize decay
    zeta = cfg.schedule.at(t)
    if trace is not None:
        trace.append("stepsize")

    # line 7: policy gradient with (tilde_alpha + eta_mu) start weights
    g_pi = grad_pi_estimate(batch, state.value, state.policy, cfg.gamma, cfg.k)
    if not np.all(np.isfinite(g_pi)):
        raise IterationError(t, "non-finite policy gradient")
    if trace is not None:
        trace.append("grad_pi")

    # line 8: KL prox step (natural gradient or exact).  The Fisher/KL batch
    # is the support of the weighted k-step path measure: the first k+1 steps
    # of each trajectory, rows weighted by the trajectory's start weight.
    old_policy = state.policy.copy()
    window = [min(cfg.k + 1, traj.n_steps) for traj in batch]
    visited_states = np.concatenate([traj.states[:w] for traj, w in zip(batch, window)])
    visited_actions = np.concatenate(
        [np.reshape(traj.actions[:w], (w, -1)) for traj, w in zip(batch, window)]
    )
    row_weights = np.concatenate([np.full(w, traj.start_weight) for traj, w in zip(batch, window)])
    row_weights = row_weights / row_weights.sum()
    if state.env.spec.tabular:
        visited_actions = visited_actions.ravel()
    try:
        if cfg.exact_prox:
            new_params = exact_prox_pi(state.policy, g_pi, zeta, visited_states)
        else:
            fisher = fisher_estimate(
                state.policy, visited_states, visited_actions, damping=cfg.cg.damping, weights=row_weights
            )
            new_params = natural_gradient_step(
                state.policy.get_params(), g_pi, fisher, zeta, normalize=cfg.normalize_grad, cg=cfg.cg
            )
    except (FloatingPointError, RuntimeError) as err:
        raise IterationError(t, f"policy update failed ({err})") from err
    if not np.all(np.isfinite(new_params)):
        raise IterationError(t, "non-finite policy parameters after update")
    state.policy.set_params(new_params)
    kl = float(state.policy.kl(old_policy, visited_states))
    if trace is not None:
        trace.append("update_pi")

    state.t = t
    state.last_batch = batch
    record = IterationRecord(
        iteration=t,
        mean_return=float(np.mean([traj.rewards.sum() for traj in batch])),
        mean_disc_return=float(np.mean([mc_return(traj, cfg.gamma) for traj in batch])),
        mean_delta=float(np.mean(deltas)),
        inner_converged=bool(fit.converged),
        inner_residual=float(fit.grad_norm),
        kl=kl,
        stepsize=float(zeta),
        wall_time=time.perf_counter() - tic,
    )
    return state, record


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path: str, state: TrainingState, env_name: str = "") -> None:
    payload = {
        "env_name": env_name or getattr(state.env, "name", ""),
        "t": state.t,
        "config": state.cfg.to_dict(),
        "policy_params": state.policy.get_params().tolist(),
        "value_params": state.value.get_params().tolist(),
        "tilde_alpha": None if state.tilde_alpha is None else state.tilde_alpha.tolist(),
        "last_batch": [
            {
                "states": traj.states.tolist(),
                "actions": traj.actions.tolist(),
                "rewards": traj.rewards.tolist(),
                "start_weight": traj.start_weight,
                "terminated": traj.terminated,
            }
            for traj in state.last_batch
        ],
    }
    if isinstance(state.policy, GaussianRbfPolicy):
        fmap = state.policy.feature_map
        payload["feature_map"] = {
            "frequencies": fmap.frequencies.tolist(),
            "phases": fmap.phases.tolist(),
            "bandwidth": fmap.bandwidth,
        }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path: str, env=None) -> TrainingState:
    with open(path) as fh:
        payload = json.load(fh)
    if env is None:
        env = make_env(payload["env_name"])
    cfg = DualAcConfig.from_dict(payload["config"])
    state = init_state(cfg, env)
    if "feature_map" in payload:
        fm = payload["feature_map"]
        fmap = RbfFeatureMap(
            frequencies=np.array(fm["frequencies"]),
            phases=np.array(fm["phases"]),
            bandwidth=float(fm["bandwidth"]),
        )
        state.policy.feature_map = fmap
        state.value.feature_map = BiasedFeatureMap(fmap)
    state.policy.set_params(np.array(payload["policy_params"]))
    state.value.set_params(np.array(payload["value_params"]))
    state.t = int(payload["t"])
    if payload["tilde_alpha"] is not None:
        state.tilde_alpha = np.array(payload["tilde_alpha"])
    state.last_batch = [
        Trajectory(
            states=np.array(rec["states"]),
            actions=np.array(rec["actions"]),
            rewards=np.array(rec["rewards"], dtype=float),
            start_weight=float(rec["start_weight"]),
            terminated=bool(rec["terminated"]),
        )
        for rec in payload.get("last_batch", [])
    ]
    return state


# ---------------------------------------------------------------------------
# Experiment harness


def run_experiment(cfg: DualAcConfig, env_name: str, out_dir=None, record_sink=None) -> list[IterationRecord]:
    """Full training run; streams one record per iteration and checkpoints at the end.

    On an iteration error the last good checkpoint is written before the
    error propagates.
    """
    env = make_env(env_name) if isinstance(env_name, str) else env_name
    state = init_state(cfg, env)
    records: list[IterationRecord] = []
    records_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        records_fh = open(os.path.join(out_dir, "records.jsonl"), "w")
    try:
        for _ in range(state.cfg.iterations):
            try:
                state, rec = dual_ac_iteration(state)
            except IterationError:
                if out_dir is not None:
                    save_checkpoint(os.path.join(out_dir, "checkpoint.json"), state, env_name=str(env_name))
                raise
            records.append(rec)
            if record_sink is not None:
                record_sink(rec)
            if records_fh is not None:
                records_fh.write(rec.to_json_line() + "\n")
                records_fh.flush()
        if out_dir is not None:
            save_checkpoint(os.path.join(out_dir, "checkpoint.json"), state, env_name=str(env_name))
    finally:
        if records_fh is not None:
            records_fh.close()
    return records


def final_performance(records: list[IterationRecord], window: int = 10, metric: str = "mean_return") -> float:
    """Mean return over the last `window` iterations; -inf for an empty run."""
    if not records:
        return float("-inf")
    tail = records[-window:]
    return float(np.mean([getattr(r, metric) for r in tail]))


def ablation_variants(base: DualAcConfig, horizon: int) -> list[tuple[str, DualAcConfig]]:
    """The comparison set: full at k in {10, 50} where the horizon permits,
    plus the three ablations and the naive baseline."""
    out = []
    for k in (10, 50):
        if horizon >= k + 2:
            out.append((f"full_k{k}", dataclasses.replace(base, ablation="full", k=k)))
    if not out:  # horizon too short for the multi-step presets; keep base k
        out.append(("full", dataclasses.replace(base, ablation="full")))
    for name in ("no_multistep", "no_pathreg", "no_unbiased_v", "naive"):
        out.append((name, dataclasses.replace(base, ablation=name)))
    return out


def ablation_suite(base: DualAcConfig, env_name: str, seeds, record_sink=None, metric: str | None = None) -> dict:
    """Run every variant over the given seeds; returns per-run finals and
    per-variant mean +/- half-width (half the min-to-max spread).

    metric defaults to the discounted return on tabular environments (the
    undiscounted fixed-horizon return barely discriminates absorbing tasks)
    and the undiscounted return on continuous ones.  A variant whose run
    diverges is scored by the records it produced before halting.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("ablation comparisons need at least 2 seeds")
    probe_env = make_env(env_name) if isinstance(env_name, str) else env_name
    if metric is None:
        metric = "mean_disc_return" if probe_env.spec.tabular else "mean_return"
    horizon = base.horizon if base.horizon is not None else probe_env.spec.horizon
    rows = []
    for variant, cfg in ablation_variants(base, horizon):
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, seed=int(seed))
            collected: list[IterationRecord] = []
            diverged = False
            try:
                run_experiment(run_cfg, env_name, record_sink=collected.append)
            except IterationError:
                diverged = True
            rows.append(
                {
                    "variant": variant,
                    "seed": int(seed),
                    "final_return": final_performance(collected, metric=metric),
                    "diverged": diverged,
                }
            )
            if record_sink is not None:
                record_sink(rows[-1])
    summary = {}
    for variant in dict.fromkeys(r["variant"] for r in rows):
        finals = np.array([r["final_return"] for r in rows if r["variant"] == variant])
        summary[variant] = {
            "mean": float(finals.mean()),
            "half_width": float((finals.max() - finals.min()) / 2.0),
        }
    return {"rows": rows, "summary": summary}


# ---------------------------------------------------------------------------
# Tabular evaluation helpers (exact, oracle-based)


def tabular_policy_return(env, policy, gamma: float | None = None) -> float:
    """Exact E_mu[V^pi] of a softmax policy on a tabular environment."""
    mdp = env.as_tabular()
    if gamma is not None and gamma != mdp.gamma:
        mdp = dataclasses.replace(mdp, gamma=gamma)
    pi = policy.prob_matrix() if hasattr(policy, "prob_matrix") else np.asarray(policy)
    return float(mdp.mu @ policy_value(mdp, pi))


def tabular_state_weighting(env, policy) -> np.ndarray:
    mdp = env.as_tabular()
    pi = policy.prob_matrix() if hasattr(policy, "prob_matrix") else np.asarray(policy)
    return discounted_state_occupancy(mdp, pi)
