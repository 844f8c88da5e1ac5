"""Derivative-free policy search: cross-entropy method over flat weights.

Each iteration draws a population of parameter vectors around the running
mean, scores each member by seeded rollouts, and refits mean and spread to
the elite slice. All members of an iteration share the same episode seeds
(common random numbers), so fitness differences come from parameters, not
episode luck, and a fixed master seed gives a bit-identical training run.

Elite ranking adds a distance-to-goal shaping term to the sparse return so
early populations have gradient to climb; logged returns are the plain
environment returns, unshaped.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .envs import rollout
from .nn import Adam
from .policy import GoalConditionedPolicy, make_image_policy, make_vector_policy

__all__ = ["SearchConfig", "TrainingLog", "train_policy", "evaluate_policy",
           "TrainingError", "default_policy_for", "collect_demonstrations",
           "behavior_clone"]

# seed namespaces: parameter draws, training episodes, evaluation episodes,
# demonstration episodes
_NS_DRAW, _NS_EPISODE, _NS_EVAL, _NS_INIT, _NS_DEMO = 1, 2, 3, 7, 4


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class SearchConfig:
    population: int = 64
    elites: int = 8
    iterations: int = 50
    episodes_per_candidate: int = 4
    init_sigma: float = 0.5
    sigma_floor: float = 0.03
    sigma_smoothing: float = 0.7
    eval_episodes: int = 50
    eval_every: int = 5
    shaping_weight: float = 1.0
    approach_weight: float = 0.0

    def __post_init__(self) -> None:
        if not 1 <= self.elites <= self.population:
            raise ValueError("need 1 <= elites <= population")
        if self.iterations < 0 or self.episodes_per_candidate < 1:
            raise ValueError("bad iteration/episode counts")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if not 0.0 < self.sigma_smoothing <= 1.0:
            raise ValueError("sigma_smoothing must be in (0, 1]")


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)

    FIELDS = ("iteration", "mean_return", "max_return", "success_rate",
              "best_fitness", "sigma_mean")

    def append(self, **kw) -> None:
        self.rows.append({k: kw[k] for k in self.FIELDS})

    def save_csv(self, path: str) -> None:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=self.FIELDS)
            writer.writeheader()
            writer.writerows(self.rows)

    @staticmethod
    def load_csv(path: str) -> "TrainingLog":
        log = TrainingLog()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                log.rows.append({k: (int(row[k]) if k == "iteration" else float(row[k]))
                                 for k in TrainingLog.FIELDS})
        return log


def default_policy_for(env, rng: np.random.Generator) -> GoalConditionedPolicy:
    """Standard architecture for an environment's observation kind."""
    if env.obs_kind == "vector":
        return make_vector_policy(env.obs_dim, env.goal_dim,
                                  env.action_low, env.action_high, rng=rng)
    codec = "angle-mag" if getattr(env, "angular_action", False) else "box"
    return make_image_policy(env.resolution, env.goal_dim,
                             env.action_low, env.action_high, rng=rng,
                             action_codec=codec)


def _seeded(master: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master, *path)))


def _score(policy, env, flat, episode_rngs, shaping, approach):
    """Mean shaped fitness, plain return, and success rate."""
    policy.set_flat(flat)
    fit = ret = succ = 0.0
    for seed_seq in episode_rngs:
        ep = rollout(policy, env, rng=np.random.default_rng(seed_seq))
        dist = float(np.linalg.norm(ep.final_state[:2] - ep.x_g[:2]))
        fit += ep.ret - shaping * dist
        if approach > 0.0 and env.world.bar is not None:
            gap = env.world.bar.pose.position - ep.final_state[:2]
            fit -= approach * float(np.hypot(gap[0], gap[1]))
        ret += ep.ret
        succ += 1.0 if ep.success else 0.0
    n = float(len(episode_rngs))
    return fit / n, ret / n, succ / n


def evaluate_policy(policy, env, episodes: int, master: int) -> tuple[float, float]:
    """(mean return, success rate) over a fixed seeded episode block."""
    total = succ = 0.0
    for e in range(episodes):
        ep = rollout(policy, env, rng=_seeded(master, _NS_EVAL, e))
        total += ep.ret
        succ += 1.0 if ep.success else 0.0
    return total / episodes, succ / episodes


def collect_demonstrations(controller, env_factory, episodes: int, master: int):
    """Roll a scripted controller and record (observation, goal, action)
    triples for every non-terminal step."""
    env = env_factory()
    obs_rows, goal_rows, act_rows = [], [], []
    for e in range(episodes):
        obs = env.reset(_seeded(master, _NS_DEMO, e))
        while not env.done:
            action = np.asarray(controller(env), dtype=np.float64)
            obs_rows.append(np.asarray(obs, dtype=np.float64))
            goal_rows.append(env.goal.copy())
            act_rows.append(action)
            obs, _, _, _ = env.step(action)
    return np.array(obs_rows), np.array(goal_rows), np.array(act_rows)


def behavior_clone(
    policy: GoalConditionedPolicy,
    observations: np.ndarray,
    goals: np.ndarray,
    actions: np.ndarray,
    epochs: int = 30,
    batch_size: int = 64,
    lr: float = 1e-3,
    rng: np.random.Generator | None = None,
) -> list[float]:
    """Regress the policy's raw outputs onto squash-inverted demonstration
    actions (mean squared error). Returns the per-epoch loss history.

    This seeds the evolutionary search with a competent starting point; the
    search still owns the final weights.
    """
    rng = np.random.default_rng(0) if rng is None else rng

    def invert_box(acts, low, high):
        z = 2.0 * (acts - low) / (high - low) - 1.0
        # demonstrations often saturate the bounds; a tight clip keeps the
        # inverted targets well conditioned instead of exploding under arctanh
        return np.arctanh(np.clip(z, -0.99, 0.99))

    if policy.action_codec == "box":
        targets = invert_box(actions, policy.action_low, policy.action_high)
    else:
        angle = actions[:, 0]
        rest = invert_box(actions[:, 1:], policy.action_low[1:],
                          policy.action_high[1:])
        targets = np.column_stack([np.cos(angle), np.sin(angle), rest])
    optimizers = [Adam(policy.net, lr=lr)]
    if policy.head is not None:
        optimizers.append(Adam(policy.head, lr=lr))
    n = observations.shape[0]
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, batch_size):
            idx = order[s : s + batch_size]
            o, g, t = observations[idx], goals[idx], targets[idx]
            if policy.obs_kind == "vector":
                x = o if policy.goal_dim == 0 else np.concatenate([o, g], axis=1)
                out = policy.net.forward(x)
            else:
                feats = policy.net.forward(o[:, None, :, :])
                x = feats if policy.goal_dim == 0 else np.concatenate([feats, g], axis=1)
                out = policy.head.forward(x)
            diff = out - t
            total += float((diff * diff).sum())
            grad = 2.0 * diff / diff.size
            if policy.obs_kind == "vector":
                policy.net.backward(grad)
            else:
                gz = policy.head.backward(grad)
                policy.net.backward(gz[:, : gz.shape[1] - policy.goal_dim])
            for opt in optimizers:
                opt.step()
        history.append(total / targets.size)
    return history


def train_policy(
    env_factory,
    config: SearchConfig,
    rng: np.random.Generator,
    policy: GoalConditionedPolicy | None = None,
    verbose: bool = False,
) -> tuple[GoalConditionedPolicy, TrainingLog]:
    """Optimize a goal-conditioned policy on the factory's environment.

    Zero iterations return the initial policy untouched. The population
    mean is evaluated on a held-out seeded block every few iterations and
    the best evaluated weights win, so the returned policy never scores
    below the initial one on that block.
    """
    env = env_factory()
    master = int(rng.integers(0, 2**32))
    if policy is None:
        policy = default_policy_for(env, _seeded(master, _NS_INIT))
    log = TrainingLog()
    if config.iterations == 0:
        return policy, log

    init_flat = policy.get_flat().copy()
    best_flat = init_flat.copy()
    best_ret, _ = evaluate_policy(policy, env, config.eval_episodes, master)
    init_ret = best_ret

    mean = init_flat.copy()
    sigma = np.full(mean.size, config.init_sigma)
    for it in range(config.iterations):
        episode_seeds = [
            np.random.SeedSequence((master, _NS_EPISODE, it, e))
            for e in range(config.episodes_per_candidate)
        ]
        flats = np.empty((config.population, mean.size))
        fits = np.empty(config.population)
        rets = np.empty(config.population)
        succs = np.empty(config.population)
        for m in range(config.population):
            draw = _seeded(master, _NS_DRAW, it, m).normal(size=mean.size)
            flats[m] = mean + sigma * draw
            fits[m], rets[m], succs[m] = _score(
                policy, env, flats[m], episode_seeds,
                config.shaping_weight, config.approach_weight,
            )
        if not np.all(np.isfinite(fits)):
            raise TrainingError("non-finite return: search diverged")
        order = np.argsort(-fits, kind="stable")
        elite = flats[order[: config.elites]]
        mean = elite.mean(axis=0)
        # blend the refit scale with the previous one so a lucky elite set
        # cannot collapse exploration in a single iteration
        refit = np.maximum(elite.std(axis=0), config.sigma_floor)
        alpha = config.sigma_smoothing
        sigma = alpha * refit + (1.0 - alpha) * sigma
        if (it + 1) % config.eval_every == 0 or it == config.iterations - 1:
            policy.set_flat(mean)
            ret, _ = evaluate_policy(policy, env, config.eval_episodes, master)
            if ret > best_ret:
                best_ret = ret
                best_flat = mean.copy()
        log.append(
            iteration=it,
            mean_return=float(rets.mean()),
            max_return=float(rets.max()),
            success_rate=float(succs.mean()),
            best_fitness=float(fits[order[0]]),
            sigma_mean=float(sigma.mean()),
        )
        if verbose:
            r = log.rows[-1]
            print(f"iter {it:3d}  return {r['mean_return']:.3f}  "
                  f"max {r['max_return']:.3f}  success {r['success_rate']:.2f}  "
                  f"sigma {r['sigma_mean']:.3f}")

    policy.set_flat(best_flat)
    policy.meta = dict(policy.meta)
    policy.meta.update({
        "initial_eval_return": init_ret,
        "final_eval_return": best_ret,
        "iterations": config.iterations,
    })
    return policy, log
