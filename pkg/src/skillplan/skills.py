"""Skill bundles: policy, feasibility classifier and sub-goal memory per skill.

This module is the single source of truth for how each skill is trained and
evaluated (region and randomization choices), how its dataset is generated
(universal-set sampling so the classifier sees both feasible and infeasible
starts), and how the planner computes observation features and downstream
feasibility checks for candidate effects.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import world as W
from .connectors import (
    Discriminator,
    FitConfig,
    SkillDataset,
    SubgoalIndex,
    generate_dataset,
    train_discriminator,
)
from .envs import EdgePushEnv, RetrieveEnv, _SkillEnvBase
from .policy import CheckpointError, GoalConditionedPolicy
from .training import (
    SearchConfig,
    TrainingLog,
    behavior_clone,
    collect_demonstrations,
    default_policy_for,
    train_policy,
)

RETRIEVE = "retrieve"
EDGEPUSH = "edgepush"
SKILL_NAMES = (RETRIEVE, EDGEPUSH)

# Policies are trained where the skill can physically act (the bar reaches
# out-of-workspace objects; pushes need an in-reach start point), while
# datasets for the feasibility classifier sample starts over the whole
# table so both labels appear. Goals used in training keep an extra edge
# margin; dataset goals cover the full table.
RETRIEVE_MAX_STEPS = 30
EDGEPUSH_MAX_STEPS = 10

_RETRIEVE_BOUNDS = dict(
    friction_lo=0.3, friction_hi=0.7, half_extent_lo=0.02, half_extent_hi=0.045
)
_EDGEPUSH_BOUNDS = dict(
    friction_lo=0.3, friction_hi=0.7, half_extent_lo=0.04, half_extent_hi=0.08
)


def _check_skill(skill: str) -> None:
    if skill not in SKILL_NAMES:
        raise ValueError(f"unknown skill '{skill}'; expected one of {SKILL_NAMES}")


def training_env(skill: str) -> _SkillEnvBase:
    """The environment a skill's policy is trained and evaluated on."""
    _check_skill(skill)
    if skill == RETRIEVE:
        return RetrieveEnv(
            max_steps=RETRIEVE_MAX_STEPS,
            randomization=W.RandomizationBounds(**_RETRIEVE_BOUNDS),
            start_region="beyond",
            goal_region="workspace",
        )
    return EdgePushEnv(
        max_steps=EDGEPUSH_MAX_STEPS,
        randomization=W.RandomizationBounds(**_EDGEPUSH_BOUNDS),
        start_region="operable",
        goal_region="workspace",
    )


def dataset_env(skill: str) -> _SkillEnvBase:
    """The environment dataset generation samples; starts and goals cover
    the whole table so infeasible starts are represented."""
    _check_skill(skill)
    if skill == RETRIEVE:
        return RetrieveEnv(
            max_steps=RETRIEVE_MAX_STEPS,
            randomization=W.RandomizationBounds(**_RETRIEVE_BOUNDS),
            start_region="table",
            goal_region="table",
        )
    return EdgePushEnv(
        max_steps=EDGEPUSH_MAX_STEPS,
        randomization=W.RandomizationBounds(**_EDGEPUSH_BOUNDS),
        start_region="table",
        goal_region="table",
    )


def artifact_search_config(skill: str) -> SearchConfig:
    """Search settings used to produce the shipped policy checkpoints.

    Small init_sigma: the search starts from a demonstration-seeded policy
    and only needs local polish, not global exploration."""
    _check_skill(skill)
    return SearchConfig(
        population=64,
        elites=8,
        iterations=60,
        episodes_per_candidate=6,
        init_sigma=0.05,
        sigma_floor=0.01,
        eval_episodes=50,
        eval_every=5,
    )


# The bar-to-standoff distance the retrieval controller keeps before it
# commits to a drag, and the clearance it demands before rotating the bar
# near the object (the swing of a 0.6 m bar sweeps a wide arc).
_DRAG_STANDOFF = 0.075
_ROTATE_CLEARANCE = 0.12
# Cloning recipe per skill. The extra corrective round (roll the cloned
# policy, relabel visited states with the scripted law, refit on the
# aggregate) fixes compounding drift for the image skill but muddies the
# retrieval fit, whose scripted law has sharp phase boundaries.
_DEMO_EPISODES = {RETRIEVE: 400, EDGEPUSH: 800}
_CORRECTION_EPISODES = {RETRIEVE: 0, EDGEPUSH: 600}
_BC_EPOCHS = {RETRIEVE: 200, EDGEPUSH: 400}
_BC_LR = 2e-3


def _yaw_error_mod_pi(target: float, current: float) -> float:
    # either long face of the bar can push, so orientation matters mod pi
    return (target - current + np.pi / 2.0) % np.pi - np.pi / 2.0


def _retrieve_controller(env) -> np.ndarray:
    bar = env.world.bar.pose
    obj = env.world.object(env.object_id).position
    d = env.goal - obj
    dist = float(np.hypot(d[0], d[1]))
    u = d / max(dist, 1e-9)
    side_yaw = float(np.arctan2(u[1], u[0])) + np.pi / 2.0
    yerr = _yaw_error_mod_pi(side_yaw, bar.yaw)
    bar_dist = float(np.hypot(bar.x - obj[0], bar.y - obj[1]))
    station = obj - u * _DRAG_STANDOFF

    if abs(yerr) > 0.12 and bar_dist < _ROTATE_CLEARANCE + 0.06:
        back = obj - u * (_ROTATE_CLEARANCE + 0.11)
        dyaw = np.clip(yerr, -0.4, 0.4) if bar_dist > _ROTATE_CLEARANCE else 0.0
        return np.array([
            np.clip(back[0] - bar.x, -0.1, 0.1),
            np.clip(back[1] - bar.y, -0.1, 0.1),
            dyaw,
        ])
    if abs(yerr) > 0.12:
        return np.array([
            np.clip(station[0] - bar.x, -0.05, 0.05),
            np.clip(station[1] - bar.y, -0.05, 0.05),
            np.clip(yerr, -0.4, 0.4),
        ])
    err = float(np.hypot(bar.x - station[0], bar.y - station[1]))
    lead = min(0.08, dist + 0.015) if err < 0.03 else 0.0
    target = station + u * lead
    return np.array([
        np.clip(target[0] - bar.x, -0.1, 0.1),
        np.clip(target[1] - bar.y, -0.1, 0.1),
        np.clip(yerr, -0.4, 0.4),
    ])


def _edgepush_controller(env) -> np.ndarray:
    p = env.world.object(env.object_id).position
    d = env.goal - p
    dist = float(np.hypot(d[0], d[1]))
    return np.array([float(np.arctan2(d[1], d[0])), min(0.15, dist)])


def scripted_controller(skill: str):
    """Hand-written feedback law used to seed policy search with
    demonstrations. Never used at planning or execution time."""
    _check_skill(skill)
    return _retrieve_controller if skill == RETRIEVE else _edgepush_controller


def train_skill(
    skill: str,
    rng: np.random.Generator,
    config: SearchConfig | None = None,
    verbose: bool = False,
    seed_with_demonstrations: bool = True,
) -> tuple[GoalConditionedPolicy, TrainingLog]:
    """Full policy pipeline for one skill: optional demonstration-seeded
    initialization, then evolutionary search on the training environment."""
    _check_skill(skill)
    cfg = config if config is not None else artifact_search_config(skill)
    factory = lambda: training_env(skill)
    policy = None
    if seed_with_demonstrations:
        controller = scripted_controller(skill)
        epochs = _BC_EPOCHS[skill]
        demo_master = int(rng.integers(0, 2**32))
        obs, goals, actions = collect_demonstrations(
            controller, factory, _DEMO_EPISODES[skill], demo_master
        )
        policy = default_policy_for(training_env(skill), rng)
        losses = behavior_clone(policy, obs, goals, actions,
                                epochs=epochs, lr=_BC_LR, rng=rng)
        if _CORRECTION_EPISODES[skill]:
            env = factory()
            extra_obs, extra_goals, extra_actions = [], [], []
            roll_master = int(rng.integers(0, 2**32))
            for e in range(_CORRECTION_EPISODES[skill]):
                ob = env.reset(
                    np.random.default_rng(np.random.SeedSequence((roll_master, e)))
                )
                while not env.done:
                    extra_obs.append(np.asarray(ob, dtype=np.float64))
                    extra_goals.append(env.goal.copy())
                    extra_actions.append(
                        np.asarray(controller(env), dtype=np.float64)
                    )
                    ob, _, _, _ = env.step(policy.act(ob, env.goal))
            obs = np.concatenate([obs, np.array(extra_obs)])
            goals = np.concatenate([goals, np.array(extra_goals)])
            actions = np.concatenate([actions, np.array(extra_actions)])
            policy = default_policy_for(training_env(skill), rng)
            losses = behavior_clone(policy, obs, goals, actions,
                                    epochs=epochs, lr=_BC_LR, rng=rng)
        policy.meta["clone_loss"] = [float(losses[0]), float(losses[-1])]
    trained, log = train_policy(factory, cfg, rng, policy=policy, verbose=verbose)
    return trained, log


def build_skill_dataset(
    skill: str,
    policy: GoalConditionedPolicy,
    rng: np.random.Generator,
    num_pairs: int = 2000,
    effect_samples: int = 5,
) -> SkillDataset:
    _check_skill(skill)
    return generate_dataset(
        policy, dataset_env(skill), num_pairs, effect_samples, rng, skill=skill
    )


def fit_feasibility(
    dataset: SkillDataset,
    rng: np.random.Generator,
    config: FitConfig | None = None,
) -> Discriminator:
    return train_discriminator(dataset, config=config or FitConfig(), rng=rng)


def observation_for(
    skill: str, world: W.TableTopWorld, object_id: str, table_id: str
) -> np.ndarray:
    """Flat feature vector for the feasibility classifier, computed from a
    live world the same way the training environments build observations."""
    _check_skill(skill)
    if skill == RETRIEVE:
        bar = world.bar.pose
        obj = world.object(object_id).pose
        return np.array([bar.x, bar.y, bar.yaw, obj.x, obj.y, obj.yaw])
    grid = W.render_depth(world, table_id, resolution=16, extent=0.6,
                          include=(object_id,))
    return (grid.codes.astype(np.float64) / 3.0).ravel()


def subgoal_key_for(
    skill: str, world: W.TableTopWorld, object_id: str
) -> np.ndarray:
    """The key the sub-goal memory indexes on, from a live world."""
    _check_skill(skill)
    if skill == RETRIEVE:
        bar = world.bar.pose
        obj = world.object(object_id).pose
        return np.array([bar.x, bar.y, bar.yaw, obj.x, obj.y, obj.yaw])
    return world.object(object_id).position.copy()


def pick_feasibility(world: W.TableTopWorld, object_id: str):
    """Predicate over effect rows (x, y, on-table flag): true iff a pick of
    the object at that position would be reachable and graspable. This is
    the downstream check optimistic substitution scores candidates against.
    """

    def predicate(effect: np.ndarray) -> bool:
        if effect[2] < 0.5:
            return False
        p = np.asarray(effect[:2], dtype=np.float64)
        if not W.in_workspace(world.arm, p):
            return False
        return bool(W.grasp_candidates(world, object_id, position=p))

    return predicate


def hb_push_target(world: W.TableTopWorld, object_id: str) -> np.ndarray:
    """Hand-coded target for the deterministic baseline: straight toward the
    nearest edge of the supporting table until the rim sticks out enough to
    pinch."""
    obj = world.object(object_id)
    table = world.table_of(object_id)
    edge = table.polygon.nearest_edge(obj.position)
    n = table.polygon.edge_outward_normal(edge)
    sd = float(table.polygon.edge_signed_distances(obj.position)[edge])
    overhang = world.params.rim_min_overhang + 0.005
    return obj.position + n * (overhang - obj.half_extent - sd)


def srl_nominal_goal(world: W.TableTopWorld, table_id: str) -> np.ndarray:
    """Fixed mid-workspace point the undiscriminated baseline steers to:
    the mid-reach point along the ray from the arm base to the table centroid."""
    base = world.arm.base.position
    centroid = world.tables[table_id].polygon.centroid()
    direction = centroid - base
    direction = direction / np.linalg.norm(direction)
    mid = 0.5 * (world.arm.reach_min + world.arm.reach_max)
    return base + mid * direction


@dataclass
class SkillBundle:
    """Trained artifacts for one skill, as the planner and executor use them."""

    name: str
    policy: GoalConditionedPolicy
    discriminator: Discriminator
    dataset: SkillDataset
    subgoals: SubgoalIndex

    def feasible_from(self, features: np.ndarray) -> bool:
        return self.discriminator.classify(features)


def bundle_paths(directory: str | Path, skill: str) -> dict[str, Path]:
    d = Path(directory)
    return {
        "policy": d / f"{skill}_policy.json",
        "dataset": d / f"{skill}_dataset.jsonl",
        "discriminator": d / f"{skill}_discriminator.json",
    }


def save_bundle(
    directory: str | Path,
    skill: str,
    policy: GoalConditionedPolicy | None = None,
    dataset: SkillDataset | None = None,
    discriminator: Discriminator | None = None,
) -> None:
    _check_skill(skill)
    Path(directory).mkdir(parents=True, exist_ok=True)
    paths = bundle_paths(directory, skill)
    if policy is not None:
        policy.save(paths["policy"])
    if dataset is not None:
        dataset.save_jsonl(paths["dataset"])
    if discriminator is not None:
        discriminator.save(paths["discriminator"])


def load_bundle(directory: str | Path, skill: str, k: int = 10) -> SkillBundle:
    _check_skill(skill)
    paths = bundle_paths(directory, skill)
    for path in paths.values():
        if not path.exists():
            raise CheckpointError(f"missing checkpoint: {path}")
    policy = GoalConditionedPolicy.load(paths["policy"])
    dataset = SkillDataset.load_jsonl(paths["dataset"])
    discriminator = Discriminator.load(paths["discriminator"])
    return SkillBundle(
        name=skill,
        policy=policy,
        discriminator=discriminator,
        dataset=dataset,
        subgoals=SubgoalIndex(dataset),
    )


def load_skill_library(
    directory: str | Path, skills: tuple[str, ...] = SKILL_NAMES
) -> dict[str, SkillBundle]:
    return {skill: load_bundle(directory, skill) for skill in skills}
