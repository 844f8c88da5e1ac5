"""Skill training environments over the tabletop simulator.

Two skills ship with the package. The bar-retrieval skill steers the
handheld bar with pose deltas to drag an out-of-reach object toward a
target position; its observation is the stacked bar and object pose. The
edge-push skill nudges an object with fingertip pushes; its observation
is a rendered code grid of the table around the object.

Rewards are terminal-only indicator sums. Episodes end on goal arrival,
on the object leaving its table, or at the step cap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2, rectangle, wrap_angle
from .policy import GoalConditionedPolicy
from . import world as W

__all__ = [
    "RewardWeights",
    "Episode",
    "goal_reached",
    "reward_retrieve",
    "reward_edgepush",
    "make_training_world",
    "RetrieveEnv",
    "EdgePushEnv",
    "PointEnv",
    "rollout",
    "RETRIEVE_ACTION_LOW",
    "RETRIEVE_ACTION_HIGH",
    "EDGEPUSH_ACTION_LOW",
    "EDGEPUSH_ACTION_HIGH",
]

RETRIEVE_ACTION_LOW = np.array([-0.10, -0.10, -0.4])
RETRIEVE_ACTION_HIGH = np.array([0.10, 0.10, 0.4])
EDGEPUSH_ACTION_LOW = np.array([-math.pi, 0.0])
EDGEPUSH_ACTION_HIGH = np.array([math.pi, 0.15])


@dataclass(frozen=True)
class RewardWeights:
    k: float = 1.0       # retrieval: terminal goal bonus
    k1: float = 1.0      # edge-push: goal bonus
    k2: float = 1.0      # edge-push: graspable bonus
    k3: float = 2.0      # edge-push: off-table penalty
    eps: float = 0.03    # goal tolerance, meters

    def __post_init__(self) -> None:
        if min(self.k, self.k1, self.k2, self.k3) <= 0 or self.eps <= 0:
            raise ValueError("reward weights and tolerance must be positive")


def goal_reached(x, x_g, eps: float) -> int:
    """1 iff the position vectors are within eps (closed tolerance)."""
    x = np.asarray(x, dtype=np.float64)
    x_g = np.asarray(x_g, dtype=np.float64)
    return int(float(np.linalg.norm(x - x_g)) <= eps)


def reward_retrieve(x, x_g, weights: RewardWeights) -> float:
    """Terminal reward for the bar skill: k times the goal indicator.

    x is the 6-vector [bar pose, object pose]; the compared position is
    the object's planar position, x[3:5].
    """
    x = np.asarray(x, dtype=np.float64)
    return weights.k * goal_reached(x[3:5], x_g, weights.eps)


def reward_edgepush(
    world: W.TableTopWorld, x, x_g, weights: RewardWeights, object_id: str = "target"
) -> float:
    """Terminal reward for the push skill.

    x is the object's effect state [x, y, on_table flag]; graspable and
    off-table are read from the live world.
    """
    x = np.asarray(x, dtype=np.float64)
    on = world.objects[object_id].on_table is not None
    reached = goal_reached(x[:2], x_g, weights.eps)
    graspable = int(on and W.check_graspable(world, object_id))
    off = int(not on)
    return weights.k1 * reached + weights.k2 * graspable - weights.k3 * off


@dataclass
class Episode:
    x0: np.ndarray            # initial observation key (see env.x0_key)
    x_g: np.ndarray
    actions: list = field(default_factory=list)
    final_state: np.ndarray | None = None    # [x, y, on_table flag]
    ret: float = 0.0
    success: bool = False
    observations: list = field(default_factory=list)


def make_training_world(
    object_radius: float = 0.03,
    object_friction: float = 0.5,
    object_height: float = 0.10,
    object_shape: W.Shape = W.Shape.CYLINDER,
    include_bar: bool = True,
    object_id: str = "target",
) -> W.TableTopWorld:
    """Single-table world matching the benchmark scenarios' geometry."""
    table = W.Table("table-src", rectangle(0.25, 0.05, 0.95, 0.55))
    arm = W.ArmModel(Pose2(0.0, 0.0, 0.0), 0.15, 0.60, 0.08)
    obj = W.RigidObject(
        object_id, object_shape, object_radius, object_friction,
        Pose2(0.60, 0.30, 0.0), on_table="table-src", height=object_height,
    )
    bar = W.RigidObject(
        "bar", W.Shape.BOX, 0.30, 0.3,
        Pose2(0.90, 0.30, math.pi / 2.0),
        on_table="table-src" if include_bar else None,
        height=0.02, half_extent_y=0.015,
    )
    return W.TableTopWorld(
        tables={"table-src": table},
        objects={object_id: obj},
        arm=arm,
        bar=bar,
        sweep_region=(0.30, 0.00, 1.00, 0.60),
    )


class _SkillEnvBase:
    """Shared reset/termination plumbing for the two skill environments.

    start_region / goal_region pick the sampling support when reset draws
    positions itself: 'table' is the whole table surface (the universal
    set, used for dataset generation), 'operable' keeps starts where the
    arm can actually push, and 'workspace' keeps goals inside the reach
    annulus (used for training, so evaluations are in-distribution).
    """

    action_low: np.ndarray
    action_high: np.ndarray
    goal_dim = 2

    def __init__(
        self,
        template: W.TableTopWorld,
        object_id: str,
        table_id: str,
        weights: RewardWeights,
        max_steps: int,
        randomization: W.RandomizationBounds | None,
        start_region: str = "table",
        goal_region: str = "table",
    ):
        if start_region not in ("table", "operable", "beyond"):
            raise ValueError(f"unknown start_region '{start_region}'")
        if goal_region not in ("table", "workspace"):
            raise ValueError(f"unknown goal_region '{goal_region}'")
        self.template = template
        self.object_id = object_id
        self.table_id = table_id
        self.weights = weights
        self.max_steps = max_steps
        self.randomization = randomization
        self.start_region = start_region
        self.goal_region = goal_region
        self.world: W.TableTopWorld | None = None
        self.goal: np.ndarray | None = None
        self.steps = 0
        self.done = False
        self.success = False
        self.terminal_reward = 0.0
        self._rng: np.random.Generator | None = None

    def _fresh_world(self, rng: np.random.Generator) -> W.TableTopWorld:
        world = self.template.copy()
        if self.randomization is not None:
            draw = W.randomize_domain(self.randomization, rng)
            obj = world.objects[self.object_id]
            obj.shape = draw.shape
            obj.half_extent = draw.half_extent
            obj.kinetic_friction = draw.friction
            if draw.edge_angle != 0.0:
                table = world.tables[self.table_id]
                world.tables[self.table_id] = W.Table(
                    table.id, table.polygon.rotated(draw.edge_angle), table.height
                )
        return world

    def _sample_position(self, rng: np.random.Generator, region: str) -> np.ndarray:
        obj = self.world.objects[self.object_id]
        margin = obj.half_extent
        polygon = self.world.tables[self.table_id].polygon
        arm = self.world.arm
        if region == "workspace":
            # goal positions keep extra edge margin so arrival noise cannot
            # carry the object off the table
            margin += 0.03
        for _ in range(1000):
            p = polygon.sample_point(rng, margin)
            if region == "table":
                return p
            d = float(np.hypot(*(p - arm.base.position)))
            if region == "workspace":
                if arm.reach_min + 0.02 <= d <= arm.reach_max - 0.02:
                    return p
            elif region == "beyond":
                if d >= arm.reach_max + 0.02:
                    return p
            else:  # operable: a push start behind the object stays reachable
                slack = margin + self.world.params.push_clearance + 0.02
                if arm.reach_min <= d <= arm.reach_max - slack:
                    return p
        raise W.WorldError(f"could not sample a '{region}' position on the table")

    def effect_state(self) -> np.ndarray:
        obj = self.world.objects[self.object_id]
        on = 1.0 if obj.on_table is not None else 0.0
        return np.array([obj.pose.x, obj.pose.y, on])

    def _object_position(self) -> np.ndarray:
        return self.world.objects[self.object_id].position

    def _finish_if_terminal(self) -> float:
        """Evaluate termination after a state change; returns the reward."""
        obj = self.world.objects[self.object_id]
        reached = bool(goal_reached(self._object_position(), self.goal, self.weights.eps))
        fell = obj.on_table is None
        if reached or fell or self.steps >= self.max_steps:
            self.done = True
            self.success = reached and not fell
            self.terminal_reward = self._terminal_reward()
            return self.terminal_reward
        return 0.0

    def _terminal_reward(self) -> float:
        raise NotImplementedError

    def obs(self) -> np.ndarray:
        raise NotImplementedError

    def x0_key(self) -> np.ndarray:
        """Metric key identifying the episode's initial state."""
        raise NotImplementedError


class RetrieveEnv(_SkillEnvBase):
    """Drag the target object with the bar toward a goal position.

    Actions are bar pose deltas; the commanded bar target is clipped into
    the sweep region before the motion runs. Observation stacks the bar
    pose and the object pose.
    """

    obs_kind = "vector"
    obs_dim = 6

    def __init__(
        self,
        template: W.TableTopWorld | None = None,
        object_id: str = "target",
        table_id: str = "table-src",
        weights: RewardWeights = RewardWeights(),
        max_steps: int = 20,
        randomization: W.RandomizationBounds | None = None,
        bar_start: Pose2 | None = None,
        start_region: str = "table",
        goal_region: str = "table",
    ):
        super().__init__(
            template if template is not None else make_training_world(),
            object_id, table_id, weights, max_steps, randomization,
            start_region, goal_region,
        )
        self.action_low = RETRIEVE_ACTION_LOW.copy()
        self.action_high = RETRIEVE_ACTION_HIGH.copy()
        self.bar_start = bar_start if bar_start is not None else self.template.bar.pose
        self._x0_key: np.ndarray | None = None

    def obs(self) -> np.ndarray:
        bar = self.world.bar.pose
        obj = self.world.objects[self.object_id].pose
        return np.array([bar.x, bar.y, bar.yaw, obj.x, obj.y, obj.yaw])

    def x0_key(self) -> np.ndarray:
        assert self._x0_key is not None, "reset first"
        return self._x0_key

    def reset(
        self,
        rng: np.random.Generator,
        x0: np.ndarray | None = None,
        x_g: np.ndarray | None = None,
    ) -> np.ndarray:
        self.world = self._fresh_world(rng)
        self._rng = np.random.default_rng(int(rng.integers(0, 2**63)))
        obj = self.world.objects[self.object_id]
        bar_pose = self.bar_start
        if x0 is not None:
            x0 = np.asarray(x0, dtype=np.float64)
            if x0.size == 6:
                bar_pose = Pose2(*x0[:3])
                obj.pose = Pose2(*x0[3:6])
            elif x0.size == 3:
                obj.pose = Pose2(*x0)
            elif x0.size == 2:
                obj.pose = Pose2(x0[0], x0[1], 0.0)
            else:
                raise ValueError("x0 must have 2, 3 or 6 entries")
            if not self.world.tables[self.table_id].polygon.contains(obj.position):
                raise W.WorldError("initial object position is off the table")
        else:
            p = self._sample_position(rng, self.start_region)
            obj.pose = Pose2(float(p[0]), float(p[1]), 0.0)
        self.world.bar.pose = bar_pose
        obj.on_table = self.table_id
        if x_g is not None:
            self.goal = np.asarray(x_g, dtype=np.float64).copy()
        else:
            self.goal = self._sample_position(rng, self.goal_region)
        self.steps = 0
        self.done = False
        self.success = False
        self.terminal_reward = 0.0
        self._x0_key = self.obs()
        self._finish_if_terminal()
        return self.obs()

    def step(self, action: np.ndarray):
        if self.done:
            raise RuntimeError("episode finished; reset the environment")
        a = np.clip(np.asarray(action, dtype=np.float64), self.action_low, self.action_high)
        bar = self.world.bar.pose
        x0_, y0_, x1_, y1_ = self.world.sweep_region
        target = Pose2(
            float(np.clip(bar.x + a[0], x0_, x1_)),
            float(np.clip(bar.y + a[1], y0_, y1_)),
            wrap_angle(bar.yaw + a[2]),
        )
        self.world = W.step_bar_motion(self.world, target, self._rng)
        self.steps += 1
        reward = self._finish_if_terminal()
        return self.obs(), reward, self.done, {"steps": self.steps}

    def _terminal_reward(self) -> float:
        return reward_retrieve(self.obs(), self.goal, self.weights)


class EdgePushEnv(_SkillEnvBase):
    """Fingertip pushes rendered as a code grid around the table.

    An action is (direction, travel). Pushes whose start point falls
    outside the reach annulus are no-ops: the arm simply cannot get
    there, and episodes started out of reach score zero, which is what
    the downstream feasibility classifier must learn.
    """

    obs_kind = "image"
    # first action dimension is a direction angle: policies for this
    # environment should decode it from a cosine/sine pair
    angular_action = True

    def __init__(
        self,
        template: W.TableTopWorld | None = None,
        object_id: str = "target",
        table_id: str = "table-src",
        weights: RewardWeights = RewardWeights(),
        max_steps: int = 20,
        randomization: W.RandomizationBounds | None = None,
        resolution: int = 16,
        extent: float = 0.6,
        start_region: str = "table",
        goal_region: str = "table",
    ):
        template = template if template is not None else make_training_world(
            object_radius=0.065, object_friction=0.4, object_height=0.03,
            include_bar=False,
        )
        super().__init__(template, object_id, table_id, weights, max_steps,
                         randomization, start_region, goal_region)
        self.action_low = EDGEPUSH_ACTION_LOW.copy()
        self.action_high = EDGEPUSH_ACTION_HIGH.copy()
        self.resolution = resolution
        self.extent = extent
        self._x0_key: np.ndarray | None = None

    @property
    def obs_shape(self) -> tuple[int, int]:
        return (self.resolution, self.resolution)

    def obs(self) -> np.ndarray:
        grid = W.render_depth(
            self.world, self.table_id, self.resolution, self.extent,
            include=(self.object_id,),
        )
        return grid.codes.astype(np.float64) / 3.0

    def x0_key(self) -> np.ndarray:
        assert self._x0_key is not None, "reset first"
        return self._x0_key

    def reset(
        self,
        rng: np.random.Generator,
        x0: np.ndarray | None = None,
        x_g: np.ndarray | None = None,
    ) -> np.ndarray:
        self.world = self._fresh_world(rng)
        self._rng = np.random.default_rng(int(rng.integers(0, 2**63)))
        obj = self.world.objects[self.object_id]
        if x0 is not None:
            x0 = np.asarray(x0, dtype=np.float64)
            if x0.size == 2:
                obj.pose = Pose2(x0[0], x0[1], 0.0)
            elif x0.size == 3:
                obj.pose = Pose2(*x0)
            else:
                raise ValueError("x0 must have 2 or 3 entries")
            if not self.world.tables[self.table_id].polygon.contains(obj.position):
                raise W.WorldError("initial object position is off the table")
        else:
            p = self._sample_position(rng, self.start_region)
            obj.pose = Pose2(float(p[0]), float(p[1]), 0.0)
        obj.on_table = self.table_id
        if x_g is not None:
            self.goal = np.asarray(x_g, dtype=np.float64).copy()
        else:
            self.goal = self._sample_position(rng, self.goal_region)
        self.steps = 0
        self.done = False
        self.success = False
        self.terminal_reward = 0.0
        self._x0_key = self._object_position().copy()
        self._finish_if_terminal()
        return self.obs()

    def step(self, action: np.ndarray):
        if self.done:
            raise RuntimeError("episode finished; reset the environment")
        a = np.clip(np.asarray(action, dtype=np.float64), self.action_low, self.action_high)
        try:
            self.world = W.step_push(self.world, self.object_id, float(a[0]),
                                     float(a[1]), self._rng)
            blocked = False
        except W.WorldError:
            blocked = True
        self.steps += 1
        reward = self._finish_if_terminal()
        return self.obs(), reward, self.done, {"steps": self.steps, "blocked": blocked}

    def _terminal_reward(self) -> float:
        return reward_edgepush(
            self.world, self.effect_state(), self.goal, self.weights, self.object_id
        )


class PointEnv:
    """Free 2-D point with delta actions; the trainer's smoke-test env."""

    obs_kind = "vector"
    obs_dim = 2
    goal_dim = 2

    def __init__(self, eps: float = 0.03, max_steps: int = 20, step_size: float = 0.1):
        self.action_low = np.array([-step_size, -step_size])
        self.action_high = np.array([step_size, step_size])
        self.eps = eps
        self.max_steps = max_steps
        self.pos = np.zeros(2)
        self.goal = np.zeros(2)
        self.steps = 0
        self.done = False
        self.success = False
        self.terminal_reward = 0.0

    def obs(self) -> np.ndarray:
        return self.pos.copy()

    def x0_key(self) -> np.ndarray:
        return self._x0_key

    def effect_state(self) -> np.ndarray:
        return np.array([self.pos[0], self.pos[1], 1.0])

    def reset(self, rng, x0=None, x_g=None):
        self.pos = (np.asarray(x0, dtype=np.float64).copy() if x0 is not None
                    else rng.uniform(0.0, 1.0, 2))
        self.goal = (np.asarray(x_g, dtype=np.float64).copy() if x_g is not None
                     else rng.uniform(0.0, 1.0, 2))
        self.steps = 0
        self.done = False
        self.success = False
        self.terminal_reward = 0.0
        self._x0_key = self.pos.copy()
        self._check()
        return self.obs()

    def _check(self) -> float:
        if goal_reached(self.pos, self.goal, self.eps) or self.steps >= self.max_steps:
            self.done = True
            self.success = bool(goal_reached(self.pos, self.goal, self.eps))
            self.terminal_reward = 1.0 if self.success else 0.0
            return self.terminal_reward
        return 0.0

    def step(self, action):
        if self.done:
            raise RuntimeError("episode finished; reset the environment")
        a = np.clip(np.asarray(action, dtype=np.float64), self.action_low, self.action_high)
        self.pos = self.pos + a
        self.steps += 1
        reward = self._check()
        return self.obs(), reward, self.done, {"steps": self.steps}


def rollout(
    policy: GoalConditionedPolicy,
    env,
    x0: np.ndarray | None = None,
    x_g: np.ndarray | None = None,
    max_steps: int | None = None,
    rng: np.random.Generator | None = None,
    record_obs: bool = False,
) -> Episode:
    """Run one goal-conditioned episode and collect its record.

    The environment terminates on arrival, so a start already at the
    goal yields zero actions and the terminal reward.
    """
    r = np.random.default_rng(0) if rng is None else rng
    obs = env.reset(r, x0, x_g)
    limit = env.max_steps if max_steps is None else min(max_steps, env.max_steps)
    ep = Episode(x0=env.x0_key().copy(), x_g=np.asarray(env.goal, dtype=np.float64).copy())
    if record_obs:
        ep.observations.append(obs)
    total = env.terminal_reward if env.done else 0.0
    while not env.done and env.steps < limit:
        action = policy.act(obs, env.goal)
        obs, reward, _, _ = env.step(action)
        total += reward
        ep.actions.append(np.asarray(action))
        if record_obs:
            ep.observations.append(obs)
    ep.ret = float(total)
    ep.success = bool(env.success)
    ep.final_state = env.effect_state()
    return ep
