"""Goal-conditioned control policies with JSON checkpoints.

A policy squashes a raw network output through tanh into a fixed action
box. Vector policies feed [observation, goal] through one dense stack.
Image policies run the grid through a conv trunk, then concatenate the
flattened features with the goal vector before a dense head, so both
kinds see the assigned sub-goal.

Checkpoints are plain JSON: architecture configs, flat weight list,
action bounds, observation metadata. Python's float repr round-trips
exactly, so save/load preserves behavior bit for bit.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .nn import Conv2d, Dense, Flatten, Relu, Sequential, Tanh

__all__ = [
    "GoalConditionedPolicy",
    "make_vector_policy",
    "make_image_policy",
    "CheckpointError",
]

_FORMAT = "skillplan-policy-v1"


class CheckpointError(Exception):
    pass


@dataclass
class GoalConditionedPolicy:
    """net is the full stack for vector input; for image input it is the
    conv trunk (ending in Flatten) and `head` maps [features, goal] to
    raw actions."""

    net: Sequential
    action_low: np.ndarray
    action_high: np.ndarray
    obs_kind: str                      # 'vector' or 'image'
    obs_shape: tuple[int, ...]
    goal_dim: int = 0
    head: Sequential | None = None
    action_codec: str = "box"          # 'box' or 'angle-mag'
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.action_low = np.asarray(self.action_low, dtype=np.float64)
        self.action_high = np.asarray(self.action_high, dtype=np.float64)
        if self.action_low.shape != self.action_high.shape:
            raise ValueError("action bound shapes differ")
        if np.any(self.action_low >= self.action_high):
            raise ValueError("action_low must be < action_high elementwise")
        if self.obs_kind not in ("vector", "image"):
            raise ValueError(f"unknown obs_kind '{self.obs_kind}'")
        if self.obs_kind == "image" and self.head is None:
            raise ValueError("image policies need a dense head")
        if self.obs_kind == "vector" and self.head is not None:
            raise ValueError("vector policies are a single stack")
        if self.action_codec not in ("box", "angle-mag"):
            raise ValueError(f"unknown action_codec '{self.action_codec}'")

    @property
    def action_dim(self) -> int:
        return int(self.action_low.size)

    @property
    def raw_dim(self) -> int:
        """Network outputs per action: the angle-mag codec spends two raw
        values (cosine, sine) on the leading angular dimension so direction
        regression and search never cross a wrap discontinuity."""
        return self.action_dim + (1 if self.action_codec == "angle-mag" else 0)

    def decode(self, raw: np.ndarray) -> np.ndarray:
        """Map raw network outputs to one in-bounds action."""
        if self.action_codec == "box":
            squashed = np.tanh(raw)
            return self.action_low + (squashed + 1.0) * 0.5 * (
                self.action_high - self.action_low
            )
        angle = float(np.arctan2(raw[1], raw[0]))
        rest = np.tanh(raw[2:])
        low, high = self.action_low[1:], self.action_high[1:]
        return np.concatenate([[angle], low + (rest + 1.0) * 0.5 * (high - low)])

    def _check_goal(self, goal: np.ndarray | None) -> np.ndarray | None:
        if self.goal_dim == 0:
            return None
        if goal is None:
            raise ValueError("policy needs a goal vector")
        goal = np.asarray(goal, dtype=np.float64)
        if goal.shape != (self.goal_dim,):
            raise ValueError(f"expected goal dim {self.goal_dim}, got {goal.shape}")
        return goal

    def act(self, obs: np.ndarray, goal: np.ndarray | None = None) -> np.ndarray:
        """Deterministic bounded action for one observation."""
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != self.obs_shape:
            raise ValueError(f"expected obs shape {self.obs_shape}, got {obs.shape}")
        goal = self._check_goal(goal)
        if self.obs_kind == "vector":
            z = obs if goal is None else np.concatenate([obs, goal])
            raw = self.net.forward(z[None, :])[0]
        else:
            feats = self.net.forward(obs[None, None, :, :])[0]
            z = feats if goal is None else np.concatenate([feats, goal])
            assert self.head is not None
            raw = self.head.forward(z[None, :])[0]
        return self.decode(raw)

    # Flat-vector access used by the evolutionary trainer.
    def get_flat(self) -> np.ndarray:
        flat = self.net.get_flat()
        if self.head is not None:
            flat = np.concatenate([flat, self.head.get_flat()])
        return flat

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_params:
            raise ValueError(f"expected {self.num_params} params, got {vec.size}")
        n = self.net.num_params
        self.net.set_flat(vec[:n])
        if self.head is not None:
            self.head.set_flat(vec[n:])

    @property
    def num_params(self) -> int:
        n = self.net.num_params
        if self.head is not None:
            n += self.head.num_params
        return n

    def save(self, path: str) -> None:
        payload = {
            "format": _FORMAT,
            "net": self.net.config(),
            "head": None if self.head is None else self.head.config(),
            "weights": self.get_flat().tolist(),
            "action_low": self.action_low.tolist(),
            "action_high": self.action_high.tolist(),
            "obs_kind": self.obs_kind,
            "obs_shape": list(self.obs_shape),
            "goal_dim": self.goal_dim,
            "action_codec": self.action_codec,
            "meta": self.meta,
        }
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w") as f:
            json.dump(payload, f)

    @staticmethod
    def load(path: str) -> "GoalConditionedPolicy":
        if not os.path.exists(path):
            raise CheckpointError(f"missing checkpoint: {path}")
        with open(path) as f:
            payload = json.load(f)
        if payload.get("format") != _FORMAT:
            raise CheckpointError(f"unrecognized checkpoint format in {path}")
        head_cfg = payload.get("head")
        policy = GoalConditionedPolicy(
            net=Sequential.from_config(payload["net"]),
            action_low=np.array(payload["action_low"], dtype=np.float64),
            action_high=np.array(payload["action_high"], dtype=np.float64),
            obs_kind=payload["obs_kind"],
            obs_shape=tuple(payload["obs_shape"]),
            goal_dim=int(payload["goal_dim"]),
            head=None if head_cfg is None else Sequential.from_config(head_cfg),
            action_codec=payload.get("action_codec", "box"),
            meta=payload.get("meta", {}),
        )
        policy.set_flat(np.array(payload["weights"], dtype=np.float64))
        return policy


def make_vector_policy(
    obs_dim: int,
    goal_dim: int,
    action_low,
    action_high,
    hidden: tuple[int, ...] = (32, 32),
    rng: np.random.Generator | None = None,
) -> GoalConditionedPolicy:
    r = np.random.default_rng(0) if rng is None else rng
    low = np.asarray(action_low, dtype=np.float64)
    dims = [obs_dim + goal_dim, *hidden]
    layers = []
    for a, b in zip(dims[:-1], dims[1:]):
        layers += [Dense(a, b, r), Tanh()]
    layers.append(Dense(dims[-1], low.size, r))
    return GoalConditionedPolicy(
        net=Sequential(layers),
        action_low=low,
        action_high=action_high,
        obs_kind="vector",
        obs_shape=(obs_dim,),
        goal_dim=goal_dim,
    )


def make_image_policy(
    resolution: int,
    goal_dim: int,
    action_low,
    action_high,
    rng: np.random.Generator | None = None,
    action_codec: str = "box",
) -> GoalConditionedPolicy:
    """Two-conv trunk sized for square code grids down to 16x16."""
    r = np.random.default_rng(0) if rng is None else rng
    low = np.asarray(action_low, dtype=np.float64)
    o1 = (resolution - 5) // 2 + 1
    o2 = (o1 - 3) // 2 + 1
    if o2 < 1:
        raise ValueError(f"resolution {resolution} too small for the conv trunk")
    trunk = Sequential([
        Conv2d(1, 4, 5, stride=2, rng=r), Relu(),
        Conv2d(4, 8, 3, stride=2, rng=r), Relu(),
        Flatten(),
    ])
    flat = 8 * o2 * o2
    raw_dim = low.size + (1 if action_codec == "angle-mag" else 0)
    head = Sequential([
        Dense(flat + goal_dim, 32, r), Tanh(), Dense(32, raw_dim, r),
    ])
    return GoalConditionedPolicy(
        net=trunk,
        action_low=low,
        action_high=action_high,
        obs_kind="image",
        obs_shape=(resolution, resolution),
        goal_dim=goal_dim,
        head=head,
        action_codec=action_codec,
    )
