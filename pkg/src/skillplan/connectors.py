"""Data-driven connectors between skill policies and the symbolic planner.

Three artifacts are produced per skill from one rollout dataset:

* a binary state discriminator that certifies whether the policy can act
  from a given observation (grounds the Can...From predicates),
* a sub-goal index answering k-NN queries with previously successful
  (goal, effect-cloud) pairs (grounds the Can...To predicates and
  supplies goal substitutions), and
* an optimism score: the fraction of a substitution's recorded effect
  states that satisfy the next action's feasibility predicate.

Dataset files are line-delimited JSON with a header line followed by one
record per line; floats survive the round trip exactly.
"""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kdtree import KDTree
from .nn import Conv2d, Dense, Flatten, Relu, Sequential, Sigmoid, Tanh
from .envs import rollout

__all__ = [
    "EpisodeRecord",
    "SkillDataset",
    "generate_dataset",
    "bce_loss",
    "bce_grad",
    "Discriminator",
    "FitConfig",
    "train_discriminator",
    "Substitution",
    "SubgoalIndex",
    "knn_query",
    "optimism",
    "best_substitution",
    "DatasetError",
]

_DISC_FORMAT = "skillplan-discriminator-v1"


class DatasetError(Exception):
    pass


@dataclass
class EpisodeRecord:
    """One (initial state, goal) pair with its n observed effect states."""

    x0: np.ndarray            # observation at the initial state (image flattened)
    x0_key: np.ndarray        # metric key for neighbor search
    x_g: np.ndarray
    effects: np.ndarray       # (n, 3) rows [x, y, on_table flag]
    s: int

    def to_json(self) -> str:
        return json.dumps({
            "x0": self.x0.tolist(),
            "x0_key": self.x0_key.tolist(),
            "x_g": self.x_g.tolist(),
            "effects": self.effects.tolist(),
            "s": int(self.s),
        })

    @staticmethod
    def from_json(line: str) -> "EpisodeRecord":
        d = json.loads(line)
        return EpisodeRecord(
            x0=np.array(d["x0"], dtype=np.float64),
            x0_key=np.array(d["x0_key"], dtype=np.float64),
            x_g=np.array(d["x_g"], dtype=np.float64),
            effects=np.array(d["effects"], dtype=np.float64),
            s=int(d["s"]),
        )


@dataclass
class SkillDataset:
    skill: str
    eps: float
    n: int
    seed: int
    obs_kind: str                       # 'vector' or 'image'
    obs_shape: tuple[int, ...]
    records: list[EpisodeRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def save_jsonl(self, path: str) -> None:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        header = json.dumps({
            "skill": self.skill, "eps": self.eps, "n": self.n,
            "seed": self.seed, "obs_kind": self.obs_kind,
            "obs_shape": list(self.obs_shape),
        })
        with open(path, "w") as f:
            f.write(header + "\n")
            for rec in self.records:
                f.write(rec.to_json() + "\n")

    @staticmethod
    def load_jsonl(path: str) -> "SkillDataset":
        if not os.path.exists(path):
            raise DatasetError(f"missing dataset: {path}")
        with open(path) as f:
            lines = [ln for ln in f.read().splitlines() if ln.strip()]
        if not lines:
            raise DatasetError(f"empty dataset file: {path}")
        h = json.loads(lines[0])
        ds = SkillDataset(
            skill=h["skill"], eps=float(h["eps"]), n=int(h["n"]),
            seed=int(h["seed"]), obs_kind=h["obs_kind"],
            obs_shape=tuple(h["obs_shape"]),
        )
        ds.records = [EpisodeRecord.from_json(ln) for ln in lines[1:]]
        return ds


def generate_dataset(
    policy,
    env,
    num_pairs: int,
    n: int,
    rng: np.random.Generator,
    skill: str = "skill",
) -> SkillDataset:
    """Sample (x0, x_g) pairs from the env's regions and roll each out n times.

    The success label follows the distance rule on the first (representative)
    effect state: s = 1 iff its position lies within eps of the goal.
    """
    if n < 1:
        raise ValueError("need n >= 1 effect rollouts per pair")
    master = int(rng.integers(0, 2**32))
    eps = env.weights.eps
    ds = SkillDataset(
        skill=skill, eps=eps, n=n, seed=master,
        obs_kind=env.obs_kind,
        obs_shape=env.obs_shape if env.obs_kind == "image" else (env.obs_dim,),
    )
    for i in range(num_pairs):
        pair_rng = np.random.default_rng(np.random.SeedSequence((master, 5, i)))
        env.reset(pair_rng)
        key = env.x0_key().copy()
        x_g = np.asarray(env.goal, dtype=np.float64).copy()
        effects = np.empty((n, 3))
        x0_obs: np.ndarray | None = None
        for j in range(n):
            ep = rollout(
                policy, env, x0=key, x_g=x_g,
                rng=np.random.default_rng(np.random.SeedSequence((master, 6, i, j))),
                record_obs=(j == 0),
            )
            if j == 0:
                x0_obs = np.asarray(ep.observations[0], dtype=np.float64).ravel()
            effects[j] = ep.final_state
        s = int(float(np.linalg.norm(effects[0, :2] - x_g)) <= eps)
        ds.records.append(EpisodeRecord(x0=x0_obs, x0_key=key, x_g=x_g,
                                        effects=effects, s=s))
    return ds


# ---------------------------------------------------------------------------
# Binary cross entropy

_CLIP = 1e-7


def bce_loss(predictions, labels) -> float:
    """Mean negated log-likelihood of Bernoulli labels under predictions."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    p = np.clip(p, _CLIP, 1.0 - _CLIP)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def bce_grad(predictions, labels) -> np.ndarray:
    """d(mean negated BCE)/d predictions, consistent with bce_loss's clip."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(p.shape)
    pc = np.clip(p, _CLIP, 1.0 - _CLIP)
    g = (pc - y) / (pc * (1.0 - pc)) / p.size
    # outside the clip band the loss is constant in the prediction
    g[(p < _CLIP) | (p > 1.0 - _CLIP)] = 0.0
    return g


# ---------------------------------------------------------------------------
# Discriminator


@dataclass(frozen=True)
class FitConfig:
    lr: float = 1e-2
    epochs: int = 200
    batch_size: int = 64
    hidden: int = 32

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("bad fit config")


@dataclass
class Discriminator:
    """Feasibility classifier over skill observations; threshold is closed
    (probability exactly at threshold counts as feasible)."""

    net: Sequential
    obs_kind: str
    obs_shape: tuple[int, ...]
    threshold: float = 0.5
    meta: dict = field(default_factory=dict)

    def _batch_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        flat_dim = int(np.prod(self.obs_shape))
        if self.obs_kind == "vector":
            if x.ndim == 1:
                x = x[None, :]
            if x.shape[1] != flat_dim:
                raise ValueError(f"expected feature dim {flat_dim}, got {x.shape[1]}")
            return x
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim == 2:
            if x.shape[1] != flat_dim:
                raise ValueError(f"expected feature dim {flat_dim}, got {x.shape[1]}")
            return x.reshape(len(x), 1, *self.obs_shape)
        if x.shape[1:] == self.obs_shape:
            return x[:, None, :, :]
        raise ValueError(f"cannot interpret input of shape {x.shape}")

    def classify_batch(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(self._batch_input(x)).ravel()

    def classify(self, x: np.ndarray) -> float:
        return float(self.classify_batch(np.asarray(x).ravel()[None, :])[0])

    def discriminate(self, x: np.ndarray) -> bool:
        return bool(self.classify(x) >= self.threshold)

    def save(self, path: str) -> None:
        payload = {
            "format": _DISC_FORMAT,
            "net": self.net.config(),
            "weights": self.net.get_flat().tolist(),
            "obs_kind": self.obs_kind,
            "obs_shape": list(self.obs_shape),
            "threshold": self.threshold,
            "meta": self.meta,
        }
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w") as f:
            json.dump(payload, f)

    @staticmethod
    def load(path: str) -> "Discriminator":
        if not os.path.exists(path):
            raise DatasetError(f"missing checkpoint: {path}")
        with open(path) as f:
            payload = json.load(f)
        if payload.get("format") != _DISC_FORMAT:
            raise DatasetError(f"unrecognized discriminator format in {path}")
        net = Sequential.from_config(payload["net"])
        net.set_flat(np.array(payload["weights"], dtype=np.float64))
        return Discriminator(
            net=net,
            obs_kind=payload["obs_kind"],
            obs_shape=tuple(payload["obs_shape"]),
            threshold=float(payload["threshold"]),
            meta=payload.get("meta", {}),
        )


def _make_disc_net(obs_kind: str, obs_shape: tuple[int, ...], hidden: int,
                   rng: np.random.Generator) -> Sequential:
    if obs_kind == "vector":
        d = int(obs_shape[0])
        return Sequential([
            Dense(d, hidden, rng), Tanh(),
            Dense(hidden, hidden, rng), Tanh(),
            Dense(hidden, 1, rng), Sigmoid(),
        ])
    res = int(obs_shape[0])
    o1 = (res - 5) // 2 + 1
    o2 = (o1 - 3) // 2 + 1
    return Sequential([
        Conv2d(1, 4, 5, stride=2, rng=rng), Relu(),
        Conv2d(4, 8, 3, stride=2, rng=rng), Relu(), Flatten(),
        Dense(8 * o2 * o2, hidden, rng), Tanh(),
        Dense(hidden, 1, rng), Sigmoid(),
    ])


def train_discriminator(
    dataset,
    features=None,
    config: FitConfig = FitConfig(),
    rng: np.random.Generator | None = None,
) -> Discriminator:
    """Fit the feasibility classifier by plain mini-batch gradient descent.

    `dataset` is a SkillDataset or an (X, y) pair of arrays. `features`
    optionally maps a record to its feature vector; the default uses the
    recorded initial observation unchanged. A single-class dataset warns
    and still fits. The per-epoch mean training loss lands in meta.
    """
    r = np.random.default_rng(0) if rng is None else rng
    if isinstance(dataset, SkillDataset):
        feat = (lambda rec: rec.x0) if features is None else features
        x = np.stack([np.asarray(feat(rec), dtype=np.float64).ravel()
                      for rec in dataset.records])
        y = np.array([rec.s for rec in dataset.records], dtype=np.float64)
        obs_kind, obs_shape = dataset.obs_kind, tuple(dataset.obs_shape)
    else:
        x, y = dataset
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        obs_kind, obs_shape = "vector", (x.shape[1],)
    if len(x) != len(y) or len(x) == 0:
        raise ValueError("need matching non-empty features and labels")
    classes = np.unique(y)
    if len(classes) < 2:
        warnings.warn("single-class dataset: discriminator fit is degenerate")

    model = Discriminator(
        net=_make_disc_net(obs_kind, obs_shape, config.hidden, r),
        obs_kind=obs_kind,
        obs_shape=obs_shape,
    )
    xin = model._batch_input(x)
    history: list[float] = []
    idx = np.arange(len(x))
    for epoch in range(config.epochs):
        r.shuffle(idx)
        losses = []
        for lo in range(0, len(idx), config.batch_size):
            sel = idx[lo:lo + config.batch_size]
            pred = model.net.forward(xin[sel])
            losses.append(bce_loss(pred, y[sel]) * len(sel))
            model.net.backward(bce_grad(pred, y[sel][:, None]))
            for p, g in zip(model.net.params(), model.net.grads()):
                p -= config.lr * g
        history.append(float(sum(losses) / len(idx)))
    model.meta["loss_history"] = history
    return model


# ---------------------------------------------------------------------------
# Sub-goal generation


@dataclass(frozen=True)
class Substitution:
    """A candidate goal with its recorded effect cloud."""

    x_g: np.ndarray
    effects: np.ndarray          # (n, 3)
    record_index: int
    key_distance: float          # neighbor-search distance on x0 keys
    goal_distance: float         # distance from the query position to x_g

    @property
    def n(self) -> int:
        return int(len(self.effects))


class SubgoalIndex:
    """KD-tree over record keys; queries return success-filtered candidates.

    position_slice extracts the object's planar position from a key, used
    for the goal-distance tie-break; 2-d keys default to identity.
    """

    def __init__(self, dataset: SkillDataset, position_slice: slice | None = None):
        if not dataset.records:
            raise DatasetError("cannot index an empty dataset")
        self.dataset = dataset
        keys = np.stack([rec.x0_key for rec in dataset.records])
        self.tree = KDTree(keys)
        if position_slice is None:
            position_slice = slice(0, 2) if keys.shape[1] == 2 else slice(3, 5)
        self.position_slice = position_slice

    def __len__(self) -> int:
        return len(self.dataset.records)

    def knn_query(self, x: np.ndarray, k: int = 10) -> list[Substitution]:
        """Success-labeled candidates among the k nearest stored keys."""
        x = np.asarray(x, dtype=np.float64).ravel()
        if k > len(self):
            warnings.warn(f"k={k} exceeds index size {len(self)}; returning all")
            k = len(self)
        pos = x[self.position_slice]
        out = []
        for dist, idx in self.tree.query(x, k):
            rec = self.dataset.records[idx]
            if rec.s != 1:
                continue
            out.append(Substitution(
                x_g=rec.x_g,
                effects=rec.effects,
                record_index=idx,
                key_distance=dist,
                goal_distance=float(np.linalg.norm(rec.x_g - pos)),
            ))
        return out


def knn_query(index: SubgoalIndex, x: np.ndarray, k: int = 10) -> list[Substitution]:
    return index.knn_query(x, k)


def optimism(sub: Substitution, predicate) -> float:
    """Fraction of the effect cloud satisfying the feasibility predicate."""
    hits = sum(1 for e in sub.effects if predicate(e))
    return hits / float(len(sub.effects))


def best_substitution(candidates, predicate) -> Substitution | None:
    """Argmax-optimism candidate, or none when nothing is certifiable.

    Ties go to the smaller goal distance, then to dataset order.
    """
    best: Substitution | None = None
    best_key: tuple | None = None
    for sub in candidates:
        eta = optimism(sub, predicate)
        if eta <= 0.0:
            continue
        key = (-eta, sub.goal_distance, sub.record_index)
        if best_key is None or key < best_key:
            best, best_key = sub, key
    return best
