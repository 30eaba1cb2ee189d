"""Offline demonstrations, the online replay buffer and mini-batch sampling.

Transitions are stored column-wise in numpy arrays. Continuous actions are
discretized once, when they enter a dataset or buffer.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import action_codec as codec
from .action_codec import ActionSpec

log = logging.getLogger(__name__)

WIRE_KEYS = ("obs", "action", "reward", "next_obs", "done", "episode")


@dataclass
class Transition:
    obs: np.ndarray
    action_continuous: np.ndarray
    action_discrete: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    episode_id: int = 0
    is_demo: bool = False


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray  # continuous, (N, D)
    digits: np.ndarray  # (N, D, L)
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    is_demo: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)

    @classmethod
    def empty(cls, obs_width: int, spec: ActionSpec) -> "Batch":
        return cls(np.zeros((0, obs_width)), np.zeros((0, spec.dims)),
                   np.zeros((0, spec.dims, spec.levels), dtype=np.int64), np.zeros(0), np.zeros((0, obs_width)),
                   np.zeros(0, dtype=bool), np.zeros(0, dtype=bool))

    @classmethod
    def concat(cls, batches: list["Batch"]) -> "Batch":
        return cls(*(np.concatenate([getattr(b, f) for b in batches]) for f in
                     ("obs", "actions", "digits", "rewards", "next_obs", "dones", "is_demo")))


def _rows(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x if x.ndim == 2 and len(x) == n else x.reshape(n, -1)


@dataclass
class OfflineDataset:
    spec: ActionSpec
    obs: np.ndarray
    actions: np.ndarray
    digits: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    episodes: np.ndarray
    clamped: int = 0
    is_demo: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.is_demo is None:
            self.is_demo = np.ones(len(self.rewards), dtype=bool)
        self._episode_starts()

    def __len__(self) -> int:
        return len(self.rewards)

    @classmethod
    def from_arrays(cls, spec: ActionSpec, obs, actions, rewards, next_obs, dones, episodes) -> "OfflineDataset":
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, spec.dims)
        clamped = int(codec.out_of_bounds(spec, actions).sum()) if len(actions) else 0
        digits = codec.encode(spec, actions) if len(actions) else np.zeros((0, spec.dims, spec.levels), np.int64)
        obs = _rows(obs, len(actions))
        return cls(spec, obs, actions, digits, np.asarray(rewards, dtype=np.float64), _rows(next_obs, len(actions)),
                   np.asarray(dones, dtype=bool), np.asarray(episodes, dtype=np.int64), clamped)

    @classmethod
    def empty(cls, spec: ActionSpec, obs_width: int = 0) -> "OfflineDataset":
        return cls.from_arrays(spec, np.zeros((0, obs_width)), np.zeros((0, spec.dims)), [], np.zeros((0, obs_width)),
                               [], [])

    def _episode_starts(self) -> np.ndarray:
        if len(self.episodes) == 0:
            return np.zeros(0, dtype=np.int64)
        change = np.flatnonzero(np.diff(self.episodes)) + 1
        starts = np.concatenate([[0], change])
        ids = self.episodes[starts]
        if len(np.unique(ids)) != len(ids):
            raise ValueError("episode ids must occupy contiguous runs")
        return starts

    @property
    def episode_bounds(self) -> list[tuple[int, int]]:
        starts = self._episode_starts()
        ends = np.concatenate([starts[1:], [len(self)]])
        return list(zip(starts.tolist(), ends.tolist()))

    @property
    def num_episodes(self) -> int:
        return len(self.episode_bounds)

    def episode_returns(self) -> np.ndarray:
        return np.array([self.rewards[s:e].sum() for s, e in self.episode_bounds])

    def subset(self, rows: np.ndarray) -> "OfflineDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return OfflineDataset(self.spec, self.obs[rows], self.actions[rows], self.digits[rows], self.rewards[rows],
                              self.next_obs[rows], self.dones[rows], self.episodes[rows], 0, self.is_demo[rows])

    def extend(self, other: "OfflineDataset") -> "OfflineDataset":
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        return OfflineDataset(self.spec, *(np.concatenate([getattr(self, f), getattr(other, f)]) for f in
                                           ("obs", "actions", "digits", "rewards", "next_obs", "dones", "episodes")),
                              self.clamped + other.clamped, np.concatenate([self.is_demo, other.is_demo]))

    def as_batch(self, rows=None) -> Batch:
        rows = slice(None) if rows is None else rows
        return Batch(self.obs[rows], self.actions[rows], self.digits[rows], self.rewards[rows], self.next_obs[rows],
                     self.dones[rows], self.is_demo[rows])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        return sample(self, batch_size, rng)


def load_dataset(path, spec: ActionSpec, obs_width: int | None = None) -> OfflineDataset:
    """Read a JSON-lines transition file and discretize its actions."""
    obs, actions, rewards, next_obs, dones, episodes = [], [], [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or any(k not in rec for k in WIRE_KEYS):
                missing = [k for k in WIRE_KEYS if not isinstance(rec, dict) or k not in rec]
                raise ValueError(f"{path}:{lineno}: missing keys {missing}")
            o = np.asarray(rec["obs"], dtype=np.float64)
            a = np.asarray(rec["action"], dtype=np.float64)
            no = np.asarray(rec["next_obs"], dtype=np.float64)
            if a.shape != (spec.dims,):
                raise ValueError(f"{path}:{lineno}: action has {a.size} entries, expected {spec.dims}")
            width = obs_width if obs_width is not None else (len(obs[0]) if obs else o.size)
            if o.shape != (width,) or no.shape != (width,):
                raise ValueError(f"{path}:{lineno}: observation width {o.size}/{no.size}, expected {width}")
            if not isinstance(rec["done"], bool):
                raise ValueError(f"{path}:{lineno}: 'done' must be a boolean")
            obs.append(o)
            actions.append(a)
            rewards.append(float(rec["reward"]))
            next_obs.append(no)
            dones.append(rec["done"])
            episodes.append(int(rec["episode"]))
    width = obs_width if obs_width is not None else (len(obs[0]) if obs else 0)
    data = OfflineDataset.from_arrays(spec, np.reshape(obs, (-1, width)), np.reshape(actions, (-1, spec.dims)),
                                      rewards, np.reshape(next_obs, (-1, width)), dones, episodes)
    if data.clamped:
        log.warning("%s: %d actions outside the action bounds were clamped", path, data.clamped)
    return data


def write_dataset(path, data: OfflineDataset) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(data)):
            rec = {
                "obs": data.obs[i].tolist(),
                "action": data.actions[i].tolist(),
                "reward": float(data.rewards[i]),
                "next_obs": data.next_obs[i].tolist(),
                "done": bool(data.dones[i]),
                "episode": int(data.episodes[i]),
            }
            fh.write(json.dumps(rec) + "\n")


def segment_window(n: int, segment: str, fraction: float) -> tuple[int, int]:
    """Rank window ``[start, stop)`` over ``n`` episodes sorted best first."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    k = int(round(fraction * n))
    if k == 0:
        raise ValueError(f"fraction {fraction} of {n} episodes selects nothing")
    if segment == "top":
        return 0, k
    if segment == "bottom":
        return n - k, n
    if segment == "middle":
        start = (n - k) // 2
        return start, start + k
    raise ValueError(f"segment must be top, middle or bottom, got {segment!r}")


def rank_filter(data: OfflineDataset, segment: str, fraction: float) -> OfflineDataset:
    """Keep the episodes whose return ranks in the requested segment."""
    if len(data) == 0:
        raise ValueError("cannot rank an empty dataset")
    bounds = data.episode_bounds
    returns = data.episode_returns()
    # stable sort, best first; equal returns keep file order
    ranking = np.argsort(-returns, kind="stable")
    start, stop = segment_window(len(bounds), segment, fraction)
    keep = sorted(ranking[start:stop])
    rows = np.concatenate([np.arange(*bounds[i]) for i in keep])
    return data.subset(rows)


def sample(source, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform sampling with replacement."""
    n = len(source)
    if n == 0:
        raise ValueError("cannot sample from an empty source")
    return source.as_batch(rng.integers(0, n, size=batch_size))


class ReplayBuffer:
    """Ring buffer that never evicts demonstration entries.

    Demonstrations occupy a fixed prefix of the storage; online transitions
    cycle through the remaining ``capacity - demos`` slots, oldest first.
    """

    def __init__(self, capacity: int, obs_width: int, spec: ActionSpec):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.spec = spec
        self.obs = np.zeros((capacity, obs_width))
        self.actions = np.zeros((capacity, spec.dims))
        self.digits = np.zeros((capacity, spec.dims, spec.levels), dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_width))
        self.dones = np.zeros(capacity, dtype=bool)
        self.is_demo = np.zeros(capacity, dtype=bool)
        self.episodes = np.zeros(capacity, dtype=np.int64)
        self.n_demo = 0
        self.n_online = 0
        self.cursor = 0  # next online slot, relative to the online region

    def __len__(self) -> int:
        return self.n_demo + self.n_online

    @property
    def count(self) -> int:
        return len(self)

    def seed_with(self, data: OfflineDataset) -> None:
        if self.n_online:
            raise RuntimeError("demonstrations must be added before online data")
        n = len(data)
        if self.n_demo + n > self.capacity:
            raise ValueError(f"{self.n_demo + n} demonstrations exceed capacity {self.capacity}")
        rows = slice(self.n_demo, self.n_demo + n)
        self.obs[rows], self.actions[rows], self.digits[rows] = data.obs, data.actions, data.digits
        self.rewards[rows], self.next_obs[rows], self.dones[rows] = data.rewards, data.next_obs, data.dones
        self.episodes[rows] = data.episodes
        self.is_demo[rows] = True
        self.n_demo += n

    def push(self, t: Transition) -> None:
        room = self.capacity - self.n_demo
        if room <= 0:
            log.debug("buffer full of demonstrations; dropping online transition")
            return
        i = self.n_demo + self.cursor
        self.obs[i] = t.obs
        self.actions[i] = t.action_continuous
        self.digits[i] = t.action_discrete
        self.rewards[i] = t.reward
        self.next_obs[i] = t.next_obs
        self.dones[i] = t.done
        self.episodes[i] = t.episode_id
        self.is_demo[i] = t.is_demo
        self.cursor = (self.cursor + 1) % room
        self.n_online = min(self.n_online + 1, room)

    def as_batch(self, rows=None) -> Batch:
        rows = np.arange(len(self)) if rows is None else rows
        return Batch(self.obs[rows], self.actions[rows], self.digits[rows], self.rewards[rows], self.next_obs[rows],
                     self.dones[rows], self.is_demo[rows])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        return sample(self, batch_size, rng)
