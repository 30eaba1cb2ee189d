"""Desk-scale environments and scripted demonstration generators.

* ``motivating``: one-step task with an optimal, a suboptimal and a
  negative action mode; the negative mode dominates demonstrations.
* ``landscape``: one-step task with five Gaussian action modes used to
  measure how well each decomposition recovers the reward surface.
* ``point_mass`` / ``point_mass_sparse``: a 2-D point driven by velocity
  commands toward a goal; observation is ``(x, y, goal_x, goal_y)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .action_codec import ActionSpec
from .replay import OfflineDataset


@dataclass(frozen=True)
class Mode:
    center: tuple[float, float]
    amplitude: float
    sigma: float


@dataclass(frozen=True)
class ModeLandscape:
    modes: tuple[Mode, ...]

    def __post_init__(self):
        for m in self.modes:
            if m.sigma <= 0:
                raise ValueError("mode sigma must be positive")
            if not all(-1.0 <= c <= 1.0 for c in m.center):
                raise ValueError(f"mode center {m.center} outside [-1, 1]^2")

    def reward(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        out = np.zeros(a.shape[:-1])
        for m in self.modes:
            d2 = ((a - np.asarray(m.center)) ** 2).sum(axis=-1)
            out = out + m.amplitude * np.exp(-d2 / (2.0 * m.sigma**2))
        return out

    @property
    def bound(self) -> float:
        return sum(abs(m.amplitude) for m in self.modes)


MOTIVATING_LANDSCAPE = ModeLandscape((
    Mode((0.6, 0.6), 1.0, 0.15),
    Mode((-0.6, 0.6), 0.1, 0.15),
    Mode((0.6, -0.6), -1.0, 0.15),
))
MOTIVATING_FREQUENCIES = (0.10, 0.30, 0.60)

ERROR_LANDSCAPE = ModeLandscape((
    Mode((0.0, 0.0), 1.0, 0.25),
    Mode((0.65, 0.65), 0.4, 0.25),
    Mode((-0.65, 0.65), 0.4, 0.25),
    Mode((0.65, -0.65), -1.0, 0.25),
    Mode((-0.65, -0.65), -1.0, 0.25),
))


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_width: int
    action_spec: ActionSpec
    horizon: int
    reward_kind: str = "dense"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.reward_kind not in ("dense", "sparse"):
            raise ValueError(f"reward_kind must be dense or sparse, got {self.reward_kind!r}")


class OneStepEnv:
    """Single-state task; every episode ends after one action."""

    def __init__(self, landscape: ModeLandscape, name: str, bins_per_level: int = 7, levels: int = 2,
                 frequencies: tuple[float, ...] | None = None, jitter: float = 0.05):
        self.landscape = landscape
        self.spec = EnvSpec(name, 2, ActionSpec.box(2, -1.0, 1.0, bins_per_level, levels), 1, "dense")
        self.frequencies = frequencies
        self.jitter = jitter
        self._done = True
        self.success = False

    def reset(self, seed: int | None = None) -> np.ndarray:
        self._done = False
        return np.zeros(2)

    def step(self, action):
        if self._done:
            raise RuntimeError("step called on a finished episode; call reset first")
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        self._done = True
        reward = float(self.landscape.reward(a))
        return np.zeros(2), reward, True, False

    def optimal_action(self) -> np.ndarray:
        best = max(self.landscape.modes, key=lambda m: m.amplitude)
        return np.asarray(best.center)


class PointMassEnv:
    """Velocity-controlled point in ``[-1, 1]^2``.

    Start and goal are drawn uniformly from the spawn box ``[-0.9, 0.9]^2``
    with the goal at least 0.5 away from the start. Each step moves the
    point by ``k * action``. Dense reward is ``-|pos - goal|`` per step plus
    1 on entering the goal radius; sparse reward is 1 on success only.
    """

    spawn = 0.9
    min_start_distance = 0.5

    def __init__(self, reward_kind: str = "dense", k: float = 0.05, horizon: int = 100, goal_radius: float = 0.1,
                 bins_per_level: int = 7, levels: int = 2):
        name = "point_mass" if reward_kind == "dense" else "point_mass_sparse"
        self.spec = EnvSpec(name, 4, ActionSpec.box(2, -1.0, 1.0, bins_per_level, levels), horizon, reward_kind)
        self.k = k
        self.goal_radius = goal_radius
        self.pos = np.zeros(2)
        self.goal = np.zeros(2)
        self.t = 0
        self._done = True
        self.success = False

    def reset(self, seed: int | None = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.pos = rng.uniform(-self.spawn, self.spawn, 2)
        while True:
            self.goal = rng.uniform(-self.spawn, self.spawn, 2)
            if np.linalg.norm(self.goal - self.pos) >= self.min_start_distance:
                break
        self.t = 0
        self._done = False
        self.success = False
        return self.obs()

    def obs(self) -> np.ndarray:
        return np.concatenate([self.pos, self.goal])

    def step(self, action):
        """Returns ``(obs, reward, terminated, truncated)``."""
        if self._done:
            raise RuntimeError("step called on a finished episode; call reset first")
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        self.pos = np.clip(self.pos + self.k * a, -1.0, 1.0)
        self.t += 1
        dist = float(np.linalg.norm(self.pos - self.goal))
        reached = dist <= self.goal_radius
        if self.spec.reward_kind == "dense":
            reward = -dist + (1.0 if reached else 0.0)
        else:
            reward = 1.0 if reached else 0.0
        truncated = not reached and self.t >= self.spec.horizon
        self._done = reached or truncated
        self.success = reached
        return self.obs(), reward, reached, truncated

    def expert_action(self, obs=None) -> np.ndarray:
        obs = self.obs() if obs is None else np.asarray(obs)
        return np.clip((obs[2:4] - obs[0:2]) / self.k, -1.0, 1.0)

    def steps_to_goal_bound(self) -> int:
        """Steps the expert needs from the current state, ignoring the goal radius."""
        dist = float(np.linalg.norm(self.goal - self.pos))
        return math.ceil(dist / self.k)


ENV_NAMES = ("motivating", "landscape", "point_mass", "point_mass_sparse")


def make_env(name: str, bins_per_level: int = 7, levels: int = 2):
    if name == "motivating":
        return OneStepEnv(MOTIVATING_LANDSCAPE, name, bins_per_level, levels, MOTIVATING_FREQUENCIES)
    if name == "landscape":
        return OneStepEnv(ERROR_LANDSCAPE, name, bins_per_level, levels)
    if name == "point_mass":
        return PointMassEnv("dense", bins_per_level=bins_per_level, levels=levels)
    if name == "point_mass_sparse":
        return PointMassEnv("sparse", bins_per_level=bins_per_level, levels=levels)
    raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")


POLICY_KINDS = ("expert", "medium", "noisy", "mode_mix")


def _policy_action(env, kind: str, obs, rng: np.random.Generator) -> np.ndarray:
    if kind == "noisy":
        return rng.uniform(-1.0, 1.0, 2)
    expert = env.optimal_action() if isinstance(env, OneStepEnv) else env.expert_action(obs)
    if kind == "expert":
        return expert
    if kind == "medium":
        if rng.random() < 0.2:
            return rng.uniform(-1.0, 1.0, 2)
        return np.clip(expert + rng.normal(0.0, 0.3, 2), -1.0, 1.0)
    raise ValueError(f"unknown policy kind {kind!r}")


def generate_demos(env, policy_kind: str, n_episodes: int, seed: int = 0) -> OfflineDataset:
    """Roll out a scripted policy; every episode starts from ``reset(seed + i)``."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    if policy_kind not in POLICY_KINDS:
        raise ValueError(f"policy_kind must be one of {POLICY_KINDS}")
    rng = np.random.default_rng(seed)
    if policy_kind == "mode_mix":
        if not isinstance(env, OneStepEnv):
            raise ValueError("mode_mix demonstrations exist only for one-step environments")
        return _mode_mix(env, n_episodes, rng)
    obs_l, act_l, rew_l, nxt_l, done_l, ep_l = [], [], [], [], [], []
    for ep in range(n_episodes):
        obs = env.reset(seed=seed * 100_003 + ep)
        while True:
            a = _policy_action(env, policy_kind, obs, rng)
            nxt, r, term, trunc = env.step(a)
            obs_l.append(obs)
            act_l.append(a)
            rew_l.append(r)
            nxt_l.append(nxt)
            done_l.append(term)
            ep_l.append(ep)
            obs = nxt
            if term or trunc:
                break
    return OfflineDataset.from_arrays(env.spec.action_spec, obs_l, act_l, rew_l, nxt_l, done_l, ep_l)


def _mode_mix(env: OneStepEnv, n: int, rng: np.random.Generator) -> OfflineDataset:
    freqs = np.asarray(env.frequencies if env.frequencies is not None else
                       [1.0 / len(env.landscape.modes)] * len(env.landscape.modes))
    which = rng.choice(len(env.landscape.modes), size=n, p=freqs / freqs.sum())
    centers = np.array([m.center for m in env.landscape.modes])
    actions = np.clip(centers[which] + rng.normal(0.0, env.jitter, (n, 2)), -1.0, 1.0)
    rewards = env.landscape.reward(actions)
    zeros = np.zeros((n, 2))
    return OfflineDataset.from_arrays(env.spec.action_spec, zeros, actions, rewards, zeros, np.ones(n, bool),
                                      np.arange(n))


def uniform_dataset(env: OneStepEnv, n: int, seed: int) -> OfflineDataset:
    """``n`` uniformly drawn actions of a one-step task with their rewards."""
    rng = np.random.default_rng(seed)
    actions = rng.uniform(-1.0, 1.0, (n, 2))
    zeros = np.zeros((n, 2))
    return OfflineDataset.from_arrays(env.spec.action_spec, zeros, actions, env.landscape.reward(actions), zeros,
                                      np.ones(n, bool), np.arange(n))


def landscape_ground_truth(landscape: ModeLandscape, resolution: int) -> np.ndarray:
    """Reward on a ``resolution x resolution`` grid over ``[-1, 1]^2``; rows are rows of ``a1``."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    axis = np.linspace(-1.0, 1.0, resolution)
    a1, a2 = np.meshgrid(axis, axis, indexing="ij")
    return landscape.reward(np.stack([a1, a2], axis=-1))


def write_grid_csv(path, a1: np.ndarray, a2: np.ndarray, q: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["a1,a2,q"]
    for x, y, v in zip(np.ravel(a1), np.ravel(a2), np.ravel(q)):
        lines.append(f"{x:.10g},{y:.10g},{v:.10g}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_ground_truth_csv(path, landscape: ModeLandscape, resolution: int) -> None:
    axis = np.linspace(-1.0, 1.0, resolution)
    a1, a2 = np.meshgrid(axis, axis, indexing="ij")
    write_grid_csv(path, a1, a2, landscape_ground_truth(landscape, resolution))
