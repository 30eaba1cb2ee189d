"""Online training with offline demonstrations, evaluation and metrics files."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import action_codec as codec
from .autodiff import Adam, DivergenceError, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, write_config
from .envs import make_env
from .losses import LossStats, bc_margin_loss, bc_variant_loss, combined_loss
from .model import ARSQAgent
from .replay import Batch, OfflineDataset, ReplayBuffer, Transition, load_dataset, rank_filter

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "episode_return_mean", "episode_return_std", "success_rate", "rl_loss", "bc_loss",
                  "v_mean", "policy_entropy_mean", "wall_ms")
EVAL_SEED_OFFSET = 1_000_003


@dataclass
class MetricsRow:
    step: int
    episode_return_mean: float
    episode_return_std: float
    success_rate: float
    rl_loss: float
    bc_loss: float
    v_mean: float
    policy_entropy_mean: float
    wall_ms: float

    def as_csv(self) -> list[str]:
        return [str(self.step)] + [f"{getattr(self, k):.10g}" for k in METRICS_HEADER[1:]]


@dataclass
class EvalResult:
    return_mean: float
    return_std: float
    success_rate: float
    returns: np.ndarray


def build_agent(cfg: TrainConfig, env=None) -> ARSQAgent:
    env = env or make_env(cfg.env, cfg.bins_per_level, cfg.levels)
    return ARSQAgent(env.spec.action_spec, env.spec.obs_width, cfg.backbone_widths, cfg.alpha, cfg.conditioning,
                     cfg.activation, cfg.use_bias, cfg.backbone_sharing, seed=cfg.seed)


def load_offline(cfg: TrainConfig, spec, obs_width: int) -> OfflineDataset:
    if not cfg.offline_data:
        return OfflineDataset.empty(spec, obs_width)
    data = load_dataset(cfg.offline_data, spec, obs_width)
    if cfg.demo_segment:
        data = rank_filter(data, cfg.demo_segment, cfg.demo_fraction)
    return data


def run_episodes(agent: ARSQAgent, env_name: str, n_episodes: int, seed: int, mode: str = "greedy",
                 rollout_net: str = "current", rng: np.random.Generator | None = None) -> EvalResult:
    """Roll out ``n_episodes`` environments in lockstep with batched action selection."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    spec = agent.spec
    envs = [make_env(env_name, spec.bins_per_level, spec.levels) for _ in range(n_episodes)]
    if envs[0].spec.action_spec != spec:
        raise ValueError(f"environment {env_name!r} does not match the agent's action spec")
    obs = np.stack([e.reset(seed=seed + i) for i, e in enumerate(envs)])
    returns = np.zeros(n_episodes)
    success = np.zeros(n_episodes, dtype=bool)
    live = np.ones(n_episodes, dtype=bool)
    while live.any():
        idx = np.flatnonzero(live)
        digits = agent.act(obs[idx], mode, rollout_net, rng)
        actions = codec.decode(spec, digits)
        for j, i in enumerate(idx):
            nxt, r, term, trunc = envs[i].step(actions[j])
            returns[i] += r
            obs[i] = nxt
            if term or trunc:
                live[i] = False
                success[i] = envs[i].success
    return EvalResult(float(returns.mean()), float(returns.std()), float(success.mean()), returns)


class Trainer:
    """Runs the ARSQ loop: act, store, take gradient steps, update targets."""

    def __init__(self, cfg: TrainConfig, offline: OfflineDataset | None = None):
        self.cfg = cfg.validate()
        self.env = make_env(cfg.env, cfg.bins_per_level, cfg.levels)
        self.spec = self.env.spec.action_spec
        self.obs_width = self.env.spec.obs_width
        self.agent = build_agent(cfg, self.env)
        self.opt = Adam(self.agent.trainable_parameters(), cfg.learning_rate, weight_decay=cfg.weight_decay)
        self.loss_cfg = cfg.loss_config()
        self.rng = np.random.default_rng(cfg.seed)
        self.demos = offline if offline is not None else load_offline(cfg, self.spec, self.obs_width)
        if cfg.bc_only and len(self.demos) == 0:
            raise ConfigError("bc_only needs demonstrations (offline_data)")
        if self.demos.clamped:
            log.warning("%d demonstration actions were clamped into bounds", self.demos.clamped)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, self.obs_width, self.spec)
        self.buffer.seed_with(self.demos)
        self.rows: list[MetricsRow] = []
        self._acc = {"rl_loss": [], "bc_loss": [], "v_mean": [], "policy_entropy_mean": []}
        self._t0 = time.perf_counter()
        self.max_norm_error = 0.0

    # gradient steps ----------------------------------------------------
    def gradient_step(self) -> None:
        cfg = self.cfg
        empty = Batch.empty(self.obs_width, self.spec)
        batch_d = self.demos.sample(cfg.batch_size, self.rng) if len(self.demos) else empty
        if cfg.bc_only:
            batch_r = empty
        else:
            batch_r = self.buffer.sample(cfg.batch_size, self.rng) if len(self.buffer) else empty
        if len(batch_d) + len(batch_r) == 0:
            return
        loss_cfg = self.loss_cfg
        if cfg.bc_only:
            loss, stats = self._bc_only_loss(batch_d)
        else:
            loss, stats = combined_loss(batch_d, batch_r, self.agent, loss_cfg)
        if not np.isfinite(loss.data):
            raise DivergenceError(f"non-finite loss after {self.opt.step_count} gradient steps")
        if stats.max_norm_error > 1e-6:
            raise DivergenceError(f"advantage normalization violated by {stats.max_norm_error:.3e}")
        self.max_norm_error = max(self.max_norm_error, stats.max_norm_error)
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        self.agent.update_targets(1.0 - cfg.tau)
        self._acc["rl_loss"].append(stats.rl_loss)
        self._acc["bc_loss"].append(stats.bc_loss)
        self._acc["v_mean"].append(stats.v_mean)
        self._acc["policy_entropy_mean"].append(stats.entropy_mean)

    def _bc_only_loss(self, batch_d: Batch):
        fn = bc_variant_loss if self.cfg.bc_variant else bc_margin_loss
        total = None
        bc_val = 0.0
        for net in self.agent.adv:
            bc = fn(net, batch_d.obs, batch_d.digits, self.cfg.bc_margin).mean()
            bc_val += bc.item()
            total = bc if total is None else total + bc
        return total, LossStats(0.0, bc_val, 0.0, 0.0, 0.0)

    # metrics ---------------------------------------------------------------
    def record(self, step: int) -> MetricsRow:
        res = run_episodes(self.agent, self.cfg.env, self.cfg.eval_episodes, self.cfg.seed * EVAL_SEED_OFFSET + step,
                           "greedy", self.cfg.rollout_net)
        means = {k: float(np.mean(v)) if v else 0.0 for k, v in self._acc.items()}
        for v in self._acc.values():
            v.clear()
        wall = (time.perf_counter() - self._t0) * 1000.0 if self.cfg.wall_clock else 0.0
        row = MetricsRow(step, res.return_mean, res.return_std, res.success_rate, means["rl_loss"],
                         means["bc_loss"], means["v_mean"], means["policy_entropy_mean"], round(wall, 3))
        self.rows.append(row)
        log.info("step %d return %.3f success %.2f rl %.4f bc %.4f", step, row.episode_return_mean,
                 row.success_rate, row.rl_loss, row.bc_loss)
        return row

    # main loop -------------------------------------------------------------
    def run(self) -> list[MetricsRow]:
        cfg = self.cfg
        if cfg.total_env_steps == 0:
            for step in range(1, cfg.offline_steps + 1):
                self.gradient_step()
                if step % cfg.eval_every == 0 or step == cfg.offline_steps:
                    self.record(step)
            return self.rows
        for _ in range(cfg.offline_steps):
            self.gradient_step()
        sparse_bc = cfg.bc_on_success and self.env.spec.reward_kind == "sparse"
        episode = 0
        episode_rows: list[Transition] = []
        obs = self.env.reset(seed=int(self.rng.integers(2**31)))
        for step in range(1, cfg.total_env_steps + 1):
            digits = self.agent.act(obs, "sample", cfg.rollout_net, self.rng)
            action = codec.decode(self.spec, digits)
            nxt, r, term, trunc = self.env.step(action)
            t = Transition(obs, action, digits, r, nxt, term, episode)
            self.buffer.push(t)
            if sparse_bc:
                episode_rows.append(t)
            obs = nxt
            if term or trunc:
                if sparse_bc and self.env.success:
                    self._add_success(episode_rows)
                episode_rows = []
                episode += 1
                obs = self.env.reset(seed=int(self.rng.integers(2**31)))
            for _ in range(cfg.grad_steps_per_env_step):
                self.gradient_step()
            if step % cfg.eval_every == 0 or step == cfg.total_env_steps:
                self.record(step)
        return self.rows

    def _add_success(self, rows: list[Transition]) -> None:
        ep_id = int(self.demos.episodes.max()) + 1 if len(self.demos) else 0
        extra = OfflineDataset(self.spec, np.stack([t.obs for t in rows]),
                               np.stack([t.action_continuous for t in rows]),
                               np.stack([t.action_discrete for t in rows]), np.array([t.reward for t in rows]),
                               np.stack([t.next_obs for t in rows]), np.array([t.done for t in rows]),
                               np.full(len(rows), ep_id), 0, np.zeros(len(rows), dtype=bool))
        self.demos = self.demos.extend(extra)

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "model.ckpt", self.agent.state_dict())
        write_config(out / "config.txt", self.cfg)
        write_metrics(out / "metrics.csv", self.rows)
        return out


def write_metrics(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in rows:
            w.writerow(row.as_csv())


def train(cfg: TrainConfig, out_dir=None, offline: OfflineDataset | None = None) -> Trainer:
    trainer = Trainer(cfg, offline)
    trainer.run()
    if out_dir is not None:
        trainer.save(out_dir)
    return trainer


def evaluate(checkpoint, cfg: TrainConfig, n_episodes: int = 10, seed: int = 0, env_name: str | None = None,
             mode: str = "greedy") -> EvalResult:
    """Greedy return statistics of a saved agent."""
    if n_episodes < 1:
        raise ConfigError("n_episodes must be at least 1")
    env_name = env_name or cfg.env
    env = make_env(env_name, cfg.bins_per_level, cfg.levels)
    agent = build_agent(cfg, env)
    arrays = checkpoint if isinstance(checkpoint, dict) else load_checkpoint(checkpoint)
    try:
        agent.load_state_dict(arrays)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint does not match environment {env_name!r}: {exc}") from None
    rng = np.random.default_rng(seed)
    return run_episodes(agent, env_name, n_episodes, seed * EVAL_SEED_OFFSET + 7, mode, cfg.rollout_net, rng)

