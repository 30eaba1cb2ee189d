"""Synthetic case studies: the two-bin motivating example and the landscape error comparison."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import action_codec as codec
from .autodiff import Adam, DenseNetwork, DenseNetworkConfig, DivergenceError, gather, no_grad, square
from .envs import (ERROR_LANDSCAPE, MOTIVATING_LANDSCAPE, OneStepEnv, generate_demos, uniform_dataset, write_grid_csv,
                   write_ground_truth_csv)
from .losses import squared_error
from .model import AdvantageNetwork
from .oracle import q_landscape_error, tabular_arsq_fit, tabular_independent_fit

log = logging.getLogger(__name__)

LANDSCAPE_METHODS = ("independent", "arsq_no_cf", "arsq")


# motivating example ---------------------------------------------------------
@dataclass
class ToyVerdict:
    method: str
    cell: tuple[int, int]
    optimal_cell: tuple[int, int]

    @property
    def is_optimal(self) -> bool:
        return self.cell == self.optimal_cell


def case_study_toy(out_dir, seed: int = 0, alpha: float = 0.01, n_samples: int = 1000,
                   steps: int = 20_000) -> list[ToyVerdict]:
    """Fit tabular ARSQ and the independent decomposition to mode-mix data with two bins per dimension.

    Writes ``arsq_q.csv`` and ``independent_q.csv`` (2x2 grids at bin
    centers) and ``verdict.csv`` with each method's greedy cell.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = OneStepEnv(MOTIVATING_LANDSCAPE, "motivating", bins_per_level=2, levels=1,
                     frequencies=(0.10, 0.30, 0.60))
    spec = env.spec.action_spec
    data = generate_demos(env, "mode_mix", n_samples, seed=seed)
    arsq = tabular_arsq_fit(data, alpha, steps=steps)
    indep = tabular_independent_fit(data, steps=steps)
    optimal = tuple(int(x) for x in codec.encode(spec, env.optimal_action())[:, 0])

    c1, c2 = spec.centers(0), spec.centers(1)
    a1, a2 = np.meshgrid(c1, c2, indexing="ij")
    write_grid_csv(out / "arsq_q.csv", a1, a2, arsq.joint_q()[0].reshape(2, 2))
    write_grid_csv(out / "independent_q.csv", a1, a2, indep.joint_q()[0].reshape(2, 2))

    verdicts = [ToyVerdict("arsq", arsq.greedy(0), optimal), ToyVerdict("independent", indep.greedy(0), optimal)]
    with open(out / "verdict.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "seed", "cell_a1", "cell_a2", "optimal_a1", "optimal_a2", "is_optimal"])
        for v in verdicts:
            w.writerow([v.method, seed, *v.cell, *v.optimal_cell, str(v.is_optimal).lower()])
    return verdicts


# landscape comparison -------------------------------------------------------
class _OneStepARSQ:
    """Value plus auto-regressive advantages regressed onto one-step rewards."""

    def __init__(self, spec, mode: str, widths, alpha: float, seed: int):
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.adv = AdvantageNetwork(spec, 2, widths, alpha, mode, rng=rng, name="adv")
        self.value = DenseNetwork(DenseNetworkConfig(2, tuple(widths), 1), rng, "value")

    def parameters(self):
        return self.adv.parameters() + self.value.parameters()

    def loss(self, actions, rewards):
        states = np.zeros((len(rewards), 2))
        digits = codec.encode(self.spec, actions)
        v = self.value(states).reshape((-1,))
        return squared_error(v, self.adv.joint_advantage(states, digits), rewards).mean()

    def predict(self, actions) -> np.ndarray:
        actions = np.atleast_2d(actions)
        states = np.zeros((len(actions), 2))
        with no_grad():
            v = self.value(states).data[:, 0]
            return v + self.adv.joint_advantage(states, codec.encode(self.spec, actions)).data


class _OneStepIndependent:
    """One Q head per dimension over the fine bins; each head regresses the reward, joint Q is their mean."""

    def __init__(self, spec, widths, seed: int):
        rng = np.random.default_rng(seed)
        self.spec = spec.flattened()
        self.bins = self.spec.bins_per_level
        self.net = DenseNetwork(DenseNetworkConfig(2, tuple(widths), self.spec.dims * self.bins), rng, "independent")

    def parameters(self):
        return self.net.parameters()

    def _picked(self, actions):
        n = len(actions)
        q = self.net(np.zeros((n, 2))).reshape((n * self.spec.dims, self.bins))
        digits = codec.encode(self.spec, actions)[:, :, 0].reshape(-1, 1)
        return gather(q, digits).reshape((n, self.spec.dims))

    def loss(self, actions, rewards):
        picked = self._picked(actions)
        return (square(picked - np.asarray(rewards)[:, None]) * 0.5).mean()

    def predict(self, actions) -> np.ndarray:
        with no_grad():
            return self._picked(np.atleast_2d(actions)).data.mean(axis=1)


def _build(method: str, spec, widths, alpha: float, seed: int):
    if method == "independent":
        return _OneStepIndependent(spec, widths, seed)
    if method == "arsq_no_cf":
        return _OneStepARSQ(spec, "no_cf", widths, alpha, seed)
    if method == "arsq":
        return _OneStepARSQ(spec, "coarse_outer_dim_inner", widths, alpha, seed)
    raise ValueError(f"unknown method {method!r}")


def fit_one_step(model, actions, rewards, steps: int, lr: float) -> list[float]:
    """Full-batch Adam on the model's regression loss with a cosine learning-rate decay."""
    opt = Adam(model.parameters(), lr)
    history = []
    for step in range(steps):
        opt.lr = 0.5 * lr * (1.0 + np.cos(np.pi * step / steps))
        loss = model.loss(actions, rewards)
        if not np.isfinite(loss.data):
            raise DivergenceError(f"non-finite loss after {len(history)} steps")
        history.append(loss.item())
        opt.zero_grad()
        loss.backward()
        opt.step()
    return history


@dataclass
class LandscapeResult:
    method: str
    seed: int
    mae: float


def case_study_landscape(out_dir, seeds=(0, 1, 2), bins_per_level: int = 7, levels: int = 2,
                         n_train: int = 2000, n_eval: int = 1000, steps: int = 1000, lr: float = 1e-2,
                         widths=(64, 64), alpha: float = 0.01, grid_resolution: int = 41,
                         methods=LANDSCAPE_METHODS) -> list[LandscapeResult]:
    """Compare how well each decomposition recovers the five-mode reward surface.

    Writes ``mae.csv`` (``method,seed,mae``), ``ground_truth.csv`` and one
    predicted grid per method (from the first seed). A method that diverges
    is reported with ``nan`` and the others still run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = OneStepEnv(ERROR_LANDSCAPE, "landscape", bins_per_level, levels)
    spec = env.spec.action_spec
    axis = np.linspace(-1.0, 1.0, grid_resolution)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    grid_actions = np.stack([g1.ravel(), g2.ravel()], axis=1)
    write_ground_truth_csv(out / "ground_truth.csv", ERROR_LANDSCAPE, grid_resolution)

    results = []
    for seed in seeds:
        data = uniform_dataset(env, n_train, seed)
        for method in methods:
            model = _build(method, spec, widths, alpha, seed)
            try:
                fit_one_step(model, data.actions, data.rewards, steps, lr)
                mae = q_landscape_error(model.predict, ERROR_LANDSCAPE, n_eval, seed=10_000 + seed)
            except (DivergenceError, FloatingPointError, ValueError) as exc:
                log.error("%s diverged on seed %d: %s", method, seed, exc)
                mae = float("nan")
            results.append(LandscapeResult(method, seed, mae))
            log.info("landscape %s seed %d mae %.4f", method, seed, mae)
            if seed == seeds[0] and np.isfinite(mae):
                write_grid_csv(out / f"{method}_q.csv", g1, g2, model.predict(grid_actions).reshape(g1.shape))
    with open(out / "mae.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "seed", "mae"])
        for r in results:
            w.writerow([r.method, r.seed, f"{r.mae:.10g}"])
    return results


def summarize(results: list[LandscapeResult]) -> dict[str, float]:
    """Mean MAE per method."""
    by_method: dict[str, list[float]] = {}
    for r in results:
        by_method.setdefault(r.method, []).append(r.mae)
    return {m: float(np.mean(v)) for m, v in by_method.items()}
