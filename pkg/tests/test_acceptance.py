"""The ten acceptance criteria, each at its stated tolerance and runtime budget.

Every test prints one ``[ACCEPTANCE] criterion N ...: PASS|FAIL (...)`` line;
the lines are repeated in the pytest terminal summary.
"""
import time

import numpy as np
from scipy.special import logsumexp

from arsq import action_codec as codec
from arsq import autodiff as ad
from arsq import cli
from arsq.action_codec import ActionSpec
from arsq.autodiff import Tensor
from arsq.config import TrainConfig, format_config
from arsq.envs import generate_demos, make_env
from arsq.losses import LossConfig, combined_loss, td_target
from arsq.model import CONDITIONING_MODES, AdvantageNetwork, ARSQAgent
from arsq.oracle import random_mdp, soft_value_iteration, tabular_arsq_fit_mdp
from arsq.replay import Batch, OfflineDataset, rank_filter, segment_window, write_dataset
from arsq.studies import case_study_landscape, case_study_toy, summarize
from arsq.trainer import Trainer, run_episodes

from _fd import probe_gradients


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


# 1 -------------------------------------------------------------------------
def test_normalization_invariant(acceptance):
    rng = np.random.default_rng(0)
    worst = 0.0
    with Clock() as clock:
        for probe in range(1000):
            mode = CONDITIONING_MODES[probe % len(CONDITIONING_MODES)]
            B, L, D = int(rng.integers(2, 6)), int(rng.integers(1, 3)), int(rng.integers(1, 4))
            alpha = float(10 ** rng.uniform(-2, 0))
            net = AdvantageNetwork(ActionSpec.box(D, -1.0, 1.0, B, L), 3, (8,), alpha, mode,
                                   rng=np.random.default_rng(probe))
            for p in net.parameters():
                p.data[...] = rng.normal(scale=2.0, size=p.data.shape)
            lattice = net.order.lattice
            h = int(rng.integers(len(net.order.slots)))
            prefix = np.full((lattice.dims, lattice.levels), -1)
            for l, d in net.order.slots[:h]:
                prefix[d, l] = rng.integers(lattice.bins_per_level)
            adv = net.dimensional_advantages(rng.normal(scale=2.0, size=3), prefix, *net.order.slots[h])
            worst = max(worst, abs(np.exp(adv / alpha).sum() - 1.0))
    passed = worst < 1e-6 and clock.elapsed < 5
    acceptance(1, "normalization invariant", passed,
               f"max |sum exp(A/alpha) - 1| = {worst:.2e} < 1e-6; {clock.elapsed:.1f} s < 5 s")


# 2 -------------------------------------------------------------------------
def test_advantage_sum_matches_value_iteration(acceptance):
    with Clock() as clock:
        mdp = random_mdp(3, 2, 3, seed=0)
        vi = soft_value_iteration(mdp, alpha=0.05, gamma=0.9)
        fit = tabular_arsq_fit_mdp(mdp, alpha=0.05, gamma=0.9)
        gap = float(np.abs(fit.advantage_sum() - vi.advantage).max())
    passed = gap < 1e-3 and clock.elapsed < 30
    acceptance(2, "advantage sum equals soft advantage", passed,
               f"max |sum_d A^d - (Q - V)| = {gap:.2e} < 1e-3; {clock.elapsed:.1f} s < 30 s")


# 3 -------------------------------------------------------------------------
def test_motivating_example(acceptance, tmp_path):
    outcomes = []
    with Clock() as clock:
        for seed in range(3):
            verdicts = {v.method: v for v in case_study_toy(tmp_path / f"seed{seed}", seed)}
            outcomes.append((verdicts["arsq"].is_optimal, not verdicts["independent"].is_optimal))
    arsq_ok = sum(a for a, _ in outcomes)
    indep_ok = sum(i for _, i in outcomes)
    passed = arsq_ok == 3 and indep_ok == 3 and clock.elapsed < 60
    acceptance(3, "motivating example", passed,
               f"ARSQ optimal in {arsq_ok}/3 seeds, independent suboptimal in {indep_ok}/3; "
               f"{clock.elapsed:.1f} s < 60 s")


# 4 -------------------------------------------------------------------------
def test_landscape_error_ordering(acceptance, tmp_path):
    with Clock() as clock:
        results = case_study_landscape(tmp_path, seeds=(0, 1, 2), n_train=2000, n_eval=1000)
    mae = summarize(results)
    indep, no_cf, arsq = mae["independent"], mae["arsq_no_cf"], mae["arsq"]
    ratio = indep / arsq
    passed = indep > no_cf > arsq and ratio >= 10 and clock.elapsed < 600
    acceptance(4, "landscape error ordering", passed,
               f"mean MAE independent {indep:.4f}, ARSQ-no-CF {no_cf:.4f}, ARSQ {arsq:.4f}; "
               f"independent/ARSQ = {ratio:.2f} (need >= 10); {clock.elapsed:.0f} s < 600 s")


# 5 -------------------------------------------------------------------------
def _random_batch(rng, n, demo):
    digits = rng.integers(0, 3, size=(n, 2, 2))
    return Batch(rng.normal(size=(n, 3)), rng.uniform(-1, 1, (n, 2)), digits, rng.normal(size=n),
                 rng.normal(size=(n, 3)), rng.random(n) < 0.3, np.full(n, demo))


def _bc_gaps(agent, batch, variant):
    net = agent.adv[0]
    heads = net.head_advantages(batch.obs, batch.digits)
    picked = net.selected(heads, batch.digits)
    if not variant:
        return [h.data - p.data for h, p in zip(heads, picked)]
    lat = net.order.to_lattice(batch.digits)
    gaps = []
    for h, p, (l, d) in zip(heads, picked, net.order.slots):
        others = h.data.copy()
        others[np.arange(len(others)), lat[:, d, l]] = -np.inf
        gaps.append(logsumexp(others, axis=-1)[:, None] - p.data)
    return gaps


def test_loss_gradients(acceptance):
    rng = np.random.default_rng(5)
    worst, checked, skipped = 0.0, 0, 0
    with Clock() as clock:
        for variant in (False, True):
            done, probe = 0, 0
            while done < 100:
                probe += 1
                mode = ("coarse_outer_dim_inner", "no_cf", "no_dim_cond")[probe % 3]
                agent = ARSQAgent(ActionSpec.box(2, bins_per_level=3, levels=2), 3, (6,), 0.5, mode, seed=probe)
                bd, br = _random_batch(rng, 3, True), _random_batch(rng, 3, False)
                cfg = LossConfig(alpha=0.5, bc_margin=-0.3, bc_variant=variant)
                y_d, y_r = rng.normal(size=3), rng.normal(size=3)
                if any(np.any(np.abs(g - cfg.bc_margin) <= 1e-3) for g in _bc_gaps(agent, bd, variant)):
                    skipped += 1  # no two-sided derivative this close to the clamp
                    continue
                err = probe_gradients(lambda: combined_loss(bd, br, agent, cfg, y_d, y_r)[0],
                                      agent.trainable_parameters(), rng, 3)
                worst = max(worst, err)
                done += 1
                checked += 1
    passed = worst < 1e-4 and clock.elapsed < 120
    acceptance(5, "loss gradients vs finite differences", passed,
               f"max relative error {worst:.2e} < 1e-4 over {checked} probes, 100 per BC form "
               f"({skipped} at a clamp kink skipped); "
               f"{clock.elapsed:.1f} s < 120 s")


# 6 -------------------------------------------------------------------------
def test_discretization_round_trip(acceptance):
    failures = []
    rng = np.random.default_rng(0)
    worst_ratio = 0.0
    with Clock() as clock:
        for B in (2, 3, 5, 7):
            for L in (1, 2, 3):
                spec = ActionSpec.box(1, -1.0, 1.0, B, L)
                for k in range(B**L):
                    if codec.global_from_digits(spec, np.array(codec.level_decompose(spec, k))) != k:
                        failures.append((B, L, k))
                a = rng.uniform(-1.0, 1.0, (10_000 // 12 + 1, 1))
                err = np.abs(codec.decode(spec, codec.encode(spec, a)) - a).max()
                worst_ratio = max(worst_ratio, err / (spec.fine_width[0] / 2))
    passed = not failures and worst_ratio <= 1.0 + 1e-12 and clock.elapsed < 10
    acceptance(6, "discretization round trip", passed,
               f"{len(failures)} index failures; max quantization error / half fine width = {worst_ratio:.6f}; "
               f"{clock.elapsed:.1f} s < 10 s")


# 7 -------------------------------------------------------------------------
def test_ema_and_target_contracts(acceptance):
    with Clock() as clock:
        rng = np.random.default_rng(0)
        target = [Tensor(rng.normal(size=(3, 4)), requires_grad=True)]
        online = [Tensor(rng.normal(size=(3, 4)), requires_grad=True)]
        frozen = target[0].data.copy()
        ad.ema_update(target, online, 1.0)
        frozen_ok = np.array_equal(target[0].data, frozen)
        ad.ema_update(target, online, 0.0)
        copy_ok = np.array_equal(target[0].data, online[0].data)

        agent = ARSQAgent(ActionSpec.box(2, bins_per_level=3, levels=2), 3, (6,), 0.5, seed=0)
        bd, br = _random_batch(rng, 4, True), _random_batch(rng, 4, False)
        y = td_target(br.rewards, br.dones, br.next_obs, agent.values, 0.99)
        loss, _ = combined_loss(bd, br, agent, LossConfig(alpha=0.5))
        loss.backward()
        target_params = [p for net in agent.values.target + agent.adv_target for p in net.parameters()]
        no_grad_ok = isinstance(y, np.ndarray) and all(p.grad is None for p in target_params)
    passed = frozen_ok and copy_ok and no_grad_ok and clock.elapsed < 5
    acceptance(7, "EMA and target contracts", passed,
               f"rho=1 frozen {frozen_ok}, rho=0 copy {copy_ok}, no gradient into targets {no_grad_ok}; "
               f"{clock.elapsed:.2f} s < 5 s")


# 8 -------------------------------------------------------------------------
FINAL_EVAL_EPISODES = 200


def final_success(cfg, demos):
    """Train, then score the final greedy policy on enough episodes to resolve a 0.05 difference."""
    trainer = Trainer(cfg, offline=demos)
    last = trainer.run()[-1].success_rate
    return run_episodes(trainer.agent, cfg.env, FINAL_EVAL_EPISODES, seed=10_000 + cfg.seed).success_rate, last


def test_end_to_end_training(acceptance):
    lines, passed = [], True
    for seed in range(3):
        demos = generate_demos(make_env("point_mass"), "medium", 50, seed=100 + seed)
        with Clock() as clock:
            arsq, arsq_last = final_success(TrainConfig(seed=seed), demos)
            bc, bc_last = final_success(TrainConfig(seed=seed, bc_only=True, total_env_steps=0,
                                                    offline_steps=20_000), demos)
        passed &= arsq >= 0.8 and arsq > bc and clock.elapsed < 600
        lines.append(f"seed {seed}: ARSQ {arsq:.3f} vs BC-only {bc:.3f} "
                     f"(last metrics row {arsq_last:.1f} vs {bc_last:.1f}) in {clock.elapsed:.0f} s")
    acceptance(8, "end-to-end training beats BC-only", passed,
               f"success over {FINAL_EVAL_EPISODES} greedy episodes; " + "; ".join(lines)
               + "; need ARSQ >= 0.8 and > BC-only, < 600 s per seed")


# 9 -------------------------------------------------------------------------
def test_quality_ranking_protocol(acceptance):
    rng = np.random.default_rng(0)
    windows_ok = True
    with Clock() as clock:
        for n in (10, 17, 50, 101):
            top, mid, bottom = (set(range(*segment_window(n, s, 0.3))) for s in ("top", "middle", "bottom"))
            windows_ok &= top.isdisjoint(mid) and mid.isdisjoint(bottom) and top.isdisjoint(bottom)
            windows_ok &= min(top) == 0 and max(bottom) == n - 1
        for n in (3, 9, 30, 99):
            parts = [set(range(*segment_window(n, s, 1 / 3))) for s in ("top", "middle", "bottom")]
            windows_ok &= set().union(*parts) == set(range(n)) and sum(map(len, parts)) == n
        spec = ActionSpec.box(2, bins_per_level=3, levels=2)
        for dist in (rng.normal(size=40), rng.exponential(size=40), np.repeat([0.0, 1.0], 20)):
            n = len(dist)
            data = OfflineDataset.from_arrays(spec, np.zeros((n, 2)), np.zeros((n, 2)), dist, np.zeros((n, 2)),
                                              np.ones(n, bool), np.arange(n))
            kept = [set(rank_filter(data, s, 0.3).episodes.tolist()) for s in ("top", "middle", "bottom")]
            windows_ok &= kept[0].isdisjoint(kept[1]) and kept[1].isdisjoint(kept[2]) and kept[0].isdisjoint(kept[2])
            windows_ok &= min(dist[list(kept[0])]) >= max(dist[list(kept[2])])

        demos = rank_filter(generate_demos(make_env("point_mass"), "medium", 50, seed=100), "bottom", 0.3)
        success, last = final_success(TrainConfig(seed=0), demos)
    passed = windows_ok and success >= 0.5 and clock.elapsed < 600
    acceptance(9, "quality-ranking protocol", passed,
               f"segments disjoint/covering {windows_ok}; bottom-30% demos ({demos.num_episodes} episodes) "
               f"success {success:.3f} over {FINAL_EVAL_EPISODES} greedy episodes >= 0.5 "
               f"(last metrics row {last:.1f}); {clock.elapsed:.0f} s < 600 s")


# 10 ------------------------------------------------------------------------
def test_determinism(acceptance, tmp_path):
    demo_path = tmp_path / "demos.jsonl"
    write_dataset(demo_path, generate_demos(make_env("point_mass"), "medium", 10, seed=100))
    cfg = TrainConfig(total_env_steps=2000, eval_every=500, wall_clock=False, offline_data=str(demo_path))
    (tmp_path / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    with Clock() as clock:
        codes = [cli.main(["train", "--config", str(tmp_path / "config.txt"), "--seed", "3",
                           "--out", str(tmp_path / run)]) for run in ("a", "b")]
    a, b = ((tmp_path / run / "metrics.csv").read_bytes() for run in ("a", "b"))
    passed = codes == [0, 0] and a == b and clock.elapsed < 300
    acceptance(10, "deterministic metrics", passed,
               f"exit codes {codes}, metrics byte-identical {a == b} ({len(a)} bytes); {clock.elapsed:.0f} s < 300 s")
