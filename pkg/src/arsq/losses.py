"""TD regression, behavior-cloning margins and their combination."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, clamp_min, concat, logsumexp, no_grad, square
from .model import ARSQAgent, AdvantageNetwork, ValueNetworkPair, soft_value
from .replay import Batch


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.99
    alpha: float = 0.01
    bc_margin: float = -1.0
    bc_weight: float = 1.0
    bc_variant: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.bc_weight < 0:
            raise ValueError(f"bc_weight must be non-negative, got {self.bc_weight}")


def td_target(rewards, dones, next_states, values: ValueNetworkPair, gamma: float) -> np.ndarray:
    """``r + gamma * min(target V1, target V2)(s')``, with no bootstrap on terminal steps."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if len(rewards) == 0:
        return rewards.copy()
    bootstrap = soft_value(values, next_states, "target_min")
    return rewards + gamma * (1.0 - np.asarray(dones, dtype=np.float64)) * bootstrap


def squared_error(v: Tensor, a: Tensor, y: np.ndarray) -> Tensor:
    """Per-sample ``0.5 * (V + A - y)**2``."""
    return square(v + a - y) * 0.5


def rl_loss(values: ValueNetworkPair, i: int, adv_net: AdvantageNetwork, states, digits, y) -> Tensor:
    """Per-sample TD loss for value/advantage network pair ``i``."""
    return squared_error(values(states, i), adv_net.joint_advantage(states, digits), np.asarray(y, dtype=np.float64))


def _sum(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def bc_margin_terms(head_advs: list[Tensor], expert_adv: list[Tensor], margin: float) -> Tensor:
    """Per-sample ``sum_heads sum_bins max(A(a) - A(a_e), margin)``."""
    return _sum([clamp_min(a - e, margin).sum(axis=-1) for a, e in zip(head_advs, expert_adv)])


def bc_variant_terms(head_advs: list[Tensor], expert_adv: list[Tensor], expert_bins: list[np.ndarray],
                     margin: float) -> Tensor:
    """Per-sample ``sum_heads max(logsumexp_{a != a_e} A(a) - A(a_e), margin)``."""
    terms = []
    for a, e, bins in zip(head_advs, expert_adv, expert_bins):
        mask = np.ones(a.shape, dtype=bool)
        mask[np.arange(a.shape[0]), bins] = False
        terms.append(clamp_min(logsumexp(a, axis=-1, mask=mask) - e.reshape((-1,)), margin))
    return _sum(terms)


def _expert_parts(adv_net: AdvantageNetwork, states, expert_digits, head_advs=None):
    if head_advs is None:
        head_advs = adv_net.head_advantages(states, expert_digits)
    expert_adv = adv_net.selected(head_advs, expert_digits)
    lat = adv_net.order.to_lattice(expert_digits)
    bins = [lat[:, d, l] for (l, d) in adv_net.order.slots]
    return head_advs, expert_adv, bins


def bc_margin_loss(adv_net: AdvantageNetwork, states, expert_digits, margin: float, head_advs=None) -> Tensor:
    head_advs, expert_adv, _ = _expert_parts(adv_net, states, expert_digits, head_advs)
    return bc_margin_terms(head_advs, expert_adv, margin)


def bc_variant_loss(adv_net: AdvantageNetwork, states, expert_digits, margin: float, head_advs=None) -> Tensor:
    head_advs, expert_adv, bins = _expert_parts(adv_net, states, expert_digits, head_advs)
    return bc_variant_terms(head_advs, expert_adv, bins, margin)


@dataclass
class LossStats:
    rl_loss: float
    bc_loss: float
    v_mean: float
    entropy_mean: float
    max_norm_error: float


def combined_loss(batch_d: Batch, batch_r: Batch, agent: ARSQAgent, cfg: LossConfig,
                  y_d: np.ndarray | None = None, y_r: np.ndarray | None = None) -> tuple[Tensor, LossStats]:
    """Mean over ``batch_d`` of RL + beta*BC plus mean over ``batch_r`` of RL, for both networks.

    ``batch_d`` and ``batch_r`` share one forward pass; either may be empty
    but not both. Targets are recomputed from the value targets unless given.
    """
    n_d, n_r = len(batch_d), len(batch_r)
    if n_d + n_r == 0:
        raise ValueError("combined_loss needs at least one transition")
    batch = Batch.concat([batch_d, batch_r])
    if y_d is None or y_r is None:
        y = td_target(batch.rewards, batch.dones, batch.next_obs, agent.values, cfg.gamma)
    else:
        y = np.concatenate([y_d, y_r])
    # per-sample weights reproduce mean(L_D) + mean(L_R)
    w = np.concatenate([np.full(n_d, 1.0 / n_d if n_d else 0.0), np.full(n_r, 1.0 / n_r if n_r else 0.0)])
    w_bc = np.concatenate([np.full(n_d, cfg.bc_weight / n_d if n_d else 0.0), np.zeros(n_r)])

    total = None
    rl_val = bc_val = 0.0
    entropy = 0.0
    norm_err = 0.0
    for i, net in enumerate(agent.adv):
        head_advs = net.head_advantages(batch.obs, batch.digits)
        picked = net.selected(head_advs, batch.digits)
        q_adv = _sum(picked).reshape((-1,))
        rl = squared_error(agent.values(batch.obs, i), q_adv, y)
        loss = (rl * w).sum()
        rl_val += float((rl.data * w).sum())
        if n_d and cfg.bc_weight > 0:
            head_d = [h[:n_d] for h in head_advs]
            if cfg.bc_variant:
                bc = bc_variant_loss(net, batch_d.obs, batch_d.digits, cfg.bc_margin, head_d)
            else:
                bc = bc_margin_loss(net, batch_d.obs, batch_d.digits, cfg.bc_margin, head_d)
            loss = loss + (bc * w_bc[:n_d]).sum()
            bc_val += float(bc.data.mean())
        total = loss if total is None else total + loss
        if i == 0:
            advs = [h.data for h in head_advs]
            entropy = float(sum(_entropy(a, cfg.alpha) for a in advs).mean())
            norm_err = max(float(np.abs(np.exp(a / cfg.alpha).sum(axis=-1) - 1.0).max()) for a in advs)
    with no_grad():
        v_mean = float(agent.values(batch.obs, 0).data.mean())
    return total, LossStats(rl_val, bc_val, v_mean, entropy, norm_err)


def _entropy(adv: np.ndarray, alpha: float) -> np.ndarray:
    # adv is normalized, so log pi = adv / alpha exactly
    p = np.exp(adv / alpha)
    return -(p * adv / alpha).sum(axis=-1)
