"""Auto-regressive dimensional soft-advantage networks and twin soft values.

The advantage network emits one normalized head per (level, dimension)
slot. Each head sees the state plus an encoding of the slots it is allowed
to condition on; which slots those are, and in what order heads are
visited, is set by the conditioning mode.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import action_codec as codec
from .action_codec import ActionSpec
from .autodiff import (DenseNetwork, DenseNetworkConfig, Linear, Tensor, as_tensor, concat, copy_parameters,
                       ema_update, gather, logsumexp, no_grad)

CONDITIONING_MODES = (
    "coarse_outer_dim_inner",
    "dim_outer_coarse_inner",
    "no_cf_cond",
    "no_dim_cond",
    "no_cf",
    "plain",
)
BACKBONE_SHARING = ("shared", "level_shared", "separate")


def normalize_head(u, alpha: float) -> Tensor:
    """``u - alpha * logsumexp(u / alpha)`` over the last axis."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    u = as_tensor(u)
    if not np.all(np.isfinite(u.data)):
        raise ValueError("non-finite head output")
    return u - logsumexp(u * (1.0 / alpha), axis=-1, keepdims=True) * alpha


def head_policy(adv: np.ndarray, alpha: float) -> np.ndarray:
    """Softmax of ``adv / alpha``, renormalized (the advantages need not be normalized)."""
    z = adv / alpha
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def head_entropy(adv: np.ndarray, alpha: float) -> np.ndarray:
    p = head_policy(adv, alpha)
    return -(p * np.log(np.clip(p, 1e-300, None))).sum(axis=-1)


@dataclass(frozen=True)
class ConditioningOrder:
    """Visitation order over (level, dim) slots and what each slot may see."""

    spec: ActionSpec
    mode: str = "coarse_outer_dim_inner"

    def __post_init__(self):
        if self.mode not in CONDITIONING_MODES:
            raise ValueError(f"unknown conditioning mode {self.mode!r}; choose from {CONDITIONING_MODES}")

    @cached_property
    def lattice(self) -> ActionSpec:
        """The lattice the heads act on; flat modes use ``B**L`` bins in one level."""
        if self.mode in ("no_cf", "plain"):
            return self.spec.flattened()
        return self.spec

    @cached_property
    def slots(self) -> list[tuple[int, int]]:
        L, D = self.lattice.levels, self.lattice.dims
        if self.mode in ("dim_outer_coarse_inner", "no_cf_cond"):
            return [(l, d) for d in range(D) for l in range(L)]
        return [(l, d) for l in range(L) for d in range(D)]

    @cached_property
    def visible(self) -> list[tuple[int, ...]]:
        """For head ``h`` (position in ``slots``), the earlier slot positions it conditions on."""
        out = []
        for h, (l, d) in enumerate(self.slots):
            earlier = range(h)
            if self.mode == "no_cf_cond":
                seen = [j for j in earlier if self.slots[j][1] < d]
            elif self.mode == "no_dim_cond":
                seen = [j for j in earlier if self.slots[j][0] < l]
            elif self.mode == "plain":
                seen = []
            else:
                seen = list(earlier)
            out.append(tuple(seen))
        return out

    def to_lattice(self, digits: np.ndarray) -> np.ndarray:
        """Spec digits ``(..., D, L)`` to lattice digits ``(..., D, L')``."""
        digits = np.asarray(digits, dtype=np.int64)
        if self.lattice is self.spec:
            return digits
        return codec.global_from_digits(self.spec, digits)[..., None]

    def from_lattice(self, digits: np.ndarray) -> np.ndarray:
        digits = np.asarray(digits, dtype=np.int64)
        if self.lattice is self.spec:
            return digits
        return codec.digits_from_global(self.spec, digits[..., 0])


class AdvantageNetwork:
    """Shared-backbone network producing dimensional soft advantages."""

    def __init__(self, spec: ActionSpec, obs_width: int, hidden_widths=(256, 256), alpha: float = 0.01,
                 mode: str = "coarse_outer_dim_inner", activation: str = "tanh", use_bias: bool = True,
                 backbone_sharing: str = "shared", rng: np.random.Generator | None = None, name: str = "adv"):
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        if backbone_sharing not in BACKBONE_SHARING:
            raise ValueError(f"backbone_sharing must be one of {BACKBONE_SHARING}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        self.order = ConditioningOrder(spec, mode)
        self.obs_width = obs_width
        self.alpha = alpha
        self.name = name
        self.backbone_sharing = backbone_sharing
        lat = self.order.lattice
        self.bins = lat.bins_per_level
        self.slot_width = self.bins + 2
        self.input_width = obs_width + len(self.order.slots) * self.slot_width
        cfg = DenseNetworkConfig(self.input_width, tuple(hidden_widths), 1, activation, use_bias)
        self.backbones: dict[str, DenseNetwork] = {}
        for key in dict.fromkeys(self._group(h) for h in range(len(self.order.slots))):
            net = DenseNetwork(cfg, rng, name=f"{name}/backbone{key}")
            net.out = None  # heads replace the output layer
            self.backbones[key] = net
        self.heads = [
            Linear(cfg.hidden_widths[-1], self.bins, rng, f"{name}/l{l}/d{d}", use_bias)
            for (l, d) in self.order.slots
        ]

    def _group(self, h: int) -> str:
        l, d = self.order.slots[h]
        if self.backbone_sharing == "shared":
            return ""
        if self.backbone_sharing == "level_shared":
            return f"/l{l}"
        return f"/l{l}/d{d}"

    def parameters(self) -> list[Tensor]:
        params = []
        for net in self.backbones.values():
            for layer_idx, layer in enumerate(net.hidden):
                params += layer.parameters()
                if net.norms:
                    params += list(net.norms[layer_idx])
        for head in self.heads:
            params += head.parameters()
        return params

    def zero_heads(self) -> None:
        for head in self.heads:
            for p in head.parameters():
                p.data[...] = 0.0

    # encoding ---------------------------------------------------------
    def encode_inputs(self, states: np.ndarray, lattice_digits: np.ndarray, h: int) -> np.ndarray:
        """Backbone input for head ``h``: state, then one block per slot (zeros when hidden)."""
        states = np.asarray(states, dtype=np.float64)
        n = states.shape[0]
        lat = self.order.lattice
        blocks = np.zeros((n, len(self.order.slots), self.slot_width))
        rows = np.arange(n)
        for j in self.order.visible[h]:
            l, d = self.order.slots[j]
            digit = lattice_digits[:, d, l]
            blocks[rows, j, digit] = 1.0
            blocks[:, j, self.bins] = codec.partial_center(lat, d, l, lattice_digits[:, d, :])
            blocks[:, j, self.bins + 1] = 1.0
        return np.concatenate([states, blocks.reshape(n, -1)], axis=1)

    def _check_states(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = states[None, :]
        if states.shape[1] != self.obs_width:
            raise ValueError(f"{self.name}: state width {states.shape[1]} != {self.obs_width}")
        return states

    def _heads_forward(self, states: np.ndarray, lattice_digits: np.ndarray, which: list[int]) -> list[Tensor]:
        n = states.shape[0]
        out: dict[int, Tensor] = {}
        by_group: dict[str, list[int]] = {}
        for h in which:
            by_group.setdefault(self._group(h), []).append(h)
        for key, hs in by_group.items():
            x = np.concatenate([self.encode_inputs(states, lattice_digits, h) for h in hs], axis=0)
            feats = self.backbones[key].features(x)
            for i, h in enumerate(hs):
                u = self.heads[h](feats[i * n:(i + 1) * n])
                out[h] = normalize_head(u, self.alpha)
        return [out[h] for h in which]

    # public operations -------------------------------------------------
    def head_advantages(self, states, digits) -> list[Tensor]:
        """All heads with the given complete actions as the prefix, in slot order.

        ``digits`` are spec digits ``(N, D, L)``; each result is ``(N, bins)``.
        """
        states = self._check_states(states)
        lat_digits = self.order.to_lattice(digits)
        return self._heads_forward(states, lat_digits, list(range(len(self.order.slots))))

    def selected(self, head_advs: list[Tensor], digits) -> list[Tensor]:
        """Per head, the advantage of the chosen bin, each ``(N, 1)``."""
        lat_digits = self.order.to_lattice(digits)
        return [gather(a, lat_digits[:, d, l][:, None]) for a, (l, d) in zip(head_advs, self.order.slots)]

    def joint_advantage(self, states, digits) -> Tensor:
        digits = np.asarray(digits, dtype=np.int64)
        if np.any(digits < 0):
            raise ValueError("joint_advantage needs a complete action")
        picked = self.selected(self.head_advantages(states, digits), digits)
        total = picked[0]
        for p in picked[1:]:
            total = total + p
        return total.reshape((-1,))

    def dimensional_advantages(self, state, prefix, level: int, dim: int) -> np.ndarray:
        """Advantages of head ``(level, dim)`` for one state.

        ``prefix`` is a lattice-digit matrix ``(D, L')`` with ``-1`` for unchosen
        entries; exactly the slots visited before ``(level, dim)`` must be set.
        """
        slots = self.order.slots
        if (level, dim) not in slots:
            raise ValueError(f"no head at level {level}, dim {dim} in mode {self.order.mode!r}")
        h = slots.index((level, dim))
        prefix = np.asarray(prefix, dtype=np.int64)
        for j, (l, d) in enumerate(slots):
            chosen = prefix[d, l] >= 0
            if chosen != (j < h):
                raise ValueError(f"prefix inconsistent with conditioning order at slot (level={l}, dim={d})")
        states = self._check_states(state)
        with no_grad():
            (adv,) = self._heads_forward(states, np.clip(prefix, 0, None)[None], [h])
        return adv.data[0]

    def head_step(self, states: np.ndarray, lattice_digits: np.ndarray, h: int) -> np.ndarray:
        with no_grad():
            (adv,) = self._heads_forward(states, lattice_digits, [h])
        return adv.data

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        load_into(self.parameters(), arrays)


def load_into(params, arrays: dict[str, np.ndarray]) -> None:
    for p in params:
        if p.name not in arrays:
            raise KeyError(f"checkpoint lacks parameter {p.name!r}")
        if arrays[p.name].shape != p.shape:
            raise ValueError(f"shape mismatch for {p.name!r}: checkpoint {arrays[p.name].shape}, model {p.shape}")
        p.data[...] = arrays[p.name]


def select_action(adv_nets, states, alpha: float | None = None, mode: str = "sample",
                  rng: np.random.Generator | None = None, return_policies: bool = False):
    """Double-network auto-regressive action selection.

    At each slot the advantages of all networks are combined by an
    elementwise minimum, turned into a renormalized softmax, then sampled
    (``mode="sample"``) or maximized (``mode="greedy"``). Returns spec digits
    ``(N, D, L)``; a single 1-D state returns ``(D, L)``.
    """
    if mode not in ("sample", "greedy"):
        raise ValueError(f"mode must be 'sample' or 'greedy', got {mode!r}")
    first = adv_nets[0]
    alpha = first.alpha if alpha is None else alpha
    for net in adv_nets[1:]:
        if net.spec != first.spec or net.order.mode != first.order.mode:
            raise ValueError("advantage networks disagree on action spec or conditioning mode")
    if mode == "sample" and rng is None:
        raise ValueError("sampling needs an rng")
    single = np.asarray(states).ndim == 1
    states = first._check_states(states)
    n = states.shape[0]
    lat = first.order.lattice
    digits = np.zeros((n, lat.dims, lat.levels), dtype=np.int64)
    policies = []
    for h, (l, d) in enumerate(first.order.slots):
        adv = first.head_step(states, digits, h)
        for net in adv_nets[1:]:
            adv = np.minimum(adv, net.head_step(states, digits, h))
        pi = head_policy(adv, alpha)
        if mode == "greedy":
            choice = np.argmax(pi, axis=-1)
        else:
            cdf = np.cumsum(pi, axis=-1)
            u = rng.random((n, 1)) * cdf[:, -1:]
            choice = np.minimum((cdf <= u).sum(axis=-1), pi.shape[-1] - 1)
        digits[:, d, l] = choice
        policies.append(pi)
    out = first.order.from_lattice(digits)
    out = out[0] if single else out
    return (out, policies) if return_policies else out


class ValueNetworkPair:
    """Twin online soft-value networks with EMA target copies."""

    def __init__(self, obs_width: int, hidden_widths=(256, 256), activation: str = "tanh", use_bias: bool = True,
                 rng: np.random.Generator | None = None, name: str = "value"):
        rng = rng if rng is not None else np.random.default_rng(0)
        cfg = DenseNetworkConfig(obs_width, tuple(hidden_widths), 1, activation, use_bias)
        self.online = [DenseNetwork(cfg, rng, f"{name}{i}") for i in (1, 2)]
        self.target = [DenseNetwork(cfg, rng, f"{name}{i}_target") for i in (1, 2)]
        for t, o in zip(self.target, self.online):
            copy_parameters(t.parameters(), o.parameters())

    def parameters(self) -> list[Tensor]:
        return self.online[0].parameters() + self.online[1].parameters()

    def update_targets(self, rho: float) -> None:
        for t, o in zip(self.target, self.online):
            ema_update(t.parameters(), o.parameters(), rho)

    def all_parameters(self) -> list[Tensor]:
        return self.parameters() + self.target[0].parameters() + self.target[1].parameters()

    def __call__(self, states, i: int) -> Tensor:
        """Online value ``i`` (0 or 1), shape ``(N,)``, with gradient."""
        return self.online[i](np.atleast_2d(states)).reshape((-1,))


def soft_value(pair: ValueNetworkPair, states, which: str = "target_min") -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    with no_grad():
        if which == "online_1":
            return pair.online[0](states).data[:, 0]
        if which == "online_2":
            return pair.online[1](states).data[:, 0]
        if which == "target_min":
            return np.minimum(pair.target[0](states).data[:, 0], pair.target[1](states).data[:, 0])
    raise ValueError(f"which must be online_1, online_2 or target_min, got {which!r}")


class ARSQAgent:
    """Two advantage networks, their EMA targets, and the twin value networks."""

    def __init__(self, spec: ActionSpec, obs_width: int, hidden_widths=(256, 256), alpha: float = 0.01,
                 mode: str = "coarse_outer_dim_inner", activation: str = "tanh", use_bias: bool = True,
                 backbone_sharing: str = "shared", seed: int = 0):
        rng = np.random.default_rng(seed)
        kw = dict(hidden_widths=hidden_widths, alpha=alpha, mode=mode, activation=activation,
                  use_bias=use_bias, backbone_sharing=backbone_sharing)
        self.spec = spec
        self.alpha = alpha
        self.adv = [AdvantageNetwork(spec, obs_width, rng=rng, name=f"adv{i}", **kw) for i in (1, 2)]
        self.adv_target = [AdvantageNetwork(spec, obs_width, rng=rng, name=f"adv{i}_target", **kw) for i in (1, 2)]
        for t, o in zip(self.adv_target, self.adv):
            copy_parameters(t.parameters(), o.parameters())
        self.values = ValueNetworkPair(obs_width, hidden_widths, activation, use_bias, rng=rng)

    @property
    def order(self) -> ConditioningOrder:
        return self.adv[0].order

    def trainable_parameters(self) -> list[Tensor]:
        return self.adv[0].parameters() + self.adv[1].parameters() + self.values.parameters()

    def all_parameters(self) -> list[Tensor]:
        params = []
        for net in self.adv + self.adv_target:
            params += net.parameters()
        return params + self.values.all_parameters()

    def update_targets(self, rho: float) -> None:
        for t, o in zip(self.adv_target, self.adv):
            ema_update(t.parameters(), o.parameters(), rho)
        self.values.update_targets(rho)

    def act(self, states, mode: str = "sample", rollout_net: str = "current", rng=None):
        if rollout_net not in ("current", "target"):
            raise ValueError(f"rollout_net must be 'current' or 'target', got {rollout_net!r}")
        nets = self.adv if rollout_net == "current" else self.adv_target
        return select_action(nets, states, self.alpha, mode, rng)

    def joint_q(self, states, digits, which: int = 0) -> np.ndarray:
        """``V(s) + A(s, a)`` from online network pair ``which``."""
        with no_grad():
            v = self.values(states, which).data
            a = self.adv[which].joint_advantage(states, digits).data
        return v + a

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.all_parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        load_into(self.all_parameters(), arrays)
