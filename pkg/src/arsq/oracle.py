"""Exact tabular references for soft Q-learning and its decompositions.

Joint actions over ``D`` dimensions with ``B`` bins each are indexed
row-major: ``index = sum_d a_d * B**(D-1-d)``. Tabular advantage tables for
dimension ``d`` have shape ``(S, B, ..., B)`` with ``d + 1`` action axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class FiniteMDP:
    rewards: np.ndarray  # (S, A)
    transitions: np.ndarray  # (S, A, S); rows may sum to < 1 for termination
    dims: int
    bins: int

    def __post_init__(self):
        S, A = self.rewards.shape
        if A != self.bins**self.dims:
            raise ValueError(f"{A} joint actions do not match {self.bins}**{self.dims}")
        if self.transitions.shape != (S, A, S):
            raise ValueError(f"transition tensor must have shape {(S, A, S)}")

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    def joint_digits(self) -> np.ndarray:
        """``(A, D)`` digits of every joint action index."""
        grids = np.indices((self.bins,) * self.dims).reshape(self.dims, -1)
        return grids.T


def random_mdp(n_states: int = 3, dims: int = 2, bins: int = 3, seed: int = 0) -> FiniteMDP:
    rng = np.random.default_rng(seed)
    A = bins**dims
    rewards = rng.uniform(-1.0, 1.0, (n_states, A))
    transitions = rng.dirichlet(np.ones(n_states), size=(n_states, A))
    return FiniteMDP(rewards, transitions, dims, bins)


def one_step_mdp(rewards, dims: int, bins: int) -> FiniteMDP:
    rewards = np.asarray(rewards, dtype=np.float64).reshape(1, -1)
    return FiniteMDP(rewards, np.zeros((1, rewards.shape[1], 1)), dims, bins)


@dataclass
class TabularSoftModel:
    joint_q: np.ndarray  # (S, A)
    value: np.ndarray  # (S,)
    alpha: float
    gamma: float
    iterations: int = 0
    residuals: list[float] = field(default_factory=list)

    @property
    def policy(self) -> np.ndarray:
        return np.exp((self.joint_q - self.value[:, None]) / self.alpha)

    @property
    def advantage(self) -> np.ndarray:
        return self.joint_q - self.value[:, None]


def soft_value_iteration(mdp: FiniteMDP, alpha: float, gamma: float, tol: float = 1e-12,
                         max_iter: int = 100_000) -> TabularSoftModel:
    """Iterate ``Q = r + gamma P V`` and ``V = alpha logsumexp(Q / alpha)`` to a fixed point."""
    v = np.zeros(mdp.n_states)
    residuals = []
    for it in range(1, max_iter + 1):
        q = mdp.rewards + gamma * mdp.transitions @ v
        v_new = alpha * logsumexp(q / alpha, axis=1)
        res = float(np.max(np.abs(v_new - v)))
        residuals.append(res)
        v = v_new
        if res < tol:
            q = mdp.rewards + gamma * mdp.transitions @ v
            return TabularSoftModel(q, alpha * logsumexp(q / alpha, axis=1), alpha, gamma, it, residuals)
    raise ConvergenceError(f"soft value iteration did not converge in {max_iter} sweeps", residuals[-1])


@dataclass
class TabularARSQ:
    value: np.ndarray  # (S,)
    dim_adv: list[np.ndarray]  # dim_adv[d]: (S, B, ..., B) with d+1 action axes
    alpha: float
    steps: int = 0
    max_norm_error: float = 0.0
    losses: list[float] = field(default_factory=list)

    @property
    def dims(self) -> int:
        return len(self.dim_adv)

    @property
    def bins(self) -> int:
        return self.dim_adv[0].shape[1]

    def advantage_sum(self) -> np.ndarray:
        """``sum_d A^d`` for every state and joint action, shape ``(S, B**D)``."""
        S, D = len(self.value), self.dims
        total = np.zeros((S,) + (self.bins,) * D)
        for d, a in enumerate(self.dim_adv):
            total = total + a.reshape(a.shape + (1,) * (D - 1 - d))
        return total.reshape(S, -1)

    def joint_q(self) -> np.ndarray:
        return self.value[:, None] + self.advantage_sum()

    def normalization_error(self) -> float:
        return max(float(np.abs(np.exp(a / self.alpha).sum(axis=-1) - 1.0).max()) for a in self.dim_adv)

    def greedy(self, state: int = 0) -> tuple[int, ...]:
        """Auto-regressive argmax, one dimension at a time."""
        chosen: tuple[int, ...] = ()
        for a in self.dim_adv:
            chosen = chosen + (int(np.argmax(a[(state,) + chosen])),)
        return chosen


def _project(u: np.ndarray, alpha: float) -> np.ndarray:
    # inlined log-sum-exp: this runs every fit step on tiny arrays, where scipy's per-call overhead dominates
    z = u / alpha
    m = z.max(axis=-1, keepdims=True)
    return u - alpha * (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))


def _fit_arsq(n_states: int, dims: int, bins: int, s_idx: np.ndarray, digits: np.ndarray, rewards: np.ndarray,
              next_probs: np.ndarray | None, gamma: float, alpha: float, steps: int, lr: float,
              tol: float, reduction: str = "mean") -> TabularARSQ:
    value = np.zeros(n_states)
    adv = [_project(np.zeros((n_states,) + (bins,) * (d + 1)), alpha) for d in range(dims)]
    n = len(rewards)
    index = [(s_idx,) + tuple(digits[:, j] for j in range(d + 1)) for d in range(dims)]
    losses = []
    norm_err = 0.0
    step = 0
    for step in range(1, steps + 1):
        y = rewards if next_probs is None else rewards + gamma * next_probs @ value
        q = value[s_idx] + sum(a[idx] for a, idx in zip(adv, index))
        err = q - y
        losses.append(0.5 * float(np.mean(err**2)))
        if not np.isfinite(losses[-1]):
            raise ConvergenceError("tabular ARSQ diverged", float("nan"))
        g = err / n if reduction == "mean" else err
        value -= lr * np.bincount(s_idx, g, minlength=n_states)
        for d in range(dims):
            a = adv[d]
            grad_a = np.zeros_like(a)
            np.add.at(grad_a, index[d], g)
            # chain rule through the log-sum-exp normalization: dA/du = I - softmax
            p = np.exp(a / alpha)
            grad_u = grad_a - p * grad_a.sum(axis=-1, keepdims=True)
            adv[d] = _project(a - lr * grad_u, alpha)
        norm_err = max(norm_err, max(float(np.abs(np.exp(a / alpha).sum(-1) - 1.0).max()) for a in adv))
        if step > 1 and np.max(np.abs(err)) < tol:
            break
    return TabularARSQ(value, adv, alpha, step, norm_err, losses)


def tabular_arsq_fit_mdp(mdp: FiniteMDP, alpha: float, gamma: float, steps: int = 20_000, lr: float = 0.1,
                         tol: float = 1e-9) -> TabularARSQ:
    """Gradient descent on the squared soft Bellman error summed over every (state, joint action) entry."""
    S, A = mdp.n_states, mdp.n_actions
    s_idx = np.repeat(np.arange(S), A)
    digits = np.tile(mdp.joint_digits(), (S, 1))
    probs = mdp.transitions.reshape(S * A, S)
    return _fit_arsq(S, mdp.dims, mdp.bins, s_idx, digits, mdp.rewards.reshape(-1), probs, gamma, alpha, steps,
                     lr, tol, reduction="sum")


def _one_step_arrays(data) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    spec = data.spec
    if spec.levels != 1:
        raise ValueError("tabular fits expect a single-level action spec")
    digits = data.digits[:, :, 0]
    return np.zeros(len(data), dtype=np.int64), digits, np.asarray(data.rewards), spec.bins_per_level


def tabular_arsq_fit(data, alpha: float, steps: int = 20_000, lr: float = 0.1, tol: float = 1e-9) -> TabularARSQ:
    """Fit a one-step dataset: ``V + sum_d A^d`` regressed onto observed rewards."""
    s_idx, digits, rewards, bins = _one_step_arrays(data)
    return _fit_arsq(1, digits.shape[1], bins, s_idx, digits, rewards, None, 0.0, alpha, steps, lr, tol)


@dataclass
class TabularIndependent:
    q: np.ndarray  # (S, D, B)
    target: str = "per_dim"
    steps: int = 0

    def joint_q(self) -> np.ndarray:
        """Mean-combined estimate for every joint action, ``(S, B**D)``."""
        S, D, B = self.q.shape
        total = np.zeros((S,) + (B,) * D)
        for d in range(D):
            shape = [S] + [1] * D
            shape[d + 1] = B
            total = total + self.q[:, d, :].reshape(shape)
        return (total / D).reshape(S, -1)

    def greedy(self, state: int = 0) -> tuple[int, ...]:
        return tuple(int(np.argmax(self.q[state, d])) for d in range(self.q.shape[1]))


def tabular_independent_fit(data, steps: int = 20_000, lr: float = 0.1, target: str = "per_dim",
                            tol: float = 1e-10) -> TabularIndependent:
    """Per-dimension tabular Q by gradient descent on a one-step dataset.

    ``per_dim`` regresses each ``q_d(a_d)`` onto the reward on its own;
    ``joint`` regresses the mean ``(1/D) sum_d q_d(a_d)`` onto the reward.
    """
    if target not in ("per_dim", "joint"):
        raise ValueError(f"target must be per_dim or joint, got {target!r}")
    s_idx, digits, rewards, bins = _one_step_arrays(data)
    n, D = digits.shape
    q = np.zeros((1, D, bins))
    step = 0
    for step in range(1, steps + 1):
        picked = np.stack([q[s_idx, d, digits[:, d]] for d in range(D)], axis=1)  # (n, D)
        if target == "per_dim":
            err = picked - rewards[:, None]
        else:
            err = np.repeat((picked.mean(axis=1) - rewards)[:, None] / D, D, axis=1)
        if not np.all(np.isfinite(err)):
            raise ConvergenceError("tabular independent fit diverged", float("nan"))
        grad = np.zeros_like(q)
        for d in range(D):
            np.add.at(grad[:, d, :], (s_idx, digits[:, d]), err[:, d])
        q -= lr * grad / n
        if np.max(np.abs(lr * grad / n)) < tol:
            break
    return TabularIndependent(q, target, step)


def q_landscape_error(q_fn, landscape, n_samples: int = 1000, seed: int = 0) -> float:
    """Mean absolute gap between ``q_fn(actions)`` and the true reward on uniform actions."""
    rng = np.random.default_rng(seed)
    actions = rng.uniform(-1.0, 1.0, (n_samples, 2))
    return float(np.mean(np.abs(np.asarray(q_fn(actions)) - landscape.reward(actions))))
