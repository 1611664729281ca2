"""Masked PPO scheduler with a small numpy MLP and hand-written backprop.

One shared tanh trunk feeds two heads: per-satellite logits over
(NOP, Q, D, QD) and a scalar state value. The joint policy is the product
of the per-satellite categoricals, each renormalised over its feasible
actions only.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from constel.errors import UpdateAbortedError
from constel.resources_env import (
    ConstellationState,
    ResourceEnv,
    Schedule,
    env_reset,
    env_step,
    feasible_mask,
)
from constel.scenario import ResourceScenario

N_ACTIONS = 4
LAYERS = ("W1", "b1", "W2", "b2", "Wp", "bp", "Wv", "bv")


@dataclass
class PpoConfig:
    clip_epsilon: float = 0.2
    discount: float = 0.9
    gae_lambda: float = 0.95
    epochs_per_update: int = 10
    minibatch_size: int = 16
    learning_rate: float = 1e-3
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    train_episodes: int = 20
    hidden: int = 64
    rollout_episodes: int = 1
    reward_scale: float = 0.001
    max_grad_norm: float | None = 0.5

    def validate(self) -> "PpoConfig":
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be > 0")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.epochs_per_update < 1 or self.minibatch_size < 1:
            raise ValueError("epochs_per_update and minibatch_size must be >= 1")
        if self.train_episodes < 0 or self.rollout_episodes < 1:
            raise ValueError("train_episodes must be >= 0 and rollout_episodes >= 1")
        return self


@dataclass
class PolicyParams:
    n_sats: int
    arrays: dict[str, np.ndarray]

    @property
    def hidden(self) -> int:
        return self.arrays["b1"].shape[0]

    @property
    def input_size(self) -> int:
        return self.arrays["W1"].shape[0]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.n_sats, {k: v.copy() for k, v in self.arrays.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def to_dict(self, config: PpoConfig | None = None) -> dict:
        return {
            "n_sats": self.n_sats,
            "layers": {k: {"shape": list(self.arrays[k].shape), "data": self.arrays[k].reshape(-1).tolist()}
                       for k in LAYERS},
            "config": asdict(config) if config is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParams":
        arrays = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["layers"].items()}
        return cls(int(d["n_sats"]), arrays)

    def save(self, path, config: PpoConfig | None = None) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(config)) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "PolicyParams":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def init_params(n_sats: int, hidden: int, rng) -> PolicyParams:
    d_in = 1 + 5 * n_sats
    d_out = N_ACTIONS * n_sats

    def dense(fan_in, fan_out, gain):
        return rng.standard_normal((fan_in, fan_out)) * (gain / np.sqrt(fan_in))

    arrays = {
        "W1": dense(d_in, hidden, 1.0), "b1": np.zeros(hidden),
        "W2": dense(hidden, hidden, 1.0), "b2": np.zeros(hidden),
        "Wp": dense(hidden, d_out, 0.01), "bp": np.zeros(d_out),
        "Wv": dense(hidden, 1, 1.0), "bv": np.zeros(1),
    }
    return PolicyParams(n_sats, arrays)


def encode_state(state: ConstellationState, tau_max: float) -> np.ndarray:
    """[tau/tau_max] followed by (bat, mem, has_AT, has_GS, sun) per satellite."""
    x = np.empty(1 + 5 * len(state.sats))
    x[0] = state.tau_t / tau_max
    for i, o in enumerate(state.sats):
        x[1 + 5 * i:6 + 5 * i] = (o.bat, o.mem, float(o.opp_at > 0), float(o.opp_gs > 0), float(o.sun))
    return x


def state_masks(state: ConstellationState) -> np.ndarray:
    return np.array([feasible_mask(o) for o in state.sats])


def forward(params: PolicyParams, x: np.ndarray):
    """Batched forward pass; returns (logits (B, n, 4), values (B,), cache)."""
    p = params.arrays
    x = np.atleast_2d(x)
    h1 = np.tanh(x @ p["W1"] + p["b1"])
    h2 = np.tanh(h1 @ p["W2"] + p["b2"])
    logits = (h2 @ p["Wp"] + p["bp"]).reshape(x.shape[0], params.n_sats, N_ACTIONS)
    values = (h2 @ p["Wv"] + p["bv"])[:, 0]
    return logits, values, (x, h1, h2)


def masked_softmax(logits: np.ndarray, masks: np.ndarray):
    """(probs, logp) with probabilities exactly 0 off-mask; logp is 0 there."""
    masks = masks.astype(bool)
    shifted = np.where(masks, logits, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.where(masks, np.exp(np.where(masks, shifted, 0.0)), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    probs = e / z
    logp = np.where(masks, np.where(masks, shifted, 0.0) - np.log(z), 0.0)
    return probs, logp


def masked_logits(params: PolicyParams, encoding: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Per-satellite action probabilities (n, 4) for one encoded state."""
    logits, _, _ = forward(params, encoding)
    probs, _ = masked_softmax(logits[0], masks)
    return probs


@dataclass
class Trajectory:
    states: np.ndarray      # (N, D)
    actions: np.ndarray     # (N, n)
    masks: np.ndarray       # (N, n, 4)
    logp: np.ndarray        # (N,)
    rewards: np.ndarray     # (N,)
    values: np.ndarray      # (N,)
    dones: np.ndarray       # (N,)
    episode_rewards: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.rewards)


def _sample(probs: np.ndarray, masks: np.ndarray, rng) -> np.ndarray:
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=-1)
    a = np.argmax(cdf > u[:, None], axis=-1)
    # guard against cdf[-1] rounding just below u
    miss = cdf[np.arange(len(u)), -1] <= u
    if miss.any():
        last = N_ACTIONS - 1 - np.argmax(masks[:, ::-1], axis=-1)
        a = np.where(miss, last, a)
    return a


def collect_rollout(params: PolicyParams, env: ResourceEnv, episodes: int, rng) -> Trajectory:
    tau_max = env.scenario.tau_max
    rows = {k: [] for k in ("states", "actions", "masks", "logp", "rewards", "values", "dones")}
    ep_rewards = []
    for _ in range(episodes):
        state = env.reset()
        total = 0.0
        done = False
        while not done:
            x = encode_state(state, tau_max)
            m = state_masks(state)
            logits, v, _ = forward(params, x)
            probs, logp = masked_softmax(logits[0], m)
            a = _sample(probs, m, rng)
            out = env.step(a.tolist())
            done = out.done
            rows["states"].append(x)
            rows["actions"].append(a)
            rows["masks"].append(m)
            rows["logp"].append(logp[np.arange(len(a)), a].sum())
            rows["rewards"].append(out.total_reward)
            rows["values"].append(v[0])
            rows["dones"].append(done)
            total += out.total_reward
            state = out.next_state
        ep_rewards.append(total)
    return Trajectory(
        np.array(rows["states"]), np.array(rows["actions"], dtype=np.int64),
        np.array(rows["masks"], dtype=bool), np.array(rows["logp"]),
        np.array(rows["rewards"], dtype=np.float64), np.array(rows["values"]),
        np.array(rows["dones"], dtype=bool), ep_rewards,
    )


def compute_gae(traj: Trajectory, discount: float, lam: float, normalize: bool = True, reward_scale: float = 1.0):
    """Generalised advantage estimates and return targets (returns use raw advantages)."""
    r = traj.rewards * reward_scale
    v = traj.values
    N = len(r)
    adv = np.zeros(N)
    last = 0.0
    for t in range(N - 1, -1, -1):
        nonterminal = 0.0 if traj.dones[t] else 1.0
        v_next = v[t + 1] if t + 1 < N else 0.0
        delta = r[t] + discount * v_next * nonterminal - v[t]
        last = delta + discount * lam * nonterminal * last
        adv[t] = last
    returns = adv + v
    if normalize and N > 0:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


def clipped_surrogate(ratio, adv, clip_epsilon):
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv)


def loss_and_grads(params: PolicyParams, batch: dict, config: PpoConfig):
    """PPO loss on a minibatch and its gradient w.r.t. every parameter array."""
    p = params.arrays
    X, A, M = batch["states"], batch["actions"], batch["masks"]
    adv, ret, old = batch["adv"], batch["returns"], batch["logp"]
    B, n = A.shape
    logits, values, (x, h1, h2) = forward(params, X)
    probs, logp = masked_softmax(logits, M)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, A[..., None], 1.0, axis=-1)
    logp_joint = (logp * onehot).sum(axis=(1, 2))
    ratio = np.exp(logp_joint - old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon) * adv
    surr = np.minimum(unclipped, clipped)
    policy_loss = -surr.mean()
    value_loss = np.mean((values - ret) ** 2)
    ent_sat = -(probs * logp).sum(axis=-1)          # (B, n)
    entropy = ent_sat.sum(axis=1).mean()
    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy

    g = np.where(unclipped <= clipped, unclipped, 0.0)   # d surr / d logp_joint
    d_logits = -(g / B)[:, None, None] * (onehot - probs)
    d_logits += (config.entropy_coef / B) * probs * (logp + ent_sat[..., None])
    d_logits = d_logits.reshape(B, -1)
    d_values = (config.value_coef * 2.0 / B) * (values - ret)

    grads = {
        "Wp": h2.T @ d_logits, "bp": d_logits.sum(axis=0),
        "Wv": h2.T @ d_values[:, None], "bv": np.array([d_values.sum()]),
    }
    d_h2 = d_logits @ p["Wp"].T + d_values[:, None] @ p["Wv"].T
    d_z2 = d_h2 * (1.0 - h2 ** 2)
    grads["W2"] = h1.T @ d_z2
    grads["b2"] = d_z2.sum(axis=0)
    d_z1 = (d_z2 @ p["W2"].T) * (1.0 - h1 ** 2)
    grads["W1"] = x.T @ d_z1
    grads["b1"] = d_z1.sum(axis=0)
    diag = {
        "loss": float(loss), "policy_loss": float(policy_loss), "value_loss": float(value_loss),
        "entropy": float(entropy), "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.clip_epsilon)),
        "approx_kl": float(np.mean(old - logp_joint)),
    }
    return float(loss), grads, diag


class Adam:
    def __init__(self, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in LAYERS:
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arrays[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _clip_grads(grads, max_norm):
    if max_norm is None:
        return grads
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads


def ppo_update(params: PolicyParams, traj: Trajectory, config: PpoConfig, optimizer: Adam | None = None,
               rng=None, advantages=None):
    """Clipped-objective epochs over shuffled minibatches; returns (params, mean diagnostics).

    ``params`` is updated in place. Pass ``advantages`` as (adv, returns) to
    skip the internal GAE computation.
    """
    optimizer = optimizer or Adam(config.learning_rate)
    rng = rng if rng is not None else np.random.default_rng(0)
    if advantages is None:
        adv, ret = compute_gae(traj, config.discount, config.gae_lambda, True, config.reward_scale)
    else:
        adv, ret = advantages
    N = len(traj)
    data = {"states": traj.states, "actions": traj.actions, "masks": traj.masks,
            "logp": traj.logp, "adv": adv, "returns": ret}
    diags = []
    for _ in range(config.epochs_per_update):
        order = rng.permutation(N)
        for start in range(0, N, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            batch = {k: v[idx] for k, v in data.items()}
            loss, grads, diag = loss_and_grads(params, batch, config)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise UpdateAbortedError("non-finite PPO loss", diag)
            optimizer.step(params.arrays, _clip_grads(grads, config.max_grad_norm))
            diags.append(diag)
    mean = {k: float(np.mean([d[k] for d in diags])) for k in diags[0]} if diags else {}
    return params, mean


@dataclass
class TrainResult:
    params: PolicyParams
    curve: list[dict]
    config: PpoConfig


def train_scheduler(scenario: ResourceScenario, config: PpoConfig, rng) -> TrainResult:
    """Alternate rollouts and PPO updates for ``config.train_episodes`` iterations.

    Each iteration collects ``config.rollout_episodes`` full passes over the
    scenario. The curve records the mean episode reward of each rollout.
    """
    config.validate()
    params = init_params(scenario.n, config.hidden, rng)
    opt = Adam(config.learning_rate)
    env = ResourceEnv(scenario)
    curve = []
    for it in range(config.train_episodes):
        traj = collect_rollout(params, env, config.rollout_episodes, rng)
        _, diag = ppo_update(params, traj, config, opt, rng)
        curve.append({
            "iteration": it,
            "mean_reward": float(np.mean(traj.episode_rewards)),
            "policy_loss": diag.get("policy_loss", 0.0),
            "value_loss": diag.get("value_loss", 0.0),
            "entropy": diag.get("entropy", 0.0),
        })
    return TrainResult(params, curve, config)


def greedy_schedule(params: PolicyParams, scenario: ResourceScenario) -> Schedule:
    """Deterministic rollout taking each satellite's most probable feasible action."""
    tau_max = scenario.tau_max
    state = env_reset(scenario)
    actions = np.zeros((scenario.n, scenario.T), dtype=np.int64)
    total = 0.0
    for t in range(scenario.T):
        m = state_masks(state)
        probs = masked_logits(params, encode_state(state, tau_max), m)
        a = np.argmax(np.where(m, probs, -1.0), axis=-1)
        actions[:, t] = a
        out = env_step(state, a.tolist(), scenario)
        total += out.total_reward
        state = out.next_state
    return Schedule(actions, total)


def write_curve_csv(curve: list[dict], path) -> Path:
    path = Path(path)
    cols = ["iteration", "mean_reward", "policy_loss", "value_loss", "entropy"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in curve:
            w.writerow([row["iteration"]] + [repr(float(row[c])) for c in cols[1:]])
    return path
