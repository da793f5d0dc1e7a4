"""Gaussian MLP actor-critic, PPO with GAE, and the fixed evaluation protocol.

Everything is plain numpy with hand-written backprop so that runs are
bit-reproducible on a single BLAS thread.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from handgrid.envs import CubeEnv

CHECKPOINT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    envs_per_epoch: int = 8
    horizon: int = 16
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    minibatches: int = 4
    update_epochs: int = 4
    entropy_coefficient: float = 0.0
    value_coefficient: float = 2.0
    seed: int = 0
    hidden_sizes: tuple = (256, 128, 64)
    init_log_std: float = 0.0
    max_grad_norm: float = 1.0
    reward_scale: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if not self.clip_ratio > 0:
            raise ValueError("clip_ratio must be > 0")
        if self.epochs < 0 or self.envs_per_epoch < 1 or self.horizon < 1:
            raise ValueError("epochs >= 0, envs_per_epoch >= 1 and horizon >= 1 required")
        if self.minibatches < 1 or self.update_epochs < 0:
            raise ValueError("minibatches >= 1 and update_epochs >= 0 required")


def reach_train_config(epochs=200, seed=0):
    """Settings that learn the 2-link reach toy within a few seconds."""
    return TrainConfig(
        epochs=epochs,
        envs_per_epoch=16,
        horizon=16,
        learning_rate=1e-3,
        update_epochs=8,
        value_coefficient=0.5,
        seed=seed,
        hidden_sizes=(64, 64),
        init_log_std=-1.0,
        reward_scale=1.0,
    )


# -- parameters ---------------------------------------------------------------


def _layer_shapes(sizes):
    return [((a, b), (b,)) for a, b in zip(sizes[:-1], sizes[1:])]


@dataclass
class PolicyParams:
    """All weights live in one flat vector; layers are views into it.

    Layout: actor (W, b) per layer, then log_std, then critic (W, b) per layer.
    """

    actor_sizes: tuple
    critic_sizes: tuple
    vector: np.ndarray

    def __post_init__(self):
        self.actor_sizes = tuple(int(s) for s in self.actor_sizes)
        self.critic_sizes = tuple(int(s) for s in self.critic_sizes)
        self.vector = np.asarray(self.vector, dtype=float)
        if self.vector.shape != (param_count(self.actor_sizes, self.critic_sizes),):
            raise ValueError("parameter vector does not match layer sizes")
        if self.actor_sizes[0] != self.critic_sizes[0] or self.critic_sizes[-1] != 1:
            raise ValueError("critic must share the actor input and output a scalar")
        self.actor, off = _views(self.vector, self.actor_sizes, 0)
        self.log_std = self.vector[off : off + self.act_dim]
        self.critic, _ = _views(self.vector, self.critic_sizes, off + self.act_dim)

    @property
    def obs_dim(self):
        return self.actor_sizes[0]

    @property
    def act_dim(self):
        return self.actor_sizes[-1]

    def with_vector(self, vector):
        return PolicyParams(self.actor_sizes, self.critic_sizes, np.array(vector, dtype=float))

    def copy(self):
        return self.with_vector(self.vector)


def param_count(actor_sizes, critic_sizes):
    n = sum(a * b + b for a, b in zip(actor_sizes[:-1], actor_sizes[1:]))
    n += actor_sizes[-1]
    n += sum(a * b + b for a, b in zip(critic_sizes[:-1], critic_sizes[1:]))
    return n


def _views(vec, sizes, off):
    layers = []
    for (ws, bs) in _layer_shapes(sizes):
        n = ws[0] * ws[1]
        w = vec[off : off + n].reshape(ws)
        off += n
        b = vec[off : off + bs[0]]
        off += bs[0]
        layers.append((w, b))
    return layers, off


def init_policy(obs_dim, act_dim, hidden_sizes=(256, 128, 64), seed=0, init_log_std=0.0):
    actor_sizes = (obs_dim, *hidden_sizes, act_dim)
    critic_sizes = (obs_dim, *hidden_sizes, 1)
    params = PolicyParams(actor_sizes, critic_sizes, np.zeros(param_count(actor_sizes, critic_sizes)))
    rng = np.random.default_rng(seed)
    for layers, out_gain in ((params.actor, 0.01), (params.critic, 1.0)):
        for i, (w, _) in enumerate(layers):
            gain = out_gain if i == len(layers) - 1 else math.sqrt(2.0)
            w[...] = rng.normal(0.0, gain / math.sqrt(w.shape[0]), w.shape)
    params.log_std[...] = init_log_std
    return params


# -- network ------------------------------------------------------------------


def _elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _mlp_forward(layers, x):
    hs, zs = [x], []
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        zs.append(z)
        h = z if i == len(layers) - 1 else _elu(z)
        hs.append(h)
    return h, (hs, zs)


def _mlp_backward(layers, cache, dout, grads):
    hs, zs = cache
    d = dout
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw, gb = grads[i]
        gw += hs[i].T @ d
        gb += d.sum(axis=0)
        if i > 0:
            d = (d @ w.T) * np.where(zs[i - 1] > 0, 1.0, np.exp(np.minimum(zs[i - 1], 0.0)))


def _check_obs(params, obs):
    obs = np.asarray(obs, dtype=float)
    if obs.shape[-1:] != (params.obs_dim,):
        raise ValueError(f"observation has shape {obs.shape}, policy expects (..., {params.obs_dim})")
    return obs


def policy_forward(params, obs):
    """Return (action mean, action std, value) for one or a batch of observations."""
    obs = _check_obs(params, obs)
    x = obs.reshape(-1, params.obs_dim)
    mean, _ = _mlp_forward(params.actor, x)
    value, _ = _mlp_forward(params.critic, x)
    std = np.exp(params.log_std)
    lead = obs.shape[:-1]
    return mean.reshape(lead + (params.act_dim,)), np.broadcast_to(std, lead + (params.act_dim,)).copy(), value.reshape(lead)


def gaussian_log_prob(actions, mean, log_std):
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * LOG_2PI


# -- rollouts and GAE ---------------------------------------------------------


@dataclass
class RolloutBuffer:
    """Arrays indexed (step, env, ...)."""

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.observations)
        for name in ("actions", "log_probs", "values", "rewards", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"buffer field '{name}' length differs from observations")


def gae(buffer, gamma, lam):
    """Generalized advantage estimates and returns; the buffer is updated in place too."""
    r = np.asarray(buffer.rewards, dtype=float)
    v = np.asarray(buffer.values, dtype=float)
    notdone = 1.0 - np.asarray(buffer.dones, dtype=float)
    next_v = np.asarray(buffer.last_values, dtype=float) * np.ones_like(v[0])
    adv = np.zeros_like(v)
    running = np.zeros_like(v[0])
    for t in range(len(r) - 1, -1, -1):
        delta = r[t] + gamma * next_v * notdone[t] - v[t]
        running = delta + gamma * lam * notdone[t] * running
        adv[t] = running
        next_v = v[t]
    buffer.advantages = adv
    buffer.returns = adv + v
    return adv, buffer.returns


# -- loss and update ----------------------------------------------------------


def ppo_loss_and_grad(params, obs, actions, old_log_probs, advantages, returns, cfg):
    """Clipped-surrogate PPO loss (to minimize) and its gradient w.r.t. ``params.vector``.

    The report splits out the policy-gradient component ``pg_grad`` so callers can
    inspect it separately from the value and entropy parts.
    """
    n = len(obs)
    mean, a_cache = _mlp_forward(params.actor, obs)
    value, c_cache = _mlp_forward(params.critic, obs)
    value = value[:, 0]
    log_std = params.log_std
    inv_std = np.exp(-log_std)
    logp = gaussian_log_prob(actions, mean, log_std)
    ratio = np.exp(logp - old_log_probs)
    eps = cfg.clip_ratio
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    surr = np.minimum(ratio * advantages, clipped * advantages)
    pg_loss = -np.mean(surr)
    value_loss = np.mean((value - returns) ** 2)
    entropy = float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + LOG_2PI))
    loss = pg_loss + cfg.value_coefficient * value_loss - cfg.entropy_coefficient * entropy

    # d surr / d ratio is A on the unclipped branch and 0 where the clipped branch is the min
    active = ratio * advantages <= clipped * advantages
    dlogp = -np.where(active, advantages, 0.0) * ratio / n
    z = (actions - mean) * inv_std
    dmean = dlogp[:, None] * z * inv_std

    pg_grad = params.with_vector(np.zeros_like(params.vector))
    _mlp_backward(params.actor, a_cache, dmean, pg_grad.actor)
    pg_grad.log_std[...] = dlogp @ (z * z - 1.0)

    grad = pg_grad.copy()
    grad.log_std[...] -= cfg.entropy_coefficient
    dvalue = (cfg.value_coefficient * 2.0 / n) * (value - returns)
    _mlp_backward(params.critic, c_cache, dvalue[:, None], grad.critic)

    report = {
        "loss": float(loss),
        "policy_loss": float(pg_loss),
        "value_loss": float(value_loss),
        "entropy": entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > eps)),
        "pg_grad": pg_grad.vector,
    }
    return float(loss), grad.vector, report


class Adam:
    def __init__(self, size, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x, g):
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * g
        self.v = self.b2 * self.v + (1.0 - self.b2) * g * g
        mhat = self.m / (1.0 - self.b1**self.t)
        vhat = self.v / (1.0 - self.b2**self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def ppo_update(params, buffer, cfg, optimizer=None, rng=None):
    """Run ``update_epochs`` passes of shuffled minibatch PPO steps.

    Returns (new params, report with per-minibatch mean losses). Advantages are
    normalized over the whole buffer once, before any step.
    """
    if buffer.advantages is None:
        raise ValueError("buffer has no advantages; call gae() first")
    optimizer = optimizer or Adam(params.vector.size, cfg.learning_rate)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    obs = np.asarray(buffer.observations, dtype=float).reshape(-1, params.obs_dim)
    act = np.asarray(buffer.actions, dtype=float).reshape(-1, params.act_dim)
    old = np.asarray(buffer.log_probs, dtype=float).reshape(-1)
    adv = np.asarray(buffer.advantages, dtype=float).reshape(-1)
    ret = np.asarray(buffer.returns, dtype=float).reshape(-1)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = len(obs)
    vec = params.vector.copy()
    sums, count = {}, 0
    for _ in range(cfg.update_epochs):
        order = rng.permutation(n)
        for idx in np.array_split(order, cfg.minibatches):
            if len(idx) == 0:
                continue
            current = params.with_vector(vec)
            loss, grad, rep = ppo_loss_and_grad(current, obs[idx], act[idx], old[idx], adv[idx], ret[idx], cfg)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise FloatingPointError(
                    f"non-finite PPO loss {loss} (policy {rep['policy_loss']}, value {rep['value_loss']})"
                )
            gnorm = float(np.linalg.norm(grad))
            if cfg.max_grad_norm and gnorm > cfg.max_grad_norm:
                grad = grad * (cfg.max_grad_norm / gnorm)
            vec = optimizer.step(vec, grad)
            for k in ("loss", "policy_loss", "value_loss", "entropy", "clip_fraction"):
                sums[k] = sums.get(k, 0.0) + rep[k]
            count += 1
    report = {k: v / count for k, v in sums.items()} if count else {}
    return params.with_vector(vec), report


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class Checkpoint:
    epoch: int | None
    mean_reward: float
    params: PolicyParams


@dataclass
class TrainResult:
    curve: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    @property
    def best(self):
        return self.checkpoints[-1]


def _reset_seed(train_seed, env_index, episode):
    return [int(train_seed), int(env_index), int(episode)]


def train(model, task_cfg, physics_cfg, train_cfg, env_factory=None, progress=None):
    """PPO training; returns the reward curve and best-reward checkpoint history.

    ``env_factory(env_index)`` builds one environment (default: CubeEnv for
    ``model``). Curve rows are (epoch, mean step reward, mean consecutive
    successes at the end of the rollout). The params that produced the best
    rollout so far are checkpointed; the initial params are always the first
    checkpoint.
    """
    if env_factory is None:

        def env_factory(i):
            return CubeEnv(model, task_cfg, physics_cfg)

    with threadpool_limits(1):
        envs = [env_factory(i) for i in range(train_cfg.envs_per_epoch)]
        obs_dim, act_dim = envs[0].obs_dim, envs[0].act_dim
        params = init_policy(obs_dim, act_dim, train_cfg.hidden_sizes, train_cfg.seed, train_cfg.init_log_std)
        result = TrainResult(checkpoints=[Checkpoint(None, -math.inf, params)])
        if train_cfg.epochs == 0:
            return result
        optimizer = Adam(params.vector.size, train_cfg.learning_rate)
        sample_rng = np.random.default_rng([train_cfg.seed, 1])
        update_rng = np.random.default_rng([train_cfg.seed, 2])
        episodes = [0] * len(envs)
        obs = np.stack([env.reset(_reset_seed(train_cfg.seed, i, 0)) for i, env in enumerate(envs)])
        successes = np.zeros(len(envs))
        T, E = train_cfg.horizon, len(envs)
        for epoch in range(train_cfg.epochs):
            buf = {
                "observations": np.empty((T, E, obs_dim)),
                "actions": np.empty((T, E, act_dim)),
                "log_probs": np.empty((T, E)),
                "values": np.empty((T, E)),
                "rewards": np.empty((T, E)),
                "dones": np.empty((T, E)),
            }
            raw_rewards = np.empty((T, E))
            for t in range(T):
                mean, std, value = policy_forward(params, obs)
                act = mean + std * sample_rng.standard_normal(mean.shape)
                buf["observations"][t] = obs
                buf["actions"][t] = act
                buf["log_probs"][t] = gaussian_log_prob(act, mean, params.log_std)
                buf["values"][t] = value
                for i, env in enumerate(envs):
                    o, r, term, trunc, info = env.step(act[i])
                    raw_rewards[t, i] = r
                    successes[i] = info.get("consecutive_successes", 0)
                    done = term or trunc
                    buf["dones"][t, i] = float(done)
                    if done:
                        episodes[i] += 1
                        o = env.reset(_reset_seed(train_cfg.seed, i, episodes[i]))
                    obs[i] = o
            buf["rewards"][...] = train_cfg.reward_scale * raw_rewards
            _, _, last_v = policy_forward(params, obs)
            mean_reward = float(raw_rewards.mean())
            mean_succ = float(successes.mean())
            if not math.isfinite(mean_reward):
                raise FloatingPointError(f"non-finite mean reward at epoch {epoch}")
            result.curve.append((epoch, mean_reward, mean_succ))
            if mean_reward > result.best.mean_reward:
                result.checkpoints.append(Checkpoint(epoch, mean_reward, params))
            buffer = RolloutBuffer(last_values=last_v, **buf)
            gae(buffer, train_cfg.gamma, train_cfg.gae_lambda)
            params, report = ppo_update(params, buffer, train_cfg, optimizer, update_rng)
            if progress is not None:
                progress(epoch, mean_reward, mean_succ, report)
    return result


# -- evaluation ---------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeResult:
    consecutive_successes: int
    fell: bool
    steps: int


def episode_goal_slices(goal_sequence, n_episodes, goals_per_episode):
    """Split one global sequence into per-episode (initial orientation, goals) pairs."""
    k = goals_per_episode + 1
    goal_sequence = np.asarray(goal_sequence, dtype=float)
    if len(goal_sequence) < n_episodes * k:
        raise ValueError(
            f"goal sequence has {len(goal_sequence)} orientations; {n_episodes} episodes need {n_episodes * k}"
        )
    return [(goal_sequence[i * k], goal_sequence[i * k + 1 : (i + 1) * k]) for i in range(n_episodes)]


def evaluate_policy(
    params,
    model,
    task_cfg,
    goal_sequence,
    n_episodes=100,
    episode_steps=600,
    physics_cfg=None,
    goals_per_episode=64,
    env_factory=None,
):
    """Deterministic (mean-action) rollouts over fixed goal slices.

    ``env_factory(episode_index, initial_orientation, goals)`` may replace the
    default CubeEnv, e.g. with a scripted stub.
    """
    task_cfg = dataclasses.replace(task_cfg, episode_length=episode_steps)
    if env_factory is None:

        def env_factory(i, init, goals):
            return CubeEnv(model, task_cfg, physics_cfg, initial_orientation=init, goals=goals)

    results = []
    with threadpool_limits(1):
        for i, (init, goals) in enumerate(episode_goal_slices(goal_sequence, n_episodes, goals_per_episode)):
            env = env_factory(i, init, goals)
            obs = env.reset(i)
            count, fell, steps = 0, False, 0
            for steps in range(1, episode_steps + 1):
                mean, _, _ = policy_forward(params, obs)
                obs, _, term, trunc, info = env.step(mean)
                count = int(info["consecutive_successes"])
                if term:
                    fell = True
                    break
                if trunc:
                    break
            results.append(EpisodeResult(count, fell, steps))
    return results


# -- checkpoint files ---------------------------------------------------------


def save_checkpoint(path, params, train_cfg=None, manifest_hash=None, extra=None):
    doc = {
        "format": "handgrid-policy",
        "version": CHECKPOINT_VERSION,
        "actor_sizes": list(params.actor_sizes),
        "critic_sizes": list(params.critic_sizes),
        "weights": params.vector.tolist(),
        "log_std": params.log_std.tolist(),
        "train_config": None if train_cfg is None else dataclasses.asdict(train_cfg),
        "manifest_hash": manifest_hash,
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Return (PolicyParams, metadata dict)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "handgrid-policy" or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} handgrid policy checkpoint")
    params = PolicyParams(tuple(doc["actor_sizes"]), tuple(doc["critic_sizes"]), np.array(doc["weights"]))
    meta = {k: v for k, v in doc.items() if k not in ("weights",)}
    return params, meta
