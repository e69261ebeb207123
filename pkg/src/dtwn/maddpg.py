"""Cooperative multi-agent deterministic policy gradients.

Per-BS actor networks map the shared observation to that agent's action
vector; per-BS critics score the observation together with the *joint*
action of all agents. Exploration adds Ornstein-Uhlenbeck noise to actor
outputs; targets are slow copies blended in with a soft-update rate.
Everything runs on float64 numpy with hand-written backprop so gradients
can be finite-difference checked exactly.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


class DenseNet:
    """Fully connected net, rectifier hidden layers, optional tanh output."""

    def __init__(self, sizes, out_activation="linear", seed=0):
        if out_activation not in ("linear", "tanh"):
            raise ValueError("out_activation must be 'linear' or 'tanh'")
        self.sizes = list(sizes)
        self.out_activation = out_activation
        rng = np.random.default_rng(seed)
        self.W = [rng.normal(0, 1.0 / math.sqrt(a), (a, b))
                  for a, b in zip(sizes, sizes[1:])]
        self.b = [np.zeros(b) for b in sizes[1:]]
        self._cache = None

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def forward(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[1]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite network input")
        acts = [x]
        h = x
        last = len(self.W) - 1
        for k, (W, b) in enumerate(zip(self.W, self.b)):
            z = h @ W + b
            if k < last:
                h = relu(z)
            elif self.out_activation == "tanh":
                h = np.tanh(z)
            else:
                h = z
            acts.append(h)
        self._cache = acts
        return h

    def __call__(self, x):
        return self.forward(x)

    def backward(self, dout):
        """Reverse pass for the cached forward; returns (grads, dinput).

        ``grads`` is a list of (dW, db) matching self.W/self.b.
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        acts = self._cache
        dout = np.atleast_2d(np.asarray(dout, dtype=float))
        grads = [None] * len(self.W)
        last = len(self.W) - 1
        delta = dout
        if self.out_activation == "tanh":
            delta = delta * (1.0 - acts[-1] ** 2)
        for k in range(last, -1, -1):
            grads[k] = (acts[k].T @ delta, delta.sum(axis=0))
            if k > 0:
                delta = (delta @ self.W[k].T) * (acts[k] > 0)
        dinput = delta @ self.W[0].T
        return grads, dinput

    def sgd_step(self, grads, lr, ascend=False):
        s = lr if ascend else -lr
        for (dW, db), W, b in zip(grads, self.W, self.b):
            W += s * dW
            b += s * db

    # flat-parameter access for checkpoints and gradient checks ----------

    def flat_params(self):
        return np.concatenate([a.ravel() for pair in zip(self.W, self.b)
                               for a in pair])

    def set_flat_params(self, flat):
        i = 0
        for k in range(len(self.W)):
            for arr in (self.W[k], self.b[k]):
                arr[...] = flat[i: i + arr.size].reshape(arr.shape)
                i += arr.size

    def copy_from(self, other):
        for dst, src in zip(self.W + self.b, other.W + other.b):
            dst[...] = src


class OUNoise:
    """Mean-reverting Gaussian-driven exploration noise."""

    def __init__(self, dim, mu=0.0, theta=0.15, sigma=0.2, dt=1.0, seed=0):
        if theta <= 0 or sigma < 0 or dt <= 0:
            raise ValueError("need theta > 0, sigma >= 0, dt > 0")
        self.mu = mu
        self.theta = theta
        self.sigma = sigma
        self.dt = dt
        self.rng = np.random.default_rng(seed)
        self.x = np.full(dim, float(mu))

    def reset(self):
        self.x[...] = self.mu

    def sample(self):
        self.x = (self.x + self.theta * (self.mu - self.x) * self.dt
                  + self.sigma * math.sqrt(self.dt)
                  * self.rng.standard_normal(len(self.x)))
        return self.x.copy()


class ReplayMemory:
    """Fixed-capacity ring of (obs, joint action, rewards, next obs, done)."""

    def __init__(self, capacity, obs_dim, num_agents, act_dim):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, num_agents, act_dim))
        self.rew = np.zeros((capacity, num_agents))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.head = 0

    def push(self, obs, act, rew, next_obs, done):
        i = self.head
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = done
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng, batch_size):
        """Uniform without replacement within the batch."""
        idx = rng.choice(self.size, size=min(batch_size, self.size),
                         replace=False)
        return (self.obs[idx], self.act[idx], self.rew[idx],
                self.next_obs[idx], self.done[idx])


def clip_grads(grads, max_norm):
    """Scale the whole gradient list so its global norm is <= max_norm."""
    total = math.sqrt(sum(float(np.sum(dW * dW) + np.sum(db * db))
                          for dW, db in grads))
    if total > max_norm > 0:
        s = max_norm / total
        grads = [(dW * s, db * s) for dW, db in grads]
    return grads


@dataclass
class AgentConfig:
    hidden: tuple = (128, 128)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    soft_update_rate: float = 0.01   # beta
    gamma: float = 0.9
    max_grad_norm: float = 10.0

    def __post_init__(self):
        if not (0.0 < self.soft_update_rate <= 1.0):
            raise ValueError("soft_update_rate must lie in (0, 1]")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must lie in [0, 1]")


class Agent:
    """One BS agent: primary/target actor and centralized critic."""

    def __init__(self, obs_dim, act_dim, joint_act_dim, config=None, seed=0):
        cfg = config or AgentConfig()
        self.cfg = cfg
        h = list(cfg.hidden)
        self.actor = DenseNet([obs_dim] + h + [act_dim], "tanh", seed=(seed, 1))
        self.critic = DenseNet([obs_dim + joint_act_dim] + h + [1], "linear",
                               seed=(seed, 2))
        self.target_actor = DenseNet([obs_dim] + h + [act_dim], "tanh",
                                     seed=(seed, 1))
        self.target_critic = DenseNet([obs_dim + joint_act_dim] + h + [1],
                                      "linear", seed=(seed, 2))
        self.target_actor.copy_from(self.actor)
        self.target_critic.copy_from(self.critic)

    def act(self, obs, noise=None):
        """Deterministic policy output, plus OU noise when exploring."""
        a = self.actor(obs)[0]
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("actor produced non-finite action")
        if noise is not None:
            a = a + noise.sample()
        return a

    def soft_update(self, beta=None):
        """theta_target <- beta * theta + (1 - beta) * theta_target."""
        beta = self.cfg.soft_update_rate if beta is None else beta
        if not (0.0 < beta <= 1.0):
            raise ValueError("beta must lie in (0, 1]")
        for tgt, src in ((self.target_actor, self.actor),
                         (self.target_critic, self.critic)):
            for t, p in zip(tgt.W + tgt.b, src.W + src.b):
                t *= (1.0 - beta)
                t += beta * p


def critic_target(agent, batch, target_actions):
    """y = r + gamma * Q_target(s', joint target actions); r at terminals."""
    obs, act, rew_i, next_obs, done = batch
    x = np.concatenate([next_obs, target_actions], axis=1)
    q_next = agent.target_critic(x)[:, 0]
    return rew_i + agent.cfg.gamma * q_next * (~done)


def update_critic(agent, batch, target_actions):
    """One MSE gradient step on the centralized critic; returns pre-step loss."""
    obs, act, rew_i, next_obs, done = batch
    y = critic_target(agent, batch, target_actions)
    x = np.concatenate([obs, act.reshape(len(obs), -1)], axis=1)
    q = agent.critic(x)[:, 0]
    err = q - y
    loss = float(np.mean(err ** 2))
    if not math.isfinite(loss):
        raise FloatingPointError("critic loss diverged")
    dout = (2.0 * err / len(err))[:, None]
    grads, _ = agent.critic.backward(dout)
    agent.critic.sgd_step(clip_grads(grads, agent.cfg.max_grad_norm),
                          agent.cfg.critic_lr)
    return loss


def update_actor(agent, batch, agent_index):
    """Ascend the critic along this agent's action; returns pre-step mean Q."""
    obs, act, _, _, _ = batch
    b = len(obs)
    a_i = agent.actor(obs)
    joint = act.copy()
    joint[:, agent_index, :] = a_i
    x = np.concatenate([obs, joint.reshape(b, -1)], axis=1)
    q = agent.critic(x)
    mean_q = float(q.mean())
    _, dx = agent.critic.backward(np.full((b, 1), 1.0 / b))
    act_dim = a_i.shape[1]
    start = obs.shape[1] + agent_index * act_dim
    da_i = dx[:, start: start + act_dim]
    if not np.all(np.isfinite(da_i)):
        raise FloatingPointError("actor gradient diverged")
    grads, _ = agent.actor.backward(da_i)
    agent.actor.sgd_step(clip_grads(grads, agent.cfg.max_grad_norm),
                         agent.cfg.actor_lr, ascend=True)
    return mean_q


class MaddpgTrainer:
    def __init__(self, env, config=None, seed=0, batch_size=64,
                 replay_capacity=100_000, warmup=200,
                 ou_theta=0.15, ou_sigma=0.2, ou_dt=1.0, sigma_decay=0.995,
                 reward_scale=0.1):
        self.env = env
        self.cfg = config or AgentConfig()
        self.seed = seed
        self.batch_size = batch_size
        self.warmup = warmup
        self.sigma_decay = sigma_decay
        self.reward_scale = reward_scale
        m = env.num_agents
        self.agents = [Agent(env.obs_dim, env.act_dim, m * env.act_dim,
                             self.cfg, seed=(seed, i)) for i in range(m)]
        self.noises = [OUNoise(env.act_dim, theta=ou_theta, sigma=ou_sigma,
                               dt=ou_dt, seed=(seed, 0xB0, i))
                       for i in range(m)]
        self.memory = ReplayMemory(replay_capacity, env.obs_dim, m, env.act_dim)
        self.rng = np.random.default_rng((seed, 0xA0))

    def select_actions(self, obs_vec, explore=True):
        return np.stack([ag.act(obs_vec, self.noises[i] if explore else None)
                         for i, ag in enumerate(self.agents)])

    def _update_all(self):
        if self.memory.size < max(self.batch_size, self.warmup):
            return None, None
        batch = self.memory.sample(self.rng, self.batch_size)
        obs, act, rew, next_obs, done = batch
        target_actions = np.concatenate(
            [ag.target_actor(next_obs) for ag in self.agents], axis=1)
        c_losses, q_means = [], []
        for i, ag in enumerate(self.agents):
            agent_batch = (obs, act, rew[:, i], next_obs, done)
            c_losses.append(update_critic(ag, agent_batch, target_actions))
            q_means.append(update_actor(ag, agent_batch, i))
            ag.soft_update()
        return float(np.mean(c_losses)), float(np.mean(q_means))

    def run_episode(self, explore=True, update=True):
        env = self.env
        obs = env.reset()
        obs_vec = obs.flatten()
        for noise in self.noises:
            noise.reset()
        ep_rewards = np.zeros(env.num_agents)
        times, losses = [], []
        critic_loss = None
        for _ in range(env.horizon):
            act_mat = self.select_actions(obs_vec, explore=explore)
            joint = env.joint_action_from_vectors(act_mat)
            outcome = env.step(joint)
            next_vec = outcome.next_state.flatten()
            self.memory.push(obs_vec, act_mat,
                             outcome.rewards * self.reward_scale, next_vec,
                             outcome.done)
            ep_rewards += outcome.rewards
            times.append(outcome.breakdown.t_iteration)
            losses.append(outcome.global_loss)
            if update:
                critic_loss, _ = self._update_all()
            obs_vec = next_vec
        return {
            "agent_rewards": ep_rewards,
            "mean_iteration_time": float(np.mean(times)),
            "iteration_times": times,
            "global_losses": losses,
            "critic_loss": critic_loss,
        }

    def train(self, episodes, quiet=True, log=None):
        """Run the full training loop; returns one record per episode."""
        history = []
        for ep in range(episodes):
            rec = self.run_episode(explore=True, update=True)
            rec["episode"] = ep
            history.append(rec)
            for noise in self.noises:
                noise.sigma *= self.sigma_decay
            if not quiet and log is not None and ep % 25 == 0:
                log(f"episode {ep}: mean reward "
                    f"{rec['agent_rewards'].mean() / self.env.horizon:.4f}")
        return history

    # checkpointing -------------------------------------------------------

    def save_checkpoint(self, path, config_blob=b""):
        arrays = {"version": np.array([1]),
                  "config_digest": np.frombuffer(
                      hashlib.sha256(config_blob).digest(), dtype=np.uint8)}
        for i, ag in enumerate(self.agents):
            arrays[f"actor_{i}"] = ag.actor.flat_params()
            arrays[f"critic_{i}"] = ag.critic.flat_params()
            arrays[f"target_actor_{i}"] = ag.target_actor.flat_params()
            arrays[f"target_critic_{i}"] = ag.target_critic.flat_params()
        np.savez(path, **arrays)

    def load_checkpoint(self, path):
        data = np.load(path)
        if int(data["version"][0]) != 1:
            raise ValueError("unsupported checkpoint version")
        for i, ag in enumerate(self.agents):
            ag.actor.set_flat_params(data[f"actor_{i}"])
            ag.critic.set_flat_params(data[f"critic_{i}"])
            ag.target_actor.set_flat_params(data[f"target_actor_{i}"])
            ag.target_critic.set_flat_params(data[f"target_critic_{i}"])
