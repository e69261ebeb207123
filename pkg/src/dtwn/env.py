"""Multi-agent MDP wrapper around the simulator.

Each BS is an agent. A joint action carries, per agent, association
scores for every twin, per-twin batch fractions, and per-subchannel
bandwidth time-shares. Raw actions are projected onto the feasible set
(one BS per twin, clamped batch fractions, subchannel time-shares
normalized to sum one) before they touch the simulator. Each step runs
one federated round and one ledger round, prices the round with the
latency model, and pays out the negative iteration time as reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dtwn import fl, ledger as ledger_mod
from dtwn.channel import BandwidthAllocation, constant_channel, fading_channel
from dtwn.latency import iteration_time
from dtwn.network import Association


@dataclass
class EnvState:
    cpu_freq: np.ndarray      # (M,) Hz
    twin_counts: np.ndarray   # (M,)
    data_sizes: np.ndarray    # (N,)
    gains: np.ndarray         # (M, C) uplink gains

    def flatten(self):
        """Normalized observation vector shared by all agents."""
        d_max = max(1.0, float(self.data_sizes.max()))
        n = max(1, len(self.data_sizes))
        return np.concatenate([
            self.cpu_freq / 4e9,
            self.twin_counts / n,
            self.data_sizes / d_max,
            self.gains.ravel() / 2.0,
        ])


@dataclass
class JointAction:
    """Stacked per-agent actions: one row per BS."""

    assoc_scores: np.ndarray      # (M, N)
    batch_fracs: np.ndarray       # (M, N)
    bandwidth_shares: np.ndarray  # (M, C)

    def copy(self):
        return JointAction(self.assoc_scores.copy(), self.batch_fracs.copy(),
                           self.bandwidth_shares.copy())


@dataclass
class StepOutcome:
    next_state: EnvState
    rewards: np.ndarray
    breakdown: object
    done: bool
    global_loss: float


class DtwnEnv:
    def __init__(self, net, twins, task, seed=0, horizon=20,
                 b_min=0.1, b_max=1.0, fading="rayleigh",
                 reward_mode="shared", rate_mode="corrected",
                 hold_channel=False, ledger_enabled=True, holdout=None,
                 initial_pool=100.0, reward_coins=1.0,
                 verification_threshold=1.05, block_interval_multiplier=1):
        if not (0 < b_min <= b_max <= 1):
            raise ValueError("need 0 < b_min <= b_max <= 1")
        if reward_mode not in ("shared", "per-agent"):
            raise ValueError("reward_mode must be 'shared' or 'per-agent'")
        self.net = net
        self.twins = twins
        self.task = task
        self.seed = seed
        self.horizon = horizon
        self.b_min, self.b_max = b_min, b_max
        self.fading = fading
        self.reward_mode = reward_mode
        self.rate_mode = rate_mode
        self.hold_channel = hold_channel
        self.ledger_enabled = ledger_enabled
        self.holdout = holdout
        self.ledger_opts = dict(initial_pool=initial_pool,
                                reward_coins=reward_coins,
                                verification_threshold=verification_threshold)
        self.block_interval_multiplier = block_interval_multiplier
        self.num_agents = net.num_bs
        self._episode_index = -1
        self.obs_dim = net.num_bs * 2 + net.num_users + net.num_bs * net.num_subchannels
        # per agent: association scores | batch fractions | bandwidth shares
        self.act_dim = net.num_users * 2 + net.num_subchannels
        self.reset()

    # lifecycle ----------------------------------------------------------

    def reset(self, seed=None):
        if seed is not None:
            self.seed = seed
            self._episode_index = -1
        self._episode_index += 1
        # fresh but reproducible fading stream per episode
        self._rng = np.random.default_rng((self.seed, 0xE1, self._episode_index))
        sizes = [t.data_size for t in self.twins]
        self.assoc = Association(sizes, self.net.num_bs)
        for i in range(len(self.twins)):
            self.assoc.assign(i, i % self.net.num_bs)
        self.global_w = self.task.model.init_params(
            np.random.default_rng((self.seed, 0xF1)))
        self.ledger = None
        if self.ledger_enabled:
            self.ledger = ledger_mod.Ledger(self.assoc, self.net,
                                            **self.ledger_opts)
        self.step_count = 0
        self._round_seed = 0
        self._draw_channel()
        return self.observe()

    def _draw_channel(self):
        if self.fading == "constant":
            self.channel = constant_channel(self.net)
        else:
            self.channel = fading_channel(self.net, self._rng, self.fading)

    # observation --------------------------------------------------------

    def observe(self):
        return EnvState(
            cpu_freq=self.net.bs_cpu_freq.copy(),
            twin_counts=self.assoc.twin_counts().astype(float),
            data_sizes=np.array([t.data_size for t in self.twins], dtype=float),
            gains=self.channel.uplink_gain.copy(),
        )

    # actions ------------------------------------------------------------

    def action_from_vector(self, vec):
        """Map one agent's squashed (-1, 1) policy output onto action parts."""
        n, c = self.net.num_users, self.net.num_subchannels
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.act_dim,):
            raise ValueError(f"expected action vector of length {self.act_dim}")
        scores = vec[:n]
        fracs = self.b_min + (vec[n:2 * n] + 1.0) / 2.0 * (self.b_max - self.b_min)
        shares = (vec[2 * n:] + 1.0) / 2.0
        return scores, fracs, shares

    def joint_action_from_vectors(self, mat):
        parts = [self.action_from_vector(row) for row in mat]
        return JointAction(
            assoc_scores=np.stack([p[0] for p in parts]),
            batch_fracs=np.stack([p[1] for p in parts]),
            bandwidth_shares=np.stack([p[2] for p in parts]),
        )

    def project_action(self, raw):
        """Project a raw joint action onto the feasible set.

        Twin i goes to the agent with the highest score for it (ties to
        the lower BS id); batch fractions clamp to [b_min, b_max]; each
        subchannel's shares are clipped at zero and renormalized to sum
        exactly one (uniform if the column vanishes).
        """
        for arr in (raw.assoc_scores, raw.batch_fracs, raw.bandwidth_shares):
            if not np.all(np.isfinite(arr)):
                raise ValueError("raw action contains non-finite entries")
        out = raw.copy()
        out.batch_fracs = np.clip(out.batch_fracs, self.b_min, self.b_max)
        shares = np.clip(out.bandwidth_shares, 0.0, None)
        sums = shares.sum(axis=0)
        for c in range(shares.shape[1]):
            if sums[c] <= 0.0:
                shares[:, c] = 1.0 / shares.shape[0]
            else:
                shares[:, c] /= sums[c]
        out.bandwidth_shares = shares
        return out

    def _apply(self, action):
        """Write a projected joint action into association/batch/allocation."""
        owner = action.assoc_scores.argmax(axis=0)   # ties -> lower BS id
        for i, bs in enumerate(owner):
            self.assoc.assign(i, int(bs))
        batch = np.array([action.batch_fracs[owner[i], i]
                          for i in range(len(owner))])
        alloc = BandwidthAllocation(action.bandwidth_shares)
        return owner, batch, alloc

    # dynamics -----------------------------------------------------------

    def _ledger_round(self, bs_models, state_digest):
        """Record the round on-chain; returns verified per-BS payloads."""
        led = self.ledger
        t0 = float(self.step_count)
        for bs in range(self.net.num_bs):
            tx = ledger_mod.make_transaction(
                "twin-data", bs, state_digest.encode(), t0 + bs * 1e-6,
                led.keys[bs])
            led.submit(tx)
        for bs, (w, _) in bs_models.items():
            tx = ledger_mod.make_transaction(
                "training-model", bs, ledger_mod.params_to_bytes(w),
                t0 + 1e-3 + bs * 1e-6, led.keys[bs])
            led.submit(tx)
        producer = led.scheduled_producer()
        block = led.produce_block(producer)
        ctx = None
        if self.holdout is not None:
            ctx = (self.holdout, self.task.model, self.global_w)
        led.validate_block(block, verification_context=ctx)
        verified = led.verified_training_payloads(block)
        return producer, block, verified

    def step(self, raw_action):
        """Project, run one federated + ledger round, price it, pay reward."""
        action = self.project_action(raw_action)
        owner, batch, alloc = self._apply(action)

        # local training and BS-level aggregation
        task = self.task
        round_task = fl.TrainingTask(task.model, task.learning_rate,
                                     task.theta_local,
                                     seed=task.seed * 1_000_003 + self._round_seed,
                                     aggregation_mode="normalized")
        self._round_seed += 1
        bs_models = {}
        for bs in range(self.net.num_bs):
            members = self.assoc.twins_of(bs)
            local = [(fl.local_train(self.twins[j], self.global_w, round_task,
                                     batch[j])[0], self.twins[j].data_size)
                     for j in members if self.twins[j].data_size > 0]
            if local:
                bs_models[bs] = (fl.bs_aggregate(local, "normalized"),
                                 sum(d for _, d in local))

        producers = list(range(self.net.num_producers))
        producer = producers[0]
        block_bits = self.net.block_header_bits + len(bs_models) * self.net.model_size_bits
        if self.ledger_enabled:
            state_digest = ledger_mod._digest(
                np.ascontiguousarray(action.assoc_scores).tobytes(),
                np.ascontiguousarray(batch).tobytes())
            producers = self.ledger.producers
            producer, block, verified = self._ledger_round(bs_models, state_digest)
            block_bits = self.net.block_header_bits + sum(
                self.net.model_size_bits if tx.kind == "training-model"
                else tx.payload_bits for tx in block.tx_list)
            # only verified models enter global aggregation
            agg_in = [(verified[bs], bs_models[bs][1]) for bs in verified]
        else:
            agg_in = [(w, d) for w, d in bs_models.values()]
        if agg_in:
            self.global_w = fl.global_aggregate(agg_in, "normalized")
        loss = fl.global_loss(self.global_w, self.twins, task.model)

        breakdown = iteration_time(self.assoc, batch, self.channel, alloc,
                                   self.net, producers, block_bits,
                                   producer=producer, rate_mode=self.rate_mode)
        rewards = self.reward(breakdown, batch, alloc, producer, producers,
                              block_bits)
        self.step_count += 1
        if not self.hold_channel:
            self._draw_channel()
        return StepOutcome(
            next_state=self.observe(),
            rewards=rewards,
            breakdown=breakdown,
            done=self.step_count >= self.horizon,
            global_loss=loss,
        )

    def reward(self, breakdown, batch=None, alloc=None, producer=None,
               producers=None, block_bits=None):
        """Negative iteration time, shared across agents by default."""
        m = self.num_agents
        if self.reward_mode == "shared" or batch is None:
            return np.full(m, -breakdown.t_iteration)
        from dtwn.channel import uplink_rate
        from dtwn.latency import (block_validation_time, downlink_rate,
                                  local_training_time, model_broadcast_time)
        shared = breakdown.t_block_validation
        out = np.empty(m)
        for i in range(m):
            t_cmp = local_training_time(i, self.assoc, batch, self.net)
            r_up = uplink_rate(i, self.channel, alloc, self.net,
                               mode=self.rate_mode)
            t_pt = model_broadcast_time(self.assoc.twin_count(i), r_up,
                                        self.net.num_bs, self.net.tx_factor,
                                        self.net.model_size_bits)
            out[i] = -(t_cmp + t_pt + shared)
        return out

    def check_feasible(self, action, atol=1e-9):
        """Debug validator for a projected joint action."""
        owner = action.assoc_scores.argmax(axis=0)
        ok_assoc = len(owner) == self.net.num_users
        ok_batch = bool(np.all(action.batch_fracs >= self.b_min - atol)
                        and np.all(action.batch_fracs <= self.b_max + atol))
        ok_tau = bool(np.all(action.bandwidth_shares.sum(axis=0) <= 1 + atol))
        return ok_assoc and ok_batch and ok_tau


def discounted_return(rewards, gamma):
    """Sum of gamma^t * r_t over an episode."""
    if not (0.0 <= gamma <= 1.0):
        raise ValueError("gamma must lie in [0, 1]")
    return float(sum(g * r for g, r in
                     zip(np.power(gamma, np.arange(len(rewards))), rewards)))
