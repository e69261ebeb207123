"""Per-round latency decomposition and the accuracy-weighted objective.

One round costs: max local training + max model broadcast + block
broadcast + block validation. Local aggregation is computed and reported
but not summed into the round total (it is dominated by the other terms).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dtwn.channel import downlink_rate, uplink_rate


@dataclass
class LatencyBreakdown:
    t_local_training: float    # max_i local training, s
    t_local_agg: float         # max_i local aggregation, s (not summed)
    t_param_tx: float          # max_i model broadcast, s
    t_block_validation: float  # block broadcast + validation, s
    t_iteration: float         # round total, s
    objective: float | None = None   # total / (1 - theta_G)


@dataclass(frozen=True)
class AccuracyTargets:
    theta_local: float = 0.5
    theta_global: float = 0.9
    theta_threshold: float = 0.5
    smoothness: float = 1.0

    def __post_init__(self):
        for name in ("theta_local", "theta_global", "theta_threshold"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.theta_global < self.theta_threshold:
            raise ValueError("theta_global must be >= theta_threshold")


def local_training_time(bs, assoc, batch_fracs, net):
    """One local-iteration training time at a BS, s.

    Sum over its twins of (batch fraction * data size) samples, at
    cycles_per_sample cycles each, on the BS's CPU.
    """
    if not (0 <= bs < net.num_bs):
        raise KeyError(f"unknown BS id {bs}")
    twins = assoc.twins_of(bs)
    samples = sum(batch_fracs[j] * assoc.data_sizes[j] for j in twins)
    return float(samples * net.cycles_per_sample / net.bs_cpu_freq[bs])


def local_aggregation_time(bs, assoc, net):
    """Model aggregation time at a BS: K_i models of |w_g| bits each."""
    k = assoc.twin_count(bs)
    return float(k * net.model_size_bits * net.cycles_per_agg_unit
                 / net.bs_cpu_freq[bs])


def local_iteration_count(theta_local, base=math.e):
    """Local iterations per round: ceil(log(1/theta_local))."""
    if not (0.0 < theta_local < 1.0):
        raise ValueError("theta_local must lie in (0, 1)")
    return max(1, math.ceil(math.log(1.0 / theta_local, base)))


def model_broadcast_time(k, r_up, num_bs, tx_factor, model_size_bits):
    """Time to broadcast a BS's K_i aggregated models to the BS network.

    Broadcast relaying scales the cost by log2(M); a single-BS network
    degenerates to a direct transmission to the MBS.
    """
    if k == 0:
        return 0.0
    if r_up <= 0.0:
        return math.inf   # starved allocation; reward will penalize
    factor = 1.0 if num_bs < 2 else math.log2(num_bs)
    return float(tx_factor * factor * k * model_size_bits / r_up)


def block_validation_time(producers, block_bits, r_down_producer, net):
    """Block broadcast to the producer set plus the slowest validation."""
    producers = list(producers)
    if not producers:
        raise ValueError("producer set must be nonempty")
    if block_bits <= 0:
        raise ValueError("block_bits must be > 0")
    m_p = len(producers)
    if m_p > 1:
        if r_down_producer <= 0.0:
            return math.inf
        bcast = net.tx_factor * math.log2(m_p) * block_bits / r_down_producer
    else:
        bcast = 0.0
    validate = max(block_bits * net.cycles_per_validation_unit
                   / net.validation_freq[i] for i in producers)
    return float(bcast + validate)


def iteration_time(assoc, batch_fracs, ch, alloc, net, producers,
                   block_bits, producer=None, rate_mode="corrected",
                   theta_global=None):
    """Full round latency for the current system state.

    ``producer`` is the BS producing this round's block; defaults to the
    first of ``producers``. Returns a LatencyBreakdown whose components
    can each be recomputed independently from the same inputs.
    """
    producers = list(producers)
    if producer is None:
        producer = producers[0]
    t_cmp = max(local_training_time(i, assoc, batch_fracs, net)
                for i in range(net.num_bs))
    t_la = max(local_aggregation_time(i, assoc, net) for i in range(net.num_bs))
    t_pt = 0.0
    for i in range(net.num_bs):
        k = assoc.twin_count(i)
        r_up = uplink_rate(i, ch, alloc, net, mode=rate_mode)
        t_pt = max(t_pt, model_broadcast_time(
            k, r_up, net.num_bs, net.tx_factor, net.model_size_bits))
    r_down = downlink_rate(producer, ch, net, mode=rate_mode)
    t_bv = block_validation_time(producers, block_bits, r_down, net)
    total = t_cmp + t_pt + t_bv
    obj = None if theta_global is None else total_objective(theta_global, total)
    return LatencyBreakdown(
        t_local_training=t_cmp,
        t_local_agg=t_la,
        t_param_tx=t_pt,
        t_block_validation=t_bv,
        t_iteration=total,
        objective=obj,
    )


def global_iteration_bound(theta_global):
    """Round budget ceil(1 / (1 - theta_global))."""
    if not (0.0 <= theta_global < 1.0):
        raise ValueError("theta_global must lie in [0, 1)")
    # guard against 1/(1-x) landing epsilon above an integer
    return int(math.ceil(1.0 / (1.0 - theta_global) - 1e-9))


def total_objective(theta_global, t_iteration, theta_threshold=0.0):
    """Total learning-time objective T / (1 - theta_global)."""
    if not (theta_threshold <= theta_global < 1.0):
        raise ValueError("theta_global must lie in [theta_threshold, 1)")
    return float(t_iteration / (1.0 - theta_global))
