"""OFDMA uplink/downlink achievable rates between BSs and the MBS.

Interference handling supports two modes:

- ``"corrected"`` (default): each interferer contributes with its own
  path loss r_j^(-alpha).
- ``"literal"``: the victim's distance is reused inside the interference
  sum (and the downlink signal term carries no path loss), reproducing
  the published rate formulas verbatim for conformance tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODES = ("corrected", "literal")


@dataclass
class ChannelState:
    """Block-fading gains plus BS-to-MBS distances.

    ``uplink_sharers[c]`` / ``downlink_sharers[c]`` list the BSs active on
    subchannel c; every listed BS other than the victim interferes.
    """

    uplink_gain: np.ndarray     # (M, C), dimensionless, >= 0
    downlink_gain: np.ndarray   # (M, C)
    distances: np.ndarray       # (M,), m, > 0
    uplink_sharers: list = field(default_factory=list)
    downlink_sharers: list = field(default_factory=list)

    def __post_init__(self):
        if np.any(self.uplink_gain < 0) or np.any(self.downlink_gain < 0):
            raise ValueError("channel gains must be >= 0")
        if np.any(self.distances <= 0):
            raise ValueError("distances must be > 0")
        m, c = self.uplink_gain.shape
        if not self.uplink_sharers:
            self.uplink_sharers = [list(range(m)) for _ in range(c)]
        if not self.downlink_sharers:
            self.downlink_sharers = [list(range(m)) for _ in range(c)]


@dataclass
class BandwidthAllocation:
    """Per-(BS, subchannel) time fractions tau in [0, 1], column sums <= 1."""

    tau: np.ndarray   # (M, C)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        if np.any(self.tau < 0) or np.any(self.tau > 1):
            raise ValueError("tau entries must lie in [0, 1]")
        if np.any(self.tau.sum(axis=0) > 1 + 1e-9):
            raise ValueError("per-subchannel time fractions must sum to <= 1")


def path_loss(r, alpha):
    """Distance-based power attenuation r^(-alpha)."""
    if np.any(np.asarray(r) <= 0):
        raise ValueError("distance must be > 0")
    return np.asarray(r, dtype=float) ** (-alpha)


def draw_gains(rng, shape, fading="rayleigh"):
    """Unit-mean exponential power gains (Rayleigh fading) or constant 1."""
    if fading == "rayleigh":
        return rng.exponential(1.0, size=shape)
    if fading == "constant":
        return np.ones(shape)
    raise ValueError(f"unknown fading law {fading!r}")


def constant_channel(net):
    """Deterministic unit-gain channel for the given network."""
    shape = (net.num_bs, net.num_subchannels)
    return ChannelState(np.ones(shape), np.ones(shape), net.bs_mbs_distances())


def fading_channel(net, rng, fading="rayleigh"):
    shape = (net.num_bs, net.num_subchannels)
    return ChannelState(
        draw_gains(rng, shape, fading),
        draw_gains(rng, shape, fading),
        net.bs_mbs_distances(),
    )


def _check_dims(ch, net, alloc=None):
    m, c = net.num_bs, net.num_subchannels
    if ch.uplink_gain.shape != (m, c):
        raise ValueError("channel state does not match network dimensions")
    if alloc is not None and alloc.tau.shape != (m, c):
        raise ValueError("bandwidth allocation does not match network dimensions")


def uplink_rate(bs, ch, alloc, net, mode="corrected"):
    """Achievable uplink rate from BS `bs` to the MBS, bits/s.

    Per-subchannel SINR uses the BS's own transmit power and gain against
    co-channel interference plus noise; the subchannel contributes its
    time fraction of W^U * log2(1 + SINR).
    """
    _check_dims(ch, net, alloc)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    alpha = net.path_loss_exponent
    own_pl = path_loss(ch.distances[bs], alpha)
    total = 0.0
    for c in range(net.num_subchannels):
        tau = alloc.tau[bs, c]
        if tau == 0.0:
            continue
        signal = net.bs_tx_power * ch.uplink_gain[bs, c] * own_pl
        interf = 0.0
        for j in ch.uplink_sharers[c]:
            if j == bs:
                continue
            pl = own_pl if mode == "literal" else path_loss(ch.distances[j], alpha)
            interf += net.bs_tx_power * ch.uplink_gain[j, c] * pl
        sinr = signal / (interf + net.noise_power)
        total += tau * net.uplink_bandwidth * np.log2(1.0 + sinr)
    return float(total)


def downlink_rate(bs, ch, net, mode="corrected"):
    """MBS broadcast rate towards BS `bs`, bits/s (no time-sharing factor)."""
    _check_dims(ch, net)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    alpha = net.path_loss_exponent
    own_pl = path_loss(ch.distances[bs], alpha)
    total = 0.0
    for c in range(net.num_subchannels):
        signal = net.mbs_tx_power * ch.downlink_gain[bs, c]
        if mode == "corrected":
            signal *= own_pl
        interf = 0.0
        for j in ch.downlink_sharers[c]:
            if j == bs:
                continue
            pl = own_pl if mode == "literal" else path_loss(ch.distances[j], alpha)
            interf += net.mbs_tx_power * ch.downlink_gain[j, c] * pl
        sinr = signal / (interf + net.noise_power)
        total += net.downlink_bandwidth * np.log2(1.0 + sinr)
    return float(total)
