import math

import numpy as np
import pytest

from dtwn.channel import (BandwidthAllocation, ChannelState, constant_channel,
                          downlink_rate, draw_gains, path_loss, uplink_rate)
from dtwn.network import build_network


def make_net(**kw):
    base = {"num_bs": 2, "num_users": 4, "num_subchannels": 1,
            "num_producers": 2, "bs_cpu_freq_ghz": [2.0, 2.0]}
    base.update(kw)
    return build_network(base)


def ch_for(net, up=None, down=None):
    shape = (net.num_bs, net.num_subchannels)
    return ChannelState(
        np.ones(shape) if up is None else np.asarray(up, dtype=float),
        np.ones(shape) if down is None else np.asarray(down, dtype=float),
        net.bs_mbs_distances(),
    )


def test_path_loss_values():
    assert path_loss(1.0, 2.0) == 1.0
    assert path_loss(10.0, 2.0) == pytest.approx(0.01)
    assert path_loss(100.0, 3.5) == pytest.approx(100.0 ** -3.5)


def test_path_loss_rejects_nonpositive():
    with pytest.raises(ValueError):
        path_loss(0.0, 2.0)
    with pytest.raises(ValueError):
        path_loss(-1.0, 2.0)


def test_uplink_zero_allocation():
    net = make_net()
    ch = ch_for(net)
    alloc = BandwidthAllocation(np.zeros((2, 1)))
    assert uplink_rate(0, ch, alloc, net) == 0.0


def test_uplink_unit_snr_30mbit():
    # single BS, full slot, P h r^-a / N0 == 1 -> exactly W log2(2) = 30 Mb/s
    net = make_net(num_bs=1, num_producers=1, bs_cpu_freq_ghz=[2.0],
                   subchannel_bandwidth_hz=30e6)
    ch = ch_for(net)
    # force received power equal to noise power by scaling the gain
    pl = ch.distances[0] ** -net.path_loss_exponent
    ch.uplink_gain[0, 0] = net.noise_power / (net.bs_tx_power * pl)
    alloc = BandwidthAllocation(np.ones((1, 1)))
    assert uplink_rate(0, ch, alloc, net) == pytest.approx(30e6)


def test_uplink_matches_straightline_oracle():
    # experiment constants, one interferer at equal received power
    net = make_net(path_loss_exponent=2.0, bs_tx_power_dbm=34.0,
                   noise_power_dbm=-174.0, subchannel_bandwidth_hz=30e6,
                   bs_ring_radius_m=200.0)
    ch = ch_for(net)
    alloc = BandwidthAllocation(np.array([[0.5], [0.5]]))
    # independent recomputation, straight from the rate formula
    p = 10 ** ((34 - 30) / 10)
    n0 = 10 ** ((-174 - 30) / 10)
    r0, r1 = net.bs_mbs_distances()
    sig = p * 1.0 * r0 ** -2.0
    interf = p * 1.0 * r1 ** -2.0
    expected = 0.5 * 30e6 * math.log2(1 + sig / (interf + n0))
    assert uplink_rate(0, ch, alloc, net) == pytest.approx(expected, rel=1e-12)


def test_uplink_literal_mode_uses_victim_distance():
    net = make_net(bs_ring_radius_m=300.0)
    ch = ch_for(net)
    ch.distances = np.array([100.0, 900.0])
    alloc = BandwidthAllocation(np.array([[1.0], [0.0]]))
    lit = uplink_rate(0, ch, alloc, net, mode="literal")
    cor = uplink_rate(0, ch, alloc, net, mode="corrected")
    # literal re-uses r_0 = 100 m inside the interference sum -> more
    # interference -> lower rate than the distance-corrected form
    assert lit < cor


def test_uplink_additive_over_subchannels():
    net = make_net(num_subchannels=3)
    rng = np.random.default_rng(0)
    ch = ch_for(net, up=rng.exponential(1, (2, 3)))
    tau = rng.uniform(0, 0.5, (2, 3))
    total = uplink_rate(0, ch, BandwidthAllocation(tau), net)
    parts = 0.0
    for c in range(3):
        t = np.zeros_like(tau)
        t[:, c] = tau[:, c]
        parts += uplink_rate(0, ch, BandwidthAllocation(t), net)
    assert total == pytest.approx(parts, rel=1e-12)


def test_uplink_monotone_in_tau_and_gain():
    net = make_net()
    ch = ch_for(net)
    lo = uplink_rate(0, ch, BandwidthAllocation(np.array([[0.3], [0.2]])), net)
    hi = uplink_rate(0, ch, BandwidthAllocation(np.array([[0.6], [0.2]])), net)
    assert hi >= lo
    ch2 = ch_for(net, up=[[2.0], [1.0]])
    assert uplink_rate(0, ch2, BandwidthAllocation(np.array([[0.3], [0.2]])),
                       net) >= lo


def test_interference_monotonicity():
    net = make_net(num_bs=3, num_producers=2, bs_cpu_freq_ghz=[2, 2, 2])
    ch = ch_for(net)
    alloc = BandwidthAllocation(np.full((3, 1), 0.3))
    with_all = uplink_rate(0, ch, alloc, net)
    ch.uplink_sharers = [[0, 1]]   # drop interferer 2
    fewer = uplink_rate(0, ch, alloc, net)
    assert with_all <= fewer


def test_downlink_zero_power():
    net = make_net()
    object.__setattr__(net, "mbs_tx_power", 0.0)
    ch = ch_for(net)
    assert downlink_rate(0, ch, net) == 0.0


def test_downlink_snr3_gives_2w():
    net = make_net(num_bs=1, num_producers=1, bs_cpu_freq_ghz=[2.0],
                   downlink_bandwidth_hz=1e6)
    ch = ch_for(net)
    pl = ch.distances[0] ** -net.path_loss_exponent
    ch.downlink_gain[0, 0] = 3.0 * net.noise_power / (net.mbs_tx_power * pl)
    assert downlink_rate(0, ch, net) == pytest.approx(2e6)


def test_downlink_matches_straightline_oracle():
    net = make_net(mbs_tx_power_dbm=42.0, noise_power_dbm=-174.0,
                   downlink_bandwidth_hz=30e6, bs_ring_radius_m=200.0)
    ch = ch_for(net)
    p = 10 ** ((42 - 30) / 10)
    n0 = 10 ** ((-174 - 30) / 10)
    r0, r1 = net.bs_mbs_distances()
    expected = 30e6 * math.log2(
        1 + p * r0 ** -2 / (p * r1 ** -2 + n0))
    assert downlink_rate(0, ch, net) == pytest.approx(expected, rel=1e-12)


def test_downlink_literal_signal_has_no_path_loss():
    net = make_net()
    ch = ch_for(net)
    assert downlink_rate(0, ch, net, mode="literal") \
        > downlink_rate(0, ch, net, mode="corrected")


def test_allocation_invariants():
    with pytest.raises(ValueError):
        BandwidthAllocation(np.array([[0.7], [0.7]]))
    with pytest.raises(ValueError):
        BandwidthAllocation(np.array([[-0.1], [0.2]]))


def test_draw_gains_modes():
    rng = np.random.default_rng(0)
    g = draw_gains(rng, (1000,), "rayleigh")
    assert np.all(g >= 0)
    assert g.mean() == pytest.approx(1.0, abs=0.1)
    np.testing.assert_array_equal(draw_gains(rng, (3,), "constant"), 1.0)
    with pytest.raises(ValueError):
        draw_gains(rng, (3,), "nakagami")


def test_constant_channel_is_unit():
    net = make_net()
    ch = constant_channel(net)
    assert np.all(ch.uplink_gain == 1.0)
