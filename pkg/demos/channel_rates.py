"""How fading and bandwidth shares shape uplink and downlink rates.

Redraws the block-fading channel a few times and shows the achieved
per-BS uplink rate under an even split, then sweeps one base station's
time share on a single subchannel.
"""

import numpy as np

from dtwn.channel import (BandwidthAllocation, downlink_rate, fading_channel,
                          uplink_rate)
from dtwn.network import build_network

net = build_network({"num_bs": 3, "num_users": 6, "num_subchannels": 2,
                     "num_producers": 2, "bs_cpu_freq_ghz": [2.0, 2.0, 2.0]},
                    seed=3)
rng = np.random.default_rng(7)
even = BandwidthAllocation(np.full((3, 2), 1.0 / 3))

print("uplink rate (Mb/s) per BS over 4 fading draws, even split:")
for draw in range(4):
    ch = fading_channel(net, rng)
    rates = [uplink_rate(bs, ch, even, net) / 1e6 for bs in range(3)]
    print(f"  draw {draw}: " + "  ".join(f"{r:7.2f}" for r in rates))

ch = fading_channel(net, np.random.default_rng(0))
print("\nBS 0 uplink vs its share of subchannel 0 (others split the rest):")
for share in (0.05, 0.2, 1.0 / 3, 0.6, 0.9):
    tau = np.full((3, 2), 1.0 / 3)
    tau[:, 0] = [(1 - share) / 2] * 3
    tau[0, 0] = share
    r = uplink_rate(0, ch, BandwidthAllocation(tau), net)
    print(f"  share {share:.2f}: {r / 1e6:8.2f} Mb/s")

print(f"\ndownlink from BS 1 (producer broadcast path): "
      f"{downlink_rate(1, ch, net) / 1e6:.2f} Mb/s")
