"""Walk through the pieces of the per-round latency model.

Builds a small network, prices one training round by hand, and shows how
the batch fraction and bandwidth split move each latency component.
"""

import numpy as np

from dtwn.channel import BandwidthAllocation, constant_channel
from dtwn.latency import (block_validation_time, global_iteration_bound,
                          iteration_time, local_training_time,
                          model_broadcast_time, total_objective)
from dtwn.network import Association, build_network

net = build_network({"num_bs": 3, "num_users": 6, "num_subchannels": 2,
                     "num_producers": 2,
                     "bs_cpu_freq_ghz": [2.6, 1.8, 3.6]})

# six twins, two per base station, 100 samples each
assoc = Association([100.0] * 6, 3)
for i in range(6):
    assoc.assign(i, i % 3)

ch = constant_channel(net)
even = BandwidthAllocation(np.full((3, 2), 1.0 / 3))

print("per-BS compute time, full batches:")
for bs in range(3):
    t = local_training_time(bs, assoc, np.ones(6), net)
    print(f"  BS {bs} ({net.bs_cpu_freq[bs] / 1e9:.1f} GHz): {t:.4f} s")

bd = iteration_time(assoc, np.ones(6), ch, even, net, [0, 1],
                    net.block_header_bits + 2 * net.model_size_bits)
print(f"\nfull-batch round: compute {bd.t_local_training:.3f} s, "
      f"transmit {bd.t_param_tx:.3f} s, block {bd.t_block_validation:.3f} s, "
      f"total {bd.t_iteration:.3f} s")

bd_small = iteration_time(assoc, np.full(6, 0.1), ch, even, net, [0, 1],
                          net.block_header_bits + 2 * net.model_size_bits)
print(f"b=0.1 round:      total {bd_small.t_iteration:.3f} s "
      "(compute shrinks, transmit does not)")

# starving a base station of bandwidth blows up its upload time
starved = np.full((3, 2), 1.0 / 3)
starved[0] = 1e-4
starved /= starved.sum(axis=0, keepdims=True)
bd_starved = iteration_time(assoc, np.ones(6), ch,
                            BandwidthAllocation(starved), net, [0, 1],
                            net.block_header_bits + 2 * net.model_size_bits)
print(f"starved BS 0:     total {bd_starved.t_iteration:.3f} s")

print("\nglobal rounds needed vs accuracy target:")
for theta in (0.0, 0.5, 0.9):
    n = global_iteration_bound(theta)
    print(f"  theta_G={theta}: {n} rounds, "
          f"objective {total_objective(theta, bd.t_iteration):.2f} s")
