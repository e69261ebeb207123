"""A few consensus rounds on the model-verification ledger.

Stakes are seeded from each base station's data share, producers are
elected by coin-weighted vote and rotate in schedule order. A tampered
model update is caught at validation: the block is still accepted, but
the author earns nothing and the payload never reaches aggregation.
"""

import numpy as np

from dtwn import fl, ledger
from dtwn.network import Association, build_network

net = build_network({"num_bs": 4, "num_users": 8, "num_subchannels": 2,
                     "num_producers": 3,
                     "bs_cpu_freq_ghz": [2.0, 2.4, 2.6, 3.0]})
assoc = Association([10.0] * 8, 4)
for i in range(8):
    assoc.assign(i, i % 4)

led = ledger.Ledger(assoc, net, initial_pool=100.0)
print("initial stakes:", led.stakes.coins, "elected:", led.producers)

# a reference model to verify uploads against
model = fl.LogisticRegression(4, 2)
X, y = fl.make_synthetic_classification(200, 4, 2, seed=0)
w = model.init_params()
for _ in range(30):
    _, g = model.loss_and_grad(w, X, y)
    w -= 0.5 * g

rng = np.random.default_rng(1)
for r in range(3):
    honest = ledger.make_transaction("training-model", 0,
                                     ledger.params_to_bytes(w),
                                     float(r), led.keys[0])
    led.submit(honest)
    if r == 1:   # BS 2 uploads garbage with a perfectly valid signature
        junk = rng.normal(0, 5, w.shape)
        led.submit(ledger.make_transaction("training-model", 2,
                                           ledger.params_to_bytes(junk),
                                           r + 0.1, led.keys[2]))
    p = led.scheduled_producer()
    block = led.produce_block(p)
    accepted, flags, delta = led.validate_block(
        block, verification_context=((X, y), model, w))
    print(f"round {r}: producer {p}, txs {len(block.tx_list)}, "
          f"flags {flags}, rewards {delta}")

print("final stakes:", led.stakes.coins)

# the chain round-trips through its binary export and replays cleanly
import tempfile

with tempfile.NamedTemporaryFile(suffix=".chain") as fh:
    led.export_chain(fh.name)
    blocks = ledger.Ledger.import_chain(fh.name)
head = ledger.replay_chain(blocks)
print("replayed head digest matches:", head == led.blocks[-1].body_digest)
print()
print(led.summary())
