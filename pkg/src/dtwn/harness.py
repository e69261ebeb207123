"""Experiment driver: configs, baselines, metrics, CSV emission.

Every run is fully determined by its config + seed; all emitted CSVs are
byte-identical across reruns except ``wallclock.csv``, which records real
measured per-episode times and is therefore excluded from the
reproducibility guarantee.
"""

from __future__ import annotations

import copy
import math
import time
from pathlib import Path

import numpy as np
import yaml

from dtwn import fl
from dtwn.env import DtwnEnv, JointAction
from dtwn.maddpg import AgentConfig, MaddpgTrainer
from dtwn.network import ConfigError, build_network

DEFAULT_CONFIG = {
    "network": {},   # dtwn.network defaults
    "fl": {
        "model": "logistic",
        "num_features": 8,
        "num_classes": 2,
        "samples_per_twin": 50,
        "learning_rate": 0.5,
        "theta_local": 0.5,
        "separation": 2.0,
        "holdout_samples": 200,
    },
    "env": {
        "horizon": 20,
        "b_min": 0.1,
        "b_max": 1.0,
        "fading": "rayleigh",
        "reward_mode": "shared",
        "ledger": True,
        "verification_threshold": 1.05,
        "reward_coins": 1.0,
        "initial_pool": 100.0,
    },
    "targets": {
        "theta_global": 0.9,
        "theta_threshold": 0.5,
    },
    "maddpg": {
        "hidden": [64, 64],
        "actor_lr": 1e-4,
        "critic_lr": 1e-3,
        "soft_update_rate": 0.01,
        "gamma": 0.9,
        "batch_size": 64,
        "replay_capacity": 100000,
        "warmup": 200,
        "ou_theta": 0.15,
        "ou_sigma": 0.2,
        "sigma_decay": 0.995,
    },
    "experiment": {
        "episodes": 500,
        "eval_episodes": 50,
        "pipeline": "train",      # train | random | average
        "gamma_sweep": [],
        "seed": 1,
        "out_dir": "out",
    },
}


def load_config(path=None, overrides=None):
    """Merge YAML config over defaults; reject unknown sections/keys."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    doc = {}
    if path is not None:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    if overrides:
        for section, vals in overrides.items():
            doc.setdefault(section, {}).update(vals)
    for section, vals in doc.items():
        if section not in cfg:
            raise ConfigError(f"unknown config section {section!r}")
        if section != "network":
            unknown = set(vals) - set(cfg[section])
            if unknown:
                raise ConfigError(
                    f"unknown keys in {section!r}: {sorted(unknown)}")
        cfg[section].update(vals)
    exp = cfg["experiment"]
    if exp["episodes"] < 0:
        raise ConfigError("episodes must be >= 0")
    for g in exp["gamma_sweep"]:
        if not (0.0 <= g <= 1.0):
            raise ConfigError("gamma sweep values must lie in [0, 1]")
    return cfg


def build_setup(cfg, seed=None):
    """Materialize network, twins, holdout, task, and env from a config."""
    seed = cfg["experiment"]["seed"] if seed is None else seed
    net = build_network(cfg["network"], seed=seed)
    flc = cfg["fl"]
    model = fl.make_model(flc["model"], flc["num_features"], flc["num_classes"])
    total = flc["samples_per_twin"] * net.num_users
    X, y = fl.make_synthetic_classification(
        total, flc["num_features"], flc["num_classes"],
        separation=flc["separation"], seed=seed)
    shards = fl.partition_iid(X, y, net.num_users, seed=seed + 1)
    from dtwn.network import DigitalTwin
    twins = [DigitalTwin(id=i, owner_user=i, data_size=len(Xi),
                         features=Xi, labels=yi)
             for i, (Xi, yi) in enumerate(shards)]
    holdout = fl.make_synthetic_classification(
        flc["holdout_samples"], flc["num_features"], flc["num_classes"],
        separation=flc["separation"], seed=seed + 2)
    task = fl.TrainingTask(model, learning_rate=flc["learning_rate"],
                           theta_local=flc["theta_local"], seed=seed + 3)
    envc = cfg["env"]
    env = DtwnEnv(net, twins, task, seed=seed, horizon=envc["horizon"],
                  b_min=envc["b_min"], b_max=envc["b_max"],
                  fading=envc["fading"], reward_mode=envc["reward_mode"],
                  ledger_enabled=envc["ledger"], holdout=holdout,
                  initial_pool=envc["initial_pool"],
                  reward_coins=envc["reward_coins"],
                  verification_threshold=envc["verification_threshold"])
    return net, twins, holdout, task, env


def make_trainer(cfg, env, seed=None):
    seed = cfg["experiment"]["seed"] if seed is None else seed
    mc = cfg["maddpg"]
    agent_cfg = AgentConfig(hidden=tuple(mc["hidden"]),
                            actor_lr=mc["actor_lr"], critic_lr=mc["critic_lr"],
                            soft_update_rate=mc["soft_update_rate"],
                            gamma=mc["gamma"])
    return MaddpgTrainer(env, agent_cfg, seed=seed,
                         batch_size=mc["batch_size"],
                         replay_capacity=mc["replay_capacity"],
                         warmup=mc["warmup"], ou_theta=mc["ou_theta"],
                         ou_sigma=mc["ou_sigma"],
                         sigma_decay=mc["sigma_decay"])


# baselines ---------------------------------------------------------------


def random_joint_action(env, rng):
    m, n, c = env.num_agents, env.net.num_users, env.net.num_subchannels
    return JointAction(
        assoc_scores=rng.uniform(-1, 1, (m, n)),
        batch_fracs=rng.uniform(env.b_min, env.b_max, (m, n)),
        bandwidth_shares=rng.uniform(0, 1, (m, c)),
    )


def average_joint_action(env):
    """Even twin split (remainder to lower BS ids), midpoint batch, tau=1/M."""
    m, n, c = env.num_agents, env.net.num_users, env.net.num_subchannels
    scores = np.zeros((m, n))
    counts = [n // m + (1 if j < n % m else 0) for j in range(m)]
    i = 0
    for bs, k in enumerate(counts):
        scores[bs, i: i + k] = 1.0
        i += k
    mid = (env.b_min + env.b_max) / 2.0
    return JointAction(scores, np.full((m, n), mid), np.full((m, c), 1.0 / m))


def run_policy_episodes(env, episodes, action_fn):
    """Roll out `action_fn(step_rng) -> JointAction` and collect history."""
    history = []
    for ep in range(episodes):
        env.reset()
        ep_rewards = np.zeros(env.num_agents)
        times, losses = [], []
        for _ in range(env.horizon):
            outcome = env.step(action_fn())
            ep_rewards += outcome.rewards
            times.append(outcome.breakdown.t_iteration)
            losses.append(outcome.global_loss)
        history.append({
            "episode": ep,
            "agent_rewards": ep_rewards,
            "mean_iteration_time": float(np.mean(times)),
            "iteration_times": times,
            "global_losses": losses,
            "critic_loss": None,
        })
    return history


def baseline_random(env, episodes, seed=0):
    rng = np.random.default_rng((seed, 0xBA))
    return run_policy_episodes(env, episodes,
                               lambda: random_joint_action(env, rng))


def baseline_average(env, episodes):
    action = average_joint_action(env)
    return run_policy_episodes(env, episodes, lambda: action.copy())


def evaluate_policy(trainer, episodes):
    """Greedy rollouts of the trained policy, no exploration, no updates."""
    history = []
    for ep in range(episodes):
        rec = trainer.run_episode(explore=False, update=False)
        rec["episode"] = ep
        history.append(rec)
    return history


# metrics -----------------------------------------------------------------


def cumulative_average_reward(history, num_agents=None):
    """R_n = sum_{t<=n} sum_i R_{i,t} / (n * M), one value per episode."""
    if not history:
        raise ValueError("empty history")
    if num_agents is None:
        num_agents = len(history[0]["agent_rewards"])
    totals = np.array([rec["agent_rewards"].sum() for rec in history])
    n = np.arange(1, len(history) + 1)
    return np.cumsum(totals) / (n * num_agents)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.12g}" if isinstance(x, float) else str(x)


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_history_csvs(out_dir, history, num_agents, wallclock=None,
                       prefix=""):
    """Emit the standard CSV set for one run; returns the file map."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    p = prefix
    files = {
        "metrics": out_dir / f"{p}metrics.csv",
        "latency": out_dir / f"{p}latency_vs_round.csv",
        "loss": out_dir / f"{p}loss_vs_round.csv",
        "cumcost": out_dir / f"{p}cumulative_cost.csv",
        "wallclock": out_dir / f"{p}wallclock.csv",
    }
    if history:
        cum = cumulative_average_reward(history, num_agents)
    rows = []
    lat_rows, loss_rows, cum_rows = [], [], []
    for k, rec in enumerate(history):
        rows.append((rec["episode"],
                     float(rec["agent_rewards"].sum() / num_agents),
                     float(cum[k]), float(rec["global_losses"][-1]),
                     rec["mean_iteration_time"]))
        for s, (t, gl) in enumerate(zip(rec["iteration_times"],
                                        rec["global_losses"])):
            lat_rows.append((rec["episode"], s, float(t)))
            loss_rows.append((rec["episode"], s, float(gl)))
        cum_rows.append((rec["episode"], float(-cum[k])))
    write_csv(files["metrics"],
              ["episode", "episode_reward", "cumulative_average_reward",
               "global_loss", "mean_iteration_time"], rows)
    write_csv(files["latency"], ["episode", "step", "iteration_time"], lat_rows)
    write_csv(files["loss"], ["episode", "step", "global_loss"], loss_rows)
    write_csv(files["cumcost"], ["episode", "cumulative_average_cost"], cum_rows)
    wc_rows = [] if wallclock is None else list(enumerate(wallclock))
    write_csv(files["wallclock"], ["episode", "seconds"], wc_rows)
    return files


def write_trajectory(path, env, trainer, episodes=1):
    """Greedy per-step dump: state, action, reward, latency components."""
    rows = []
    for ep in range(episodes):
        obs = env.reset().flatten()
        for noise in trainer.noises:
            noise.reset()
        for s in range(env.horizon):
            act_mat = trainer.select_actions(obs, explore=False)
            joint = env.joint_action_from_vectors(act_mat)
            outcome = env.step(joint)
            bd = outcome.breakdown
            rows.append((ep, s,
                         float(outcome.rewards.mean()),
                         bd.t_local_training, bd.t_param_tx,
                         bd.t_block_validation, bd.t_iteration,
                         float(outcome.global_loss),
                         " ".join(_fmt(v) for v in obs),
                         " ".join(_fmt(v) for v in act_mat.ravel())))
            obs = outcome.next_state.flatten()
    write_csv(path, ["episode", "step", "reward", "t_local_training",
                     "t_param_tx", "t_block_validation", "t_iteration",
                     "global_loss", "state", "action"], rows)


# top-level pipelines -------------------------------------------------------


def run_experiment(config=None, out_dir=None, seed=None, episodes=None,
                   quiet=True, log=print):
    """Execute the configured pipeline and emit the CSV set.

    ``config`` may be a path, a merged config dict, or None for defaults.
    Returns a dict with the config, history, output files, and summary.
    """
    cfg = config if isinstance(config, dict) else load_config(config)
    exp = cfg["experiment"]
    seed = exp["seed"] if seed is None else seed
    episodes = exp["episodes"] if episodes is None else episodes
    out_dir = Path(exp["out_dir"] if out_dir is None else out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    net, twins, holdout, task, env = build_setup(cfg, seed=seed)
    pipeline = exp["pipeline"]
    wallclock = []
    trainer = None
    if pipeline == "train":
        trainer = make_trainer(cfg, env, seed=seed)
        history = []
        for ep in range(episodes):
            t0 = time.monotonic()
            rec = trainer.run_episode(explore=True, update=True)
            wallclock.append(time.monotonic() - t0)
            rec["episode"] = ep
            history.append(rec)
            for noise in trainer.noises:
                noise.sigma *= trainer.sigma_decay
            if not quiet and ep % 25 == 0:
                log(f"episode {ep}: reward/step "
                    f"{rec['agent_rewards'].mean() / env.horizon:.4f}")
    elif pipeline == "random":
        t0 = time.monotonic()
        history = baseline_random(env, episodes, seed=seed)
        wallclock = [time.monotonic() - t0] * max(1, episodes) if episodes else []
    elif pipeline == "average":
        t0 = time.monotonic()
        history = baseline_average(env, episodes)
        wallclock = [time.monotonic() - t0] * max(1, episodes) if episodes else []
    else:
        raise ConfigError(f"unknown pipeline {pipeline!r}")

    files = write_history_csvs(out_dir, history, env.num_agents,
                               wallclock=wallclock or None)
    if trainer is not None:
        ckpt = out_dir / "checkpoint.npz"
        trainer.save_checkpoint(ckpt, yaml.safe_dump(cfg).encode())
        files["checkpoint"] = ckpt
        write_trajectory(out_dir / "eval_trajectory.csv", env, trainer)
        files["trajectory"] = out_dir / "eval_trajectory.csv"

    summary_lines = [f"pipeline: {pipeline}", f"episodes: {len(history)}",
                     f"seed: {seed}"]
    if history:
        cum = cumulative_average_reward(history, env.num_agents)
        summary_lines += [
            f"final cumulative average reward: {_fmt(float(cum[-1]))}",
            f"mean iteration time (last episode): "
            f"{_fmt(history[-1]['mean_iteration_time'])}",
            f"final global loss: {_fmt(float(history[-1]['global_losses'][-1]))}",
        ]
    summary = "\n".join(summary_lines)
    (out_dir / "summary.txt").write_text(summary + "\n")
    files["summary"] = out_dir / "summary.txt"
    if not quiet:
        log(summary)
    return {"config": cfg, "history": history, "files": files,
            "summary": summary, "env": env, "trainer": trainer}


def gamma_sweep(config, gammas, out_dir, seed=None, episodes=None,
                quiet=True, log=print):
    """Train once per gamma with a shared seed; emit a side-by-side CSV."""
    if not gammas:
        raise ConfigError("gamma sweep list is empty")
    cfg = config if isinstance(config, dict) else load_config(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series, clocks = {}, {}
    for g in gammas:
        sub = copy.deepcopy(cfg)
        sub["maddpg"]["gamma"] = float(g)
        sub["experiment"]["pipeline"] = "train"
        res = run_experiment(sub, out_dir=out_dir / f"gamma_{g:g}",
                             seed=seed, episodes=episodes, quiet=quiet, log=log)
        cum = cumulative_average_reward(res["history"],
                                        res["env"].num_agents)
        series[g] = -cum   # cost = negative reward
        clocks[g] = [rec["mean_iteration_time"] for rec in res["history"]]
    n = len(next(iter(series.values())))
    header = ["episode"] + [f"cost_gamma_{g:g}" for g in gammas] \
        + [f"itertime_gamma_{g:g}" for g in gammas]
    rows = [[ep] + [float(series[g][ep]) for g in gammas]
            + [float(clocks[g][ep]) for g in gammas] for ep in range(n)]
    path = out_dir / "gamma_sweep.csv"
    write_csv(path, header, rows)
    return {"series": series, "csv": path}
