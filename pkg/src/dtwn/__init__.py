"""Digital-twin wireless network simulator.

Library layout:

- ``network``:  static topology, digital twins, edge association
- ``channel``:  OFDMA uplink/downlink achievable rates
- ``latency``:  per-round latency decomposition and objective
- ``fl``:       federated training over digital twins (numpy models)
- ``ledger``:   permissioned DPoS chain with model verification
- ``env``:      the multi-agent MDP wrapper (observe / project / step)
- ``maddpg``:   actor-critic agents with centralized critics
- ``harness``:  experiment driver, baselines, metrics, CSV emission
"""

from dtwn.network import NetworkModel, DigitalTwin, Association, build_network
from dtwn.channel import ChannelState, BandwidthAllocation
from dtwn.latency import LatencyBreakdown, AccuracyTargets
from dtwn.env import DtwnEnv
from dtwn.maddpg import Agent, MaddpgTrainer

__all__ = [
    "NetworkModel",
    "DigitalTwin",
    "Association",
    "build_network",
    "ChannelState",
    "BandwidthAllocation",
    "LatencyBreakdown",
    "AccuracyTargets",
    "DtwnEnv",
    "Agent",
    "MaddpgTrainer",
]

__version__ = "0.1.0"
