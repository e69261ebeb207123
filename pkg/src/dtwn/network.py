"""Static network topology, digital twins, and edge association."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml


def dbm_to_watts(dbm):
    """P_W = 10^((dBm - 30) / 10)."""
    return 10.0 ** ((dbm - 30.0) / 10.0)


class ConfigError(ValueError):
    """Raised for malformed or physically invalid network configs."""


@dataclass(frozen=True)
class NetworkModel:
    """Immutable physical-layer and compute-layer constants of the topology.

    Frequencies in Hz, powers in watts, sizes in bits, distances in meters.
    """

    num_users: int
    num_bs: int
    num_subchannels: int
    num_producers: int
    bs_cpu_freq: np.ndarray          # Hz, per BS
    bs_tx_power: float               # W, per BS per subchannel (uplink)
    mbs_tx_power: float              # W, per subchannel (downlink)
    uplink_bandwidth: float          # Hz, per subchannel
    downlink_bandwidth: float        # Hz, per subchannel
    noise_power: float               # W
    path_loss_exponent: float
    user_positions: np.ndarray       # (N, 2) m
    bs_positions: np.ndarray         # (M, 2) m
    mbs_position: np.ndarray         # (2,) m
    cycles_per_sample: float         # CPU cycles to train one sample
    cycles_per_agg_unit: float       # CPU cycles to aggregate one unit
    cycles_per_validation_unit: float  # CPU cycles to validate one bit
    validation_freq: np.ndarray      # Hz, per BS (block validation CPU)
    tx_factor: float                 # broadcast transmission overhead factor
    model_size_bits: float           # serialized global-model size
    block_header_bits: float
    sample_size_bits: float

    def __post_init__(self):
        if self.num_users < 1 or self.num_bs < 1 or self.num_subchannels < 1:
            raise ConfigError("num_users, num_bs, num_subchannels must be >= 1")
        if not (1 <= self.num_producers <= self.num_bs):
            raise ConfigError(
                f"num_producers={self.num_producers} must be in [1, {self.num_bs}]")
        for name in ("bs_tx_power", "mbs_tx_power", "uplink_bandwidth",
                     "downlink_bandwidth", "noise_power", "cycles_per_sample",
                     "cycles_per_agg_unit", "cycles_per_validation_unit",
                     "tx_factor", "model_size_bits", "block_header_bits",
                     "sample_size_bits"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.path_loss_exponent < 0:
            raise ConfigError("path_loss_exponent must be >= 0")
        if np.any(self.bs_cpu_freq <= 0) or np.any(self.validation_freq <= 0):
            raise ConfigError("CPU frequencies must be strictly positive")
        if len(self.bs_cpu_freq) != self.num_bs:
            raise ConfigError("bs_cpu_freq length must equal num_bs")

    def bs_mbs_distances(self):
        """Distance from each BS to the MBS, meters."""
        return np.linalg.norm(self.bs_positions - self.mbs_position, axis=1)


@dataclass
class DigitalTwin:
    """Server-side replica of one end user: model, data, dynamic state."""

    id: int
    owner_user: int
    data_size: int                       # D_i, samples
    features: np.ndarray | None = None   # (D_i, d)
    labels: np.ndarray | None = None     # (D_i,) int
    behavior_model: np.ndarray | None = None
    dynamic_state: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        if self.data_size < 0:
            raise ValueError("data_size must be >= 0")
        if self.features is not None and len(self.features) != self.data_size:
            raise ValueError("features row count must equal data_size")


class Association:
    """Assignment matrix Phi: row i is all-zero except D_i at the chosen BS."""

    def __init__(self, data_sizes, num_bs):
        self.data_sizes = np.asarray(data_sizes, dtype=float)
        self.phi = np.zeros((len(self.data_sizes), num_bs))

    @property
    def num_users(self):
        return self.phi.shape[0]

    @property
    def num_bs(self):
        return self.phi.shape[1]

    def copy(self):
        out = Association(self.data_sizes, self.num_bs)
        out.phi = self.phi.copy()
        return out

    def assign(self, twin, bs):
        """Associate a twin (and all its data) to exactly one BS."""
        if not (0 <= twin < self.num_users):
            raise KeyError(f"unknown twin id {twin}")
        if not (0 <= bs < self.num_bs):
            raise KeyError(f"unknown BS id {bs}")
        self.phi[twin, :] = 0.0
        self.phi[twin, bs] = self.data_sizes[twin]
        return self

    def bs_of(self, twin):
        nz = np.nonzero(self.phi[twin])[0]
        return int(nz[0]) if len(nz) else None

    def twins_of(self, bs):
        """Twin ids associated to the BS (data size may be zero)."""
        if not (0 <= bs < self.num_bs):
            raise KeyError(f"unknown BS id {bs}")
        return np.nonzero(self.phi[:, bs] > 0)[0]

    def twin_count(self, bs):
        """K_i = number of twins associated to BS `bs`."""
        return int(len(self.twins_of(bs)))

    def twin_counts(self):
        return np.array([self.twin_count(j) for j in range(self.num_bs)])

    def bs_data(self, bs):
        """Total associated data size at the BS, samples."""
        return float(self.phi[:, bs].sum())

    def is_complete(self):
        """Every row has its one nonzero entry (twins with D_i=0 count too)."""
        row_sums = self.phi.sum(axis=1)
        return bool(np.all(row_sums == self.data_sizes))


def associate(twin, bs, assoc):
    """Return a new Association with the twin moved to `bs`."""
    return assoc.copy().assign(twin, bs)


def round_robin_association(data_sizes, num_bs):
    assoc = Association(data_sizes, num_bs)
    for i in range(len(data_sizes)):
        assoc.assign(i, i % num_bs)
    return assoc


_DEFAULTS = {
    "num_users": 20,
    "num_bs": 5,
    "num_subchannels": 5,
    "num_producers": 3,
    "bs_cpu_freq_ghz": [2.6, 1.8, 3.6, 2.4, 2.4],
    "bs_tx_power_dbm": 34.0,
    "mbs_tx_power_dbm": 42.0,
    "subchannel_bandwidth_hz": 30e6,
    "downlink_bandwidth_hz": 30e6,
    "noise_power_dbm": -174.0,
    "path_loss_exponent": 2.0,
    "cell_radius_m": 200.0,
    "bs_ring_radius_m": 500.0,
    "cycles_per_sample": 1e8,
    "cycles_per_agg_unit": 10.0,
    "cycles_per_validation_unit": 1.0,
    "validation_freq_ghz": None,
    "tx_factor": 1.0,
    "model_size_bits": 1e6,
    "block_header_bits": 1e3,
    "sample_size_bits": 256.0,
    "seed": 1,
}


def load_network_config(path):
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    return doc.get("network", doc)


def build_network(config=None, seed=None):
    """Build a validated NetworkModel from a config mapping or YAML path.

    Placement: BSs evenly spaced on a ring around the MBS at the origin;
    users uniform in the disc coverage of a uniformly chosen BS. The
    placement RNG is seeded, so the model is bit-identical across runs.
    """
    if config is None:
        config = {}
    elif isinstance(config, (str, bytes)) or hasattr(config, "read"):
        config = load_network_config(config)
    unknown = set(config) - set(_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = {**_DEFAULTS, **config}
    if seed is None:
        seed = cfg["seed"]

    m = int(cfg["num_bs"])
    n = int(cfg["num_users"])
    freqs = np.asarray(cfg["bs_cpu_freq_ghz"], dtype=float)
    if freqs.size == 1:
        freqs = np.full(m, freqs.item())
    if len(freqs) != m:
        raise ConfigError("bs_cpu_freq_ghz must have num_bs entries")
    vfreq = cfg["validation_freq_ghz"]
    vfreqs = freqs if vfreq is None else np.asarray(vfreq, dtype=float)
    if vfreqs.size == 1:
        vfreqs = np.full(m, vfreqs.item())

    rng = np.random.default_rng(seed)
    ring = float(cfg["bs_ring_radius_m"])
    radius = float(cfg["cell_radius_m"])
    angles = 2.0 * np.pi * np.arange(m) / m
    bs_pos = ring * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    # uniform placement in the chosen BS's disc
    home = rng.integers(0, m, size=n)
    r = radius * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0, 2 * np.pi, size=n)
    user_pos = bs_pos[home] + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)

    return NetworkModel(
        num_users=n,
        num_bs=m,
        num_subchannels=int(cfg["num_subchannels"]),
        num_producers=int(cfg["num_producers"]),
        bs_cpu_freq=freqs * 1e9,
        bs_tx_power=dbm_to_watts(float(cfg["bs_tx_power_dbm"])),
        mbs_tx_power=dbm_to_watts(float(cfg["mbs_tx_power_dbm"])),
        uplink_bandwidth=float(cfg["subchannel_bandwidth_hz"]),
        downlink_bandwidth=float(cfg["downlink_bandwidth_hz"]),
        noise_power=dbm_to_watts(float(cfg["noise_power_dbm"])),
        path_loss_exponent=float(cfg["path_loss_exponent"]),
        user_positions=user_pos,
        bs_positions=bs_pos,
        mbs_position=np.zeros(2),
        cycles_per_sample=float(cfg["cycles_per_sample"]),
        cycles_per_agg_unit=float(cfg["cycles_per_agg_unit"]),
        cycles_per_validation_unit=float(cfg["cycles_per_validation_unit"]),
        validation_freq=vfreqs * 1e9,
        tx_factor=float(cfg["tx_factor"]),
        model_size_bits=float(cfg["model_size_bits"]),
        block_header_bits=float(cfg["block_header_bits"]),
        sample_size_bits=float(cfg["sample_size_bits"]),
    )


def network_to_dict(net):
    """Round-trippable plain-dict view (arrays as lists), for dumps."""
    out = {}
    for f in dataclasses.fields(net):
        v = getattr(net, f.name)
        out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
    return out
