"""Permissioned DPoS ledger for the BS network.

Stake ("training coins") is seeded proportionally to associated data,
producers are elected by coin-weighted votes, and elected BSs take turns
packing transactions into blocks. Training-model transactions are
verified against a holdout set before their authors are paid; a tampered
or low-quality model earns its author nothing but does not sink the
block. Hashing and signing are simulation-grade (SHA-256 + HMAC), enough
for integrity, not PKI.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import struct
from dataclasses import dataclass, field

import numpy as np

TX_KINDS = ("twin-model", "twin-data", "training-model")


class LedgerError(ValueError):
    pass


def _digest(*parts):
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, str):
            p = p.encode()
        elif not isinstance(p, (bytes, bytearray)):
            p = repr(p).encode()
        h.update(struct.pack(">I", len(p)))
        h.update(p)
    return h.hexdigest()


def sign(key, payload_digest):
    return hmac.new(key, payload_digest.encode(), hashlib.sha256).hexdigest()


def params_to_bytes(w):
    return np.asarray(w, dtype=np.float64).tobytes()


def params_from_bytes(raw):
    return np.frombuffer(raw, dtype=np.float64).copy()


@dataclass(frozen=True)
class TransactionRecord:
    kind: str
    author: int
    payload: bytes
    timestamp: float
    signature: str = ""

    def __post_init__(self):
        if self.kind not in TX_KINDS:
            raise LedgerError(f"unknown record kind {self.kind!r}")
        if len(self.payload) == 0:
            raise LedgerError("empty payload")

    @property
    def payload_bits(self):
        return 8 * len(self.payload)

    @property
    def digest(self):
        return _digest(self.kind, str(self.author), self.payload,
                       f"{self.timestamp:.9f}")


def make_transaction(kind, author, payload, timestamp, key):
    tx = TransactionRecord(kind, author, payload, timestamp)
    return TransactionRecord(kind, author, payload, timestamp,
                             signature=sign(key, tx.digest))


@dataclass
class Block:
    height: int
    producer: int
    prev_hash: str
    tx_list: list
    flags: list = field(default_factory=list)   # per-tx verification flags

    @property
    def body_digest(self):
        return _digest(str(self.height), str(self.producer), self.prev_hash,
                       *[tx.digest for tx in self.tx_list])

    def size_bits(self, header_bits):
        return float(header_bits + sum(tx.payload_bits for tx in self.tx_list))


class StakeTable:
    """Per-BS training-coin balances."""

    def __init__(self, coins, initial_pool):
        self.coins = np.asarray(coins, dtype=float).copy()
        self.initial_pool = float(initial_pool)
        if np.any(self.coins < 0):
            raise LedgerError("stakes must be >= 0")

    def copy(self):
        return StakeTable(self.coins, self.initial_pool)


def initial_stakes(assoc, initial_pool):
    """Coins proportional to each BS's share of the total dataset."""
    totals = np.array([assoc.bs_data(j) for j in range(assoc.num_bs)])
    if totals.sum() <= 0:
        raise LedgerError("total dataset size is zero")
    return StakeTable(totals / totals.sum() * initial_pool, initial_pool)


def elect_producers(stakes, ballots, num_producers):
    """Top-`num_producers` BSs by received coin-weighted votes.

    ``ballots[v]`` maps candidate -> coins spent by voter v; a voter may
    not spend more than it holds. Ties break toward the lower BS id; the
    returned order is the round-robin production schedule.
    """
    m = len(stakes.coins)
    if num_producers > m:
        raise LedgerError("cannot elect more producers than BSs")
    tally = np.zeros(m)
    for voter, votes in ballots.items():
        spent = sum(votes.values())
        if spent > stakes.coins[voter] + 1e-12:
            raise LedgerError(f"BS {voter} overspent its ballot")
        for cand, amount in votes.items():
            tally[cand] += amount
    order = sorted(range(m), key=lambda i: (-tally[i], i))
    return order[:num_producers]


def self_vote_ballots(stakes):
    """Default strategy: every BS votes its full stake for itself."""
    return {i: {i: float(c)} for i, c in enumerate(stakes.coins)}


def block_interval_policy(local_training_period, multiplier):
    """Block interval as a whole multiple of the local training period."""
    if multiplier < 1:
        raise LedgerError("interval multiplier must be >= 1")
    return float(multiplier * local_training_period)


def verify_local_model(tx, holdout, model, global_params, threshold=1.05):
    """Accept a submitted model iff its holdout loss is competitive.

    Competitive means <= threshold * holdout loss of the current global
    model; deterministic for a fixed holdout set.
    """
    w = params_from_bytes(tx.payload)
    if w.shape != np.asarray(global_params).shape:
        raise LedgerError("submitted model dimension mismatch")
    if not np.all(np.isfinite(w)):
        raise LedgerError("submitted model has non-finite parameters")
    X, y = holdout
    return model.loss(w, X, y) <= threshold * model.loss(global_params, X, y)


class Mempool:
    def __init__(self, keys):
        self.keys = keys          # per-BS signing keys
        self.pending = {}         # digest -> tx

    def submit(self, tx):
        """Queue a signed transaction; dedup by digest."""
        if tx.signature != sign(self.keys[tx.author], tx.digest):
            raise LedgerError(f"bad signature on tx from BS {tx.author}")
        if tx.digest in self.pending:
            raise LedgerError("duplicate transaction")
        self.pending[tx.digest] = tx
        return tx.digest

    def drain(self):
        txs = sorted(self.pending.values(),
                     key=lambda t: (t.timestamp, t.digest))
        self.pending.clear()
        return txs


class Ledger:
    """Single-writer chain plus stake accounting."""

    GENESIS_HASH = "0" * 64

    def __init__(self, assoc, net, initial_pool=100.0, reward_coins=1.0,
                 verification_threshold=1.05, ballots=None):
        self.net = net
        self.keys = {i: f"bs-key-{i}".encode() for i in range(net.num_bs)}
        self.mempool = Mempool(self.keys)
        self.stakes = initial_stakes(assoc, initial_pool)
        self.reward_coins = float(reward_coins)
        self.verification_threshold = float(verification_threshold)
        if ballots is None:
            ballots = self_vote_ballots(self.stakes)
        self.producers = elect_producers(self.stakes, ballots, net.num_producers)
        self.blocks = []
        self.slot = 0

    @property
    def head_hash(self):
        return self.blocks[-1].body_digest if self.blocks else self.GENESIS_HASH

    def scheduled_producer(self):
        return self.producers[self.slot % len(self.producers)]

    def submit(self, tx):
        return self.mempool.submit(tx)

    def produce_block(self, producer):
        """Pack the mempool into a block; only the scheduled producer may."""
        expected = self.scheduled_producer()
        if producer != expected:
            raise LedgerError(
                f"BS {producer} produced out of turn (slot belongs to {expected})")
        txs = self.mempool.drain()
        return Block(height=len(self.blocks), producer=producer,
                     prev_hash=self.head_hash, tx_list=txs)

    def validate_block(self, block, verification_context=None):
        """Majority validation by the producer set; append on accept.

        ``verification_context`` is (holdout, model, global_params) for
        training-model payload checks; without it only integrity is
        checked. Returns (accepted, per-tx flags, stake delta).
        """
        if block.prev_hash != self.head_hash:
            raise LedgerError("block does not link to the chain tip")
        flags = []
        for tx in block.tx_list:
            ok = tx.signature == sign(self.keys[tx.author], tx.digest)
            if ok and tx.kind == "training-model" and verification_context:
                holdout, model, global_params = verification_context
                try:
                    ok = verify_local_model(tx, holdout, model, global_params,
                                            self.verification_threshold)
                except LedgerError:
                    ok = False
            flags.append(bool(ok))
        # every validator runs the same deterministic checks, so the
        # majority vote is unanimous accept
        votes = len(self.producers)
        accepted = votes > len(self.producers) / 2
        delta = np.zeros(len(self.stakes.coins))
        if accepted:
            for tx, ok in zip(block.tx_list, flags):
                if ok and tx.kind == "training-model":
                    delta[tx.author] += self.reward_coins
            block.flags = flags
            self.blocks.append(block)
            self.stakes.coins += delta
            self.slot += 1
        return accepted, flags, delta

    def verified_training_payloads(self, block):
        """Parameter vectors of the block's accepted training-model txs."""
        out = {}
        for tx, ok in zip(block.tx_list, block.flags):
            if ok and tx.kind == "training-model":
                out[tx.author] = params_from_bytes(tx.payload)
        return out

    # chain export/import: length-prefixed binary log --------------------

    def export_chain(self, path):
        with open(path, "wb") as fh:
            for block in self.blocks:
                rec = {
                    "height": block.height,
                    "producer": block.producer,
                    "prev_hash": block.prev_hash,
                    "flags": block.flags,
                    "txs": [
                        {"kind": t.kind, "author": t.author,
                         "timestamp": t.timestamp, "signature": t.signature,
                         "payload": t.payload.hex()}
                        for t in block.tx_list
                    ],
                }
                raw = json.dumps(rec, sort_keys=True).encode()
                fh.write(struct.pack(">I", len(raw)))
                fh.write(raw)

    @staticmethod
    def import_chain(path):
        blocks = []
        with open(path, "rb") as fh:
            while True:
                head = fh.read(4)
                if not head:
                    break
                (n,) = struct.unpack(">I", head)
                rec = json.loads(fh.read(n))
                txs = [TransactionRecord(t["kind"], t["author"],
                                         bytes.fromhex(t["payload"]),
                                         t["timestamp"], t["signature"])
                       for t in rec["txs"]]
                blocks.append(Block(rec["height"], rec["producer"],
                                    rec["prev_hash"], txs, rec["flags"]))
        return blocks

    def summary(self):
        """Human-readable chain dump: height, producer, tx kinds, size."""
        lines = []
        for b in self.blocks:
            kinds = ",".join(t.kind for t in b.tx_list) or "-"
            bits = b.size_bits(self.net.block_header_bits)
            lines.append(f"h={b.height} producer={b.producer} "
                         f"txs=[{kinds}] bits={bits:.0f}")
        return "\n".join(lines)


def replay_chain(blocks):
    """Recompute the head digest from genesis; checks link integrity."""
    prev = Ledger.GENESIS_HASH
    for b in blocks:
        if b.prev_hash != prev:
            raise LedgerError(f"broken link at height {b.height}")
        prev = b.body_digest
    return prev
