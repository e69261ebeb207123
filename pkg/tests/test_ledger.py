import numpy as np
import pytest

from dtwn import fl, ledger
from dtwn.ledger import (Block, Ledger, LedgerError, TransactionRecord,
                         block_interval_policy, elect_producers,
                         initial_stakes, make_transaction,
                         params_from_bytes, params_to_bytes, replay_chain,
                         self_vote_ballots, verify_local_model)
from dtwn.network import Association, build_network


def make_net(**kw):
    base = {"num_bs": 3, "num_users": 6, "num_subchannels": 2,
            "num_producers": 3, "bs_cpu_freq_ghz": [2.0, 2.0, 2.0]}
    base.update(kw)
    return build_network(base)


def make_assoc(sizes, m):
    assoc = Association(sizes, m)
    for i in range(len(sizes)):
        assoc.assign(i, i % m)
    return assoc


def make_ledger(**kw):
    net = make_net()
    assoc = make_assoc([10.0] * 6, 3)
    return net, Ledger(assoc, net, **kw)


def tx_for(led, bs, kind="training-model", payload=b"x" * 8, t=0.0):
    return make_transaction(kind, bs, payload, t, led.keys[bs])


def test_initial_stakes_equal_split():
    assoc = make_assoc([10.0] * 10, 5)
    st = initial_stakes(assoc, 100.0)
    np.testing.assert_allclose(st.coins, 20.0)
    assert st.coins.sum() == pytest.approx(100.0)


def test_initial_stakes_degenerate():
    assoc = Association([7.0, 3.0], 3)
    assoc.assign(0, 1)
    assoc.assign(1, 1)
    st = initial_stakes(assoc, 50.0)
    np.testing.assert_allclose(st.coins, [0.0, 50.0, 0.0])


def test_initial_stakes_fractions():
    assoc = Association([50.0, 30.0, 20.0], 3)
    for i in range(3):
        assoc.assign(i, i)
    st = initial_stakes(assoc, 1000.0)
    np.testing.assert_allclose(st.coins, [500.0, 300.0, 200.0])


def test_initial_stakes_zero_data():
    assoc = Association([0.0, 0.0], 2)
    assoc.assign(0, 0)
    assoc.assign(1, 1)
    with pytest.raises(LedgerError):
        initial_stakes(assoc, 10.0)


def test_elect_all_with_ties():
    st = ledger.StakeTable([20.0] * 5, 100.0)
    ballots = self_vote_ballots(st)
    assert elect_producers(st, ballots, 5) == [0, 1, 2, 3, 4]
    assert elect_producers(st, ballots, 3) == [0, 1, 2]


def test_elect_weighted_votes():
    st = ledger.StakeTable([500.0, 300.0, 200.0], 1000.0)
    ballots = {i: {2: float(st.coins[i])} for i in range(3)}
    assert elect_producers(st, ballots, 1) == [2]


def test_elect_overspent_ballot():
    st = ledger.StakeTable([10.0, 10.0], 20.0)
    with pytest.raises(LedgerError):
        elect_producers(st, {0: {1: 11.0}}, 1)


def test_submit_and_dedup():
    net, led = make_ledger()
    tx = tx_for(led, 0)
    led.submit(tx)
    assert len(led.mempool.pending) == 1
    with pytest.raises(LedgerError):
        led.submit(tx)


def test_submit_tampered_signature():
    net, led = make_ledger()
    tx = tx_for(led, 0, payload=b"original")
    bad = TransactionRecord(tx.kind, tx.author, b"priginal", tx.timestamp,
                            tx.signature)
    with pytest.raises(LedgerError):
        led.submit(bad)


def test_round_robin_schedule():
    net, led = make_ledger()
    producers = led.producers
    seen = []
    for slot in range(6):
        p = led.scheduled_producer()
        seen.append(p)
        led.submit(tx_for(led, 0, kind="twin-data", t=float(slot)))
        block = led.produce_block(p)
        accepted, _, _ = led.validate_block(block)
        assert accepted
    assert seen == producers + producers


def test_out_of_turn_producer_rejected():
    net, led = make_ledger()
    wrong = (led.scheduled_producer() + 1) % 3
    with pytest.raises(LedgerError):
        led.produce_block(wrong)


def test_block_size_hand_sum():
    net, led = make_ledger()
    for k in range(3):
        led.submit(tx_for(led, k, payload=b"\0" * 125_000, t=float(k)))
    block = led.produce_block(led.scheduled_producer())
    # 3 payloads of 1e6 bits plus a 1e3-bit header
    assert block.size_bits(1e3) == pytest.approx(3.001e6)


def test_broken_prev_hash_rejected():
    net, led = make_ledger()
    led.submit(tx_for(led, 0, kind="twin-data"))
    block = led.produce_block(led.scheduled_producer())
    bad = Block(block.height, block.producer, "f" * 64, block.tx_list)
    with pytest.raises(LedgerError):
        led.validate_block(bad)


def _model_context(seed=0):
    model = fl.LogisticRegression(4, 2)
    X, y = fl.make_synthetic_classification(100, 4, 2, seed=seed)
    w = model.init_params()
    for _ in range(30):
        _, g = model.loss_and_grad(w, X, y)
        w = w - 0.5 * g
    return model, (X, y), w


def test_verify_local_model_self_comparison():
    model, holdout, w = _model_context()
    net, led = make_ledger()
    tx = tx_for(led, 0, payload=params_to_bytes(w))
    assert verify_local_model(tx, holdout, model, w, threshold=1.0)


def test_verify_local_model_rejects_noise():
    model, holdout, w = _model_context()
    net, led = make_ledger()
    rng = np.random.default_rng(0)
    noise = rng.normal(0, 5, w.shape)
    tx = tx_for(led, 0, payload=params_to_bytes(noise))
    assert not verify_local_model(tx, holdout, model, w, threshold=1.05)


def test_verify_local_model_nan_and_dim_errors():
    model, holdout, w = _model_context()
    net, led = make_ledger()
    bad = w.copy()
    bad[0] = np.nan
    tx = tx_for(led, 0, payload=params_to_bytes(bad))
    with pytest.raises(LedgerError):
        verify_local_model(tx, holdout, model, w)
    short = tx_for(led, 0, payload=params_to_bytes(w[:-1]))
    with pytest.raises(LedgerError):
        verify_local_model(short, holdout, model, w)


def test_tampered_training_tx_gets_no_pay_block_still_accepted():
    model, holdout, w = _model_context()
    net, led = make_ledger()
    good = tx_for(led, 0, payload=params_to_bytes(w), t=0.0)
    led.submit(good)
    # author 1 signs a tampered (noise) model: valid signature, bad content
    rng = np.random.default_rng(1)
    bad = tx_for(led, 1, payload=params_to_bytes(rng.normal(0, 5, w.shape)),
                 t=0.1)
    led.submit(bad)
    before = led.stakes.coins.copy()
    block = led.produce_block(led.scheduled_producer())
    accepted, flags, delta = led.validate_block(
        block, verification_context=(holdout, model, w))
    assert accepted
    assert flags == [True, False]
    assert delta[0] == led.reward_coins
    assert delta[1] == 0.0
    np.testing.assert_allclose(led.stakes.coins,
                               before + np.array([1.0, 0.0, 0.0]))
    verified = led.verified_training_payloads(block)
    assert set(verified) == {0}
    np.testing.assert_allclose(verified[0], w)


def test_stake_conservation_and_rewards():
    net, led = make_ledger(initial_pool=100.0, reward_coins=2.0)
    assert led.stakes.coins.sum() == pytest.approx(100.0)
    model, holdout, w = _model_context()
    led.submit(tx_for(led, 2, payload=params_to_bytes(w)))
    block = led.produce_block(led.scheduled_producer())
    led.validate_block(block, verification_context=(holdout, model, w))
    assert led.stakes.coins.sum() == pytest.approx(102.0)


def test_chain_replay_and_export_roundtrip(tmp_path):
    net, led = make_ledger()
    for slot in range(4):
        led.submit(tx_for(led, slot % 3, kind="twin-data", t=float(slot)))
        block = led.produce_block(led.scheduled_producer())
        led.validate_block(block)
    head = led.head_hash
    assert replay_chain(led.blocks) == head
    path = tmp_path / "chain.bin"
    led.export_chain(path)
    blocks = Ledger.import_chain(path)
    assert replay_chain(blocks) == head
    assert len(led.summary().splitlines()) == 4


def test_block_interval_policy():
    assert block_interval_policy(0.4, 1) == pytest.approx(0.4)
    assert block_interval_policy(0.4, 5) == pytest.approx(2.0)
    with pytest.raises(LedgerError):
        block_interval_policy(0.4, 0)


def test_params_roundtrip():
    w = np.linspace(-1, 1, 7)
    np.testing.assert_array_equal(params_from_bytes(params_to_bytes(w)), w)
