import math

import numpy as np
import pytest

from dtwn import fl
from dtwn.network import Association, DigitalTwin


def make_twins(n_twins=4, per=30, num_features=4, num_classes=2, seed=0):
    X, y = fl.make_synthetic_classification(n_twins * per, num_features,
                                            num_classes, seed=seed)
    shards = fl.partition_iid(X, y, n_twins, seed=seed + 1)
    return [DigitalTwin(i, i, len(Xi), Xi, yi)
            for i, (Xi, yi) in enumerate(shards)]


def numeric_grad(f, w, eps=1e-6):
    g = np.zeros_like(w)
    for i in range(len(w)):
        wp, wm = w.copy(), w.copy()
        wp[i] += eps
        wm[i] -= eps
        g[i] = (f(wp) - f(wm)) / (2 * eps)
    return g


def test_local_loss_uniform_prediction_is_ln2():
    model = fl.LogisticRegression(4, 2)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 4))
    y = np.array([0, 1] * 25)
    assert fl.local_loss(model.init_params(), model, X, y) \
        == pytest.approx(math.log(2), rel=1e-12)


def test_local_loss_separable_goes_small():
    model = fl.LogisticRegression(1, 2)
    X = np.array([[-1.0]] * 10 + [[1.0]] * 10)
    y = np.array([0] * 10 + [1] * 10)
    w = np.array([-50.0, 50.0, 0.0, 0.0])   # large-margin weights
    assert model.loss(w, X, y) < 1e-3


def test_local_loss_duplication_invariant():
    model = fl.LogisticRegression(3, 2)
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 3))
    y = rng.integers(0, 2, 20)
    w = rng.normal(size=model.dim)
    a = model.loss(w, X, y)
    b = model.loss(w, np.vstack([X, X]), np.concatenate([y, y]))
    assert a == pytest.approx(b, rel=1e-12)


def test_local_loss_empty_dataset():
    model = fl.LogisticRegression(2, 2)
    with pytest.raises(ValueError):
        fl.local_loss(model.init_params(), model,
                      np.empty((0, 2)), np.empty(0, dtype=int))


@pytest.mark.parametrize("kind,kw", [("logistic", {}),
                                     ("dense", {"hidden": 8})])
def test_analytic_gradients_match_central_differences(kind, kw):
    model = fl.make_model(kind, 5, 3, **kw)
    rng = np.random.default_rng(2)
    X = rng.normal(size=(12, 5))
    y = rng.integers(0, 3, 12)
    for _ in range(10):
        w = rng.normal(size=model.dim)
        _, g = model.loss_and_grad(w, X, y)
        gn = numeric_grad(lambda v: model.loss(v, X, y), w)
        denom = max(np.linalg.norm(gn), 1e-12)
        assert np.linalg.norm(g - gn) / denom < 1e-5


def test_local_train_zero_learning_rate_rejected():
    with pytest.raises(ValueError):
        fl.TrainingTask(fl.LogisticRegression(2, 2), learning_rate=0.0)


def test_local_train_single_fullbatch_step_matches_hand_gradient():
    model = fl.LogisticRegression(2, 2)
    twin = make_twins(1, per=16, num_features=2)[0]
    task = fl.TrainingTask(model, learning_rate=0.3, theta_local=0.5, seed=5)
    assert task.local_iters == 1
    w0 = model.init_params()
    _, g = model.loss_and_grad(w0, twin.features, twin.labels)
    w1, _ = fl.local_train(twin, w0, task, 1.0)
    np.testing.assert_allclose(w1, w0 - 0.3 * g, rtol=1e-12)


def test_local_train_fullbatch_descent_monotone():
    model = fl.LogisticRegression(4, 2)
    twin = make_twins(1, per=60)[0]
    w = model.init_params()
    task = fl.TrainingTask(model, learning_rate=0.2, theta_local=0.5, seed=6)
    prev = model.loss(w, twin.features, twin.labels)
    for _ in range(50):
        w, _ = fl.local_train(twin, w, task, 1.0)
        cur = model.loss(w, twin.features, twin.labels)
        assert cur <= prev + 1e-12
        prev = cur


def test_local_train_empty_twin():
    model = fl.LogisticRegression(2, 2)
    twin = DigitalTwin(0, 0, 0, np.empty((0, 2)), np.empty(0, dtype=int))
    task = fl.TrainingTask(model)
    with pytest.raises(ValueError):
        fl.local_train(twin, model.init_params(), task, 1.0)


def test_bs_aggregate_modes():
    one = fl.bs_aggregate([(np.array([3.0]), 7.0)])
    np.testing.assert_allclose(one, [3.0])
    even = fl.bs_aggregate([(np.array([0.0]), 5.0), (np.array([2.0]), 5.0)])
    np.testing.assert_allclose(even, [1.0])
    lit = fl.bs_aggregate([(np.array([1.0]), 2.0), (np.array([1.0]), 4.0)],
                          mode="literal")
    np.testing.assert_allclose(lit, [3.0])   # (1/2)(2*1 + 4*1)


def test_bs_aggregate_errors():
    with pytest.raises(ValueError):
        fl.bs_aggregate([])
    with pytest.raises(ValueError):
        fl.bs_aggregate([(np.zeros(2), 1.0), (np.zeros(3), 1.0)])
    with pytest.raises(ValueError):
        fl.bs_aggregate([(np.zeros(2), 0.0)])


def test_bs_aggregate_order_invariant_and_homogeneous():
    rng = np.random.default_rng(3)
    ms = [(rng.normal(size=4), float(rng.integers(1, 9))) for _ in range(5)]
    a = fl.bs_aggregate(ms)
    b = fl.bs_aggregate(ms[::-1])
    np.testing.assert_allclose(a, b, rtol=1e-12)
    scaled = fl.bs_aggregate([(3.0 * w, d) for w, d in ms])
    np.testing.assert_allclose(scaled, 3.0 * a, rtol=1e-12)


def test_global_aggregate_modes():
    same = [(np.array([1.5]), 2.0), (np.array([1.5]), 9.0)]
    np.testing.assert_allclose(fl.global_aggregate(same), [1.5])
    np.testing.assert_allclose(fl.global_aggregate(same, "literal"), [1.5])
    lit = fl.global_aggregate([(np.array([0.0]), 1.0), (np.array([4.0]), 1.0)],
                              mode="literal")
    np.testing.assert_allclose(lit, [2.0])


def test_hierarchical_equals_flat_for_random_partitions():
    rng = np.random.default_rng(4)
    n = 10
    for _ in range(50):
        ws = [rng.normal(size=6) for _ in range(n)]
        sizes = rng.integers(1, 100, n).astype(float)
        owner = rng.integers(0, 3, n)
        bs_models = []
        for bs in range(3):
            members = np.nonzero(owner == bs)[0]
            if len(members) == 0:
                continue
            local = [(ws[i], sizes[i]) for i in members]
            bs_models.append((fl.bs_aggregate(local),
                              sum(sizes[i] for i in members)))
        two_level = fl.global_aggregate(bs_models)
        flat = np.sum([s * w for w, s in zip(ws, sizes)], axis=0) / sizes.sum()
        np.testing.assert_allclose(two_level, flat, atol=1e-12)


def test_federated_round_degenerate_single_twin():
    model = fl.LogisticRegression(4, 2)
    twins = make_twins(1, per=40)
    assoc = Association([t.data_size for t in twins], 1)
    assoc.assign(0, 0)
    task = fl.TrainingTask(model, learning_rate=0.2, seed=9)
    w0 = model.init_params()
    w_round, loss, _ = fl.federated_round(w0, twins, assoc, task)
    w_local, _ = fl.local_train(twins[0], w0, task, 1.0)
    np.testing.assert_allclose(w_round, w_local, rtol=1e-12)
    assert loss == pytest.approx(model.loss(w_round, twins[0].features,
                                            twins[0].labels))


def test_federated_round_converges_iid():
    model = fl.LogisticRegression(8, 2)
    twins = make_twins(20, per=40, num_features=8)
    assoc = Association([t.data_size for t in twins], 3)
    for i in range(20):
        assoc.assign(i, i % 3)
    task = fl.TrainingTask(model, learning_rate=0.5, seed=10)
    w = model.init_params()
    loss0 = fl.global_loss(w, twins, model)
    for _ in range(10):
        w, loss, _ = fl.federated_round(w, twins, assoc, task)
    assert loss < loss0


def test_federated_round_deterministic():
    model = fl.LogisticRegression(4, 2)
    twins = make_twins(6)
    assoc = Association([t.data_size for t in twins], 2)
    for i in range(6):
        assoc.assign(i, i % 2)
    task = fl.TrainingTask(model, seed=11)
    b = np.full(6, 0.5)
    w1, l1, _ = fl.federated_round(model.init_params(), twins, assoc, task, b)
    w2, l2, _ = fl.federated_round(model.init_params(), twins, assoc, task, b)
    np.testing.assert_array_equal(w1, w2)
    assert l1 == l2


def test_estimate_smoothness_quadratic():
    lam = 3.7
    traj = []
    w = np.array([5.0, -2.0])
    for _ in range(6):
        traj.append((w.copy(), lam * w))
        w = w - 0.1 * lam * w
    diag = fl.estimate_smoothness(traj)
    assert diag.lipschitz_estimate == pytest.approx(lam, rel=1e-9)


def test_estimate_smoothness_logistic_bound():
    model = fl.LogisticRegression(4, 2)
    twin = make_twins(1, per=80)[0]
    w = model.init_params()
    traj = []
    for _ in range(20):
        _, g = model.loss_and_grad(w, twin.features, twin.labels)
        traj.append((w.copy(), g))
        w = w - 0.5 * g
    diag = fl.estimate_smoothness(traj)
    # classical multinomial-logistic Hessian bound
    bound = 0.25 * np.max(np.linalg.norm(twin.features, axis=1)) ** 2
    assert diag.lipschitz_estimate <= bound + 1e-9


def test_estimate_smoothness_converged_ratio():
    model = fl.LogisticRegression(4, 2, l2=0.1)
    twin = make_twins(1, per=80)[0]
    w = model.init_params()
    traj = []
    # one trajectory point per local solve of 10 descent steps
    for _ in range(10):
        _, g = model.loss_and_grad(w, twin.features, twin.labels)
        traj.append((w.copy(), g))
        for _ in range(10):
            _, g = model.loss_and_grad(w, twin.features, twin.labels)
            w = w - 0.5 * g
    assert fl.estimate_smoothness(traj[-2:]).grad_norm_ratio <= 0.5


def test_estimate_smoothness_errors():
    with pytest.raises(ValueError):
        fl.estimate_smoothness([(np.zeros(2), np.zeros(2))])
    same = [(np.ones(2), np.ones(2)), (np.ones(2), np.ones(2))]
    with pytest.raises(ValueError):
        fl.estimate_smoothness(same)


def test_dataset_roundtrip(tmp_path):
    X, y = fl.make_synthetic_classification(30, 5, 3, seed=1)
    path = tmp_path / "data.csv"
    fl.save_dataset(path, X, y)
    X2, y2 = fl.load_dataset(path)
    np.testing.assert_allclose(X2, X, rtol=1e-15)
    np.testing.assert_array_equal(y2, y)
