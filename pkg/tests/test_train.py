import json

import numpy as np
import pytest

from isdnn_lab.airsim import DatasetConfig, gen_dataset, gen_pilots, transmit
from isdnn_lab.channel import gen_rayleigh
from isdnn_lab.errors import ConfigError, DimensionError, NumericError, StorageError
from isdnn_lab.network import init_network
from isdnn_lab.rng import SeededRng
from isdnn_lab.train import (
    AdamState,
    EarlyStopping,
    TrainConfig,
    adam_step,
    backward,
    batch_indices,
    fresh_network,
    load_checkpoint,
    load_train_state,
    mse_loss,
    save_checkpoint,
    save_train_state,
    train_loop,
    validation_nmse,
    write_history_csv,
)

from oracles import finite_difference_error


def _problem(seed, nt=2, nr=3, npl=2, bs=2):
    r = SeededRng(seed, 5)
    X = np.stack([gen_pilots(npl, nt, r) for _ in range(bs)])
    H = np.stack([gen_rayleigh(nt, nr, r).H for _ in range(bs)])
    Y = np.stack([transmit(X[i], H[i], 10.0, r) for i in range(bs)])
    return X, Y, H


def test_mse_loss_hand_value():
    assert mse_loss(np.array([[1 + 1j, 0]]), np.array([[0, 2j]])) == pytest.approx((2 + 4) / 2)
    with pytest.raises(DimensionError):
        mse_loss(np.ones((2, 2)), np.ones((2, 3)))


@pytest.mark.parametrize("psi,e1_mode", [("none", "shared"), ("tanh", "per-sample"), ("none", "learned")])
def test_gradients_match_finite_differences(psi, e1_mode):
    X, Y, H = _problem(3)
    net = init_network(2, 2, 3, SeededRng(8), psi=psi, e1_mode=e1_mode)
    err = finite_difference_error(net, X, Y, H, rng_seed=1 if e1_mode == "per-sample" else None)
    assert err < 1e-4


def test_adam_first_step_hand_computed():
    p = [np.array([1.0, -2.0, 0.5])]
    g = [np.array([0.3, -0.1, 0.0])]
    st = AdamState.zeros_like(p)
    adam_step(p, g, st, 0.01)
    # bias-corrected first step equals lr * g / (|g| + eps)
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g[0] / (np.abs(g[0]) + 1e-8)
    np.testing.assert_allclose(p[0], expected, rtol=1e-12)
    assert st.t == 1
    with pytest.raises(ConfigError):
        adam_step(p, g, st, 0.0)


def test_adam_second_step():
    p = [np.array([0.0])]
    st = AdamState.zeros_like(p)
    adam_step(p, [np.array([1.0])], st, 0.1)
    adam_step(p, [np.array([2.0])], st, 0.1)
    m = (0.9 * 0.1 + 0.2) / (1 - 0.81)
    v = (0.999 * 0.001 + 0.004) / (1 - 0.999 ** 2)
    assert p[0][0] == pytest.approx(-0.1 / (1 + 1e-8) - 0.1 * m / (np.sqrt(v) + 1e-8), rel=1e-12)


def test_early_stopping_counts_evaluations():
    es = EarlyStopping(3)
    flags = [es.update(s) for s in [1.0, 0.9, 0.95, 0.96, 0.97]]
    assert flags == [False, False, False, False, True]
    assert es.best == 0.9 and es.best_index == 1
    es = EarlyStopping(2)
    assert [es.update(s) for s in [1.0, 1.0, 0.5, 0.6]] == [False, False, False, False]
    with pytest.raises(ConfigError):
        EarlyStopping(0)


def test_batch_indices_epochs():
    seen = np.concatenate([batch_indices(10, 3, 0, it) for it in range(3)])
    assert len(seen) == 9 and len(set(seen.tolist())) == 9
    assert np.array_equal(batch_indices(10, 3, 0, 4), batch_indices(10, 3, 0, 4))
    assert len(batch_indices(5, 50, 0, 0)) == 5


@pytest.fixture(scope="module")
def sets():
    train = gen_dataset(DatasetConfig(nt=2, nr=4, n_pilots=2, count=400, seed=31))
    val = gen_dataset(DatasetConfig(nt=2, nr=4, n_pilots=2, count=100, seed=32))
    return train, val


def _cfg(**kw):
    base = dict(batch_size=32, learning_rate=1e-3, max_iterations=200, eval_every=50, patience=3, seed=4)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_iterations_returns_initial_network(sets):
    net = fresh_network(2, 2, 4, 0)
    res = train_loop(net, *sets, _cfg(max_iterations=0))
    assert len(res.history) == 1 and res.history[0].iteration == 0
    assert all(np.array_equal(a, b) for a, b in zip(res.net.arrays(), net.arrays()))
    assert res.best_val == pytest.approx(validation_nmse(net, sets[1]))


def test_training_descends_and_determinism(sets):
    a = train_loop(fresh_network(2, 2, 4, 0), *sets, _cfg())
    b = train_loop(fresh_network(2, 2, 4, 0), *sets, _cfg())
    assert str(a.history) == str(b.history)
    losses = a.state.losses
    assert np.mean(losses[-50:]) < np.mean(losses[:50])
    assert a.best_val <= a.history[0].val_nmse
    assert [r.iteration for r in a.history] == [0, 50, 100, 150, 200]


def test_early_stop_returns_best(sets):
    scores = iter([0.5, 0.4, 0.45, 0.46, 0.47, 0.1])
    res = train_loop(fresh_network(1, 2, 4, 0), *sets, _cfg(eval_every=10), validate=lambda n: next(scores))
    assert res.state.stopped and res.state.iteration == 40
    assert res.state.best_iteration == 10 and res.best_val == 0.4


def test_resume_matches_uninterrupted(sets, tmp_path):
    full = train_loop(fresh_network(2, 2, 4, 0), *sets, _cfg(max_iterations=150))
    part = train_loop(fresh_network(2, 2, 4, 0), *sets, _cfg(max_iterations=100))
    save_train_state(tmp_path / "st", part.state)
    state = load_train_state(tmp_path / "st")
    resumed = train_loop(state.net, *sets, _cfg(max_iterations=150), state=state)
    assert str(resumed.history) == str(full.history)
    for x, y in zip(resumed.state.net.arrays(), full.state.net.arrays()):
        assert np.array_equal(x, y)


def test_divergence_is_reported(sets):
    net = fresh_network(1, 2, 4, 0)
    net.layers[0].alpha1[...] = 1e7
    net.layers[0].w2[:] = 1e7
    with pytest.raises(NumericError):
        train_loop(net, *sets, _cfg(max_iterations=5))


def test_incompatible_sets(sets):
    with pytest.raises(DimensionError):
        train_loop(fresh_network(1, 2, 8, 0), *sets, _cfg())
    with pytest.raises(ConfigError):
        train_loop(fresh_network(1, 2, 4, 0, mode="structured"), *sets, _cfg())
    with pytest.raises(ConfigError):
        _cfg(learning_rate=-1).validate()


def test_checkpoint_round_trip(tmp_path, sets):
    res = train_loop(fresh_network(2, 2, 4, 0, e1_mode="learned"), *sets, _cfg(max_iterations=50))
    p = save_checkpoint(tmp_path / "c.json", res.state.net, res.state.adam, res.history, meta={"x": 1})
    ck = load_checkpoint(p, layers=2, nt=2, nr=4)
    for a, b in zip(ck.net.arrays(), res.state.net.arrays()):
        assert np.array_equal(a, b)
    for a, b in zip(ck.adam.m + ck.adam.v, res.state.adam.m + res.state.adam.v):
        assert np.array_equal(a, b)
    assert str(ck.history) == str(res.history) and ck.meta == {"x": 1} and ck.adam.t == 50
    man = json.loads(p.read_text())
    assert man["parameter_count"] == 2 * (2 * 64 + 16 + 2)


def test_checkpoint_errors(tmp_path):
    p = save_checkpoint(tmp_path / "c.json", fresh_network(4, 2, 4, 0))
    with pytest.raises(DimensionError):
        load_checkpoint(p, layers=5)
    blob = tmp_path / "c.bin"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(StorageError):
        load_checkpoint(p)
    man = json.loads(p.read_text())
    man["format_version"] = 99
    p.write_text(json.dumps(man))
    with pytest.raises(StorageError):
        load_checkpoint(p)
    with pytest.raises(StorageError):
        load_checkpoint(tmp_path / "none.json")


def test_history_csv(tmp_path, sets):
    res = train_loop(fresh_network(1, 2, 4, 0), *sets, _cfg(max_iterations=50))
    lines = write_history_csv(tmp_path / "h.csv", res.history).read_text().splitlines()
    assert lines[0] == "iteration,train_loss,val_nmse" and lines[1].startswith("0,nan,")
    assert len(lines) == 3


def test_loss_constructed_cases():
    assert mse_loss(np.array([[1 + 0j]]), np.array([[0j]])) == 1.0
    H = np.ones((2, 4), complex)
    est = np.zeros_like(H)
    full = mse_loss(H, est)
    est[:, :2] = H[:, :2]
    assert mse_loss(H, est) == pytest.approx(full / 2)


def test_zero_loss_gives_zero_gradients():
    from isdnn_lab.network import estimate

    X, Y, _ = _problem(4)
    net = init_network(2, 2, 3, SeededRng(1))
    target = estimate(net, X, Y)
    loss, grads = backward(net, X, Y, target)
    assert loss < 1e-28
    assert max(float(np.abs(g).max()) for g in grads) < 1e-12


def test_alpha2_gradient_vanishes_at_fixed_point():
    # orthogonal pilots: diag-init is LS, so with alpha1 = 0 every mu equals its input
    nt, nr = 2, 3
    r = SeededRng(6)
    X = (np.fft.fft(np.eye(nt)) / np.sqrt(nt))[None]
    H = r.complex_gaussian((1, nt, nr))
    Y = X @ H + r.complex_gaussian((1, nt, nr), 0.3)
    net = init_network(3, nt, nr, SeededRng(2))
    for p in net.layers:
        p.alpha1[...] = 0.0
    loss, grads = backward(net, X, Y, H)
    assert loss > 1e-3
    g_alpha2 = [g for (name, _), g in zip(net.named_arrays(), grads) if name.endswith("alpha2")]
    assert max(abs(float(g)) for g in g_alpha2) < 1e-12


def test_adam_zero_gradient_and_sign():
    p = [np.array([1.0, 2.0, 3.0])]
    st = AdamState.zeros_like(p)
    adam_step(p, [np.array([0.0, 5.0, -0.2])], st, 1e-4)
    assert p[0][0] == 1.0 and p[0][1] < 2.0 and p[0][2] > 3.0
    q = [np.array([0.0])]
    adam_step(q, [np.array([1.0])], AdamState.zeros_like(q), 1e-4)
    assert q[0][0] == pytest.approx(-1e-4 / (1 + 1e-8), rel=1e-12)
