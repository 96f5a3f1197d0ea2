import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isdnn_lab.airsim import gen_pilots
from isdnn_lab.baselines import diag_init, ls_estimate
from isdnn_lab.channel import gen_structured, random_structured_params, ula
from isdnn_lab.composite import compose_channelspace, decompose_channelspace
from isdnn_lab.errors import ConfigError, DimensionError, NumericError
from isdnn_lab.network import (
    LayerState,
    System,
    estimate,
    forward,
    init_network,
    layer_forward,
    parameter_count,
    run,
    sisdnn_forward,
)
from isdnn_lab.rng import SeededRng


def _net(K=2, nt=2, nr=3, seed=0, **kw):
    return init_network(K, nt, nr, SeededRng(seed), **kw)


def _zero_memory(net):
    for p in net.layers:
        p.w1[:] = 0
        p.w2[:] = 0
        p.b1[:] = 0
        p.b2[:] = 0
    return net


def _batch(rng, n=4, nt=2, nr=3, npl=3, noise=0.1):
    X = np.stack([gen_pilots(npl, nt, rng) for _ in range(n)])
    H = rng.complex_gaussian((n, nt, nr))
    Y = X @ H + rng.complex_gaussian((n, npl, nr), noise)
    return X, Y, H


def test_parameter_counts():
    assert parameter_count(4, 64) == 132104
    assert parameter_count(5, 64) == 165130
    assert _net(3, 2, 5).n_learnable == parameter_count(3, 5)
    with pytest.raises(ConfigError):
        parameter_count(0, 4)


def test_init_ranges():
    net = _net(4, 2, 8)
    bound = 1 / np.sqrt(16)
    for p in net.layers:
        assert 0 <= p.alpha1 < 1 and p.alpha2 == 0.5
        assert np.abs(p.w1).max() <= bound and np.abs(p.w2).max() <= bound
        assert not p.b1.any() and not p.b2.any()
    assert net.e1.shape == (4, 16) and net.e1.min() >= 0 and net.e1.max() < 1


def test_init_rejects_options():
    with pytest.raises(ConfigError):
        _net(psi="relu")
    with pytest.raises(ConfigError):
        _net(e1_mode="zeros")
    with pytest.raises(ConfigError):
        _net(0)


def test_first_estimate_is_diag_init(rng):
    X, Y, _ = _batch(rng)
    _, snaps = forward(_net(), X, Y)
    np.testing.assert_allclose(snaps[0], diag_init(X, Y), atol=1e-14)
    assert len(snaps) == 3


def test_pure_jacobi_when_memory_and_gates_off(rng):
    X, Y, _ = _batch(rng)
    net = _zero_memory(_net(3))
    for p in net.layers:
        p.alpha1[...] = 0.7
        p.alpha2[...] = 0.0
    sysm = System.build(X, Y)
    H = sysm.d_inv * sysm.q
    for _ in range(3):
        H = H + sysm.d_inv * (sysm.q - sysm.G @ H)
    np.testing.assert_allclose(forward(net, X, Y)[0], H, atol=1e-12)


def test_alpha2_one_freezes_estimate(rng):
    X, Y, _ = _batch(rng)
    net = _net(3)
    for p in net.layers:
        p.alpha2[...] = 1.0
    h, snaps = forward(net, X, Y)
    np.testing.assert_allclose(h, snaps[0], atol=0)


def test_ls_is_fixed_point_without_memory(rng):
    X, Y, _ = _batch(rng)
    sysm = System.build(X, Y)
    h_ls = ls_estimate(X, Y)
    net = _zero_memory(_net(1))
    state, _ = layer_forward(LayerState(h_ls, net.e1), net.layers[0], sysm)
    np.testing.assert_allclose(state.h_hat, h_ls, atol=1e-10)
    np.testing.assert_allclose(state.e_prev, 0, atol=1e-10)


def _scalar_layer(x, y, h, e_prev, w1, b1, w2, b2, a1, a2):
    # independent 1x1 oracle in plain Python on 2x2 composite lists
    a, b = x.real, x.imag
    Xc = [[a, b], [-b, a]]
    Yc = [[y.real, y.imag], [-y.imag, y.real]]
    G = [[sum(Xc[k][i] * Xc[k][j] for k in range(2)) for j in range(2)] for i in range(2)]
    q = [[sum(Xc[k][i] * Yc[k][j] for k in range(2)) for j in range(2)] for i in range(2)]
    mm = lambda A, B: [[sum(A[i][k] * B[k][j] for k in range(2)) for j in range(2)] for i in range(2)]
    gh = mm(G, h)
    e_new = [[(q[i][j] - gh[i][j]) / G[i][i] for j in range(2)] for i in range(2)]
    z = mm(e_prev, w1)
    act = [[np.tanh(z[i][j] + b1[j]) for j in range(2)] for i in range(2)]
    m = mm(act, w2)
    e_mem = [[m[i][j] + b2[j] for j in range(2)] for i in range(2)]
    mu = [[h[i][j] + e_new[i][j] + a1 * e_mem[i][j] for j in range(2)] for i in range(2)]
    return [[(1 - a2) * mu[i][j] + a2 * h[i][j] for j in range(2)] for i in range(2)], e_new


def test_scalar_oracle_two_layers():
    r = SeededRng(99)
    net = _net(2, 1, 1, seed=4)
    x = np.array([[0.3 - 0.9j]])
    y = np.array([[0.7 + 0.2j]])
    for p in net.layers:
        p.b1[:] = r.gaussian(2, 0, 0.3)
        p.b2[:] = r.gaussian(2, 0, 0.3)
    h_net, _ = forward(net, x, y)
    G = abs(x[0, 0]) ** 2
    q = np.conj(x[0, 0]) * y[0, 0]
    h = [[q.real / G, q.imag / G], [-q.imag / G, q.real / G]]
    e = net.e1.tolist()
    for p in net.layers:
        h, e = _scalar_layer(x[0, 0], y[0, 0], h, e, p.w1.tolist(), p.b1.tolist(), p.w2.tolist(),
                             p.b2.tolist(), float(p.alpha1), float(p.alpha2))
    np.testing.assert_allclose(h_net[0], np.array(h), atol=1e-12)


def test_batch_equals_per_sample(rng):
    X, Y, _ = _batch(rng, n=5)
    net = _net(3)
    batched = forward(net, X, Y)[0]
    for b in range(5):
        np.testing.assert_allclose(batched[b], forward(net, X[b], Y[b])[0][0], atol=1e-12)


def test_psi_none_is_linear_memory(rng):
    X, Y, _ = _batch(rng)
    net = _net(1, psi="none")
    p = net.layers[0]
    sysm = System.build(X, Y)
    h0 = sysm.d_inv * sysm.q
    e_mem = net.e1 @ p.w1 @ p.w2
    mu = h0 + sysm.d_inv * (sysm.q - sysm.G @ h0) + p.alpha1 * e_mem
    np.testing.assert_allclose(forward(net, X, Y)[0], 0.5 * mu + 0.5 * h0, atol=1e-12)


def test_unit_phases_make_structured_equal_unstructured(rng):
    X, Y, _ = _batch(rng)
    net = _net(3)
    snet = net.copy()
    snet.mode = "structured"
    ones = np.ones((4, 2, 3), complex)
    _, h_s = sisdnn_forward(snet, X, Y, ones)
    np.testing.assert_allclose(h_s, estimate(net, X, Y), atol=1e-12)


def _los_batch(rng, n=3, nt=2, nr=6, npl=4):
    geom = ula(nr)
    reals = [gen_structured(random_structured_params(nt, geom, rng), nt) for _ in range(n)]
    H = np.stack([r.H for r in reals])
    ph = np.stack([r.phases for r in reals])
    X = np.stack([gen_pilots(npl, nt, rng) for _ in range(n)])
    return X, X @ H, H, ph


def test_sisdnn_noiseless_column_ls_oracle(rng):
    X, Y, H, ph = _los_batch(rng)
    nt, nr = H.shape[1:]
    beta = np.empty_like(H)
    for b in range(X.shape[0]):
        for l in range(nr):
            Xl = X[b] * ph[b, :, l][None, :]
            beta[b, :, l] = np.linalg.lstsq(Xl, Y[b, :, l], rcond=None)[0]
    np.testing.assert_allclose(beta * ph, H, atol=1e-10)
    # the structured system residual vanishes at the true path gains
    sysm = System.build(X, Y, ph)
    bc = compose_channelspace(beta)
    np.testing.assert_allclose(sysm.q - sysm.gram(bc), 0, atol=1e-10)
    net = _zero_memory(_net(1, nt, nr, mode="structured"))
    state, _ = layer_forward(LayerState(bc, net.e1), net.layers[0], sysm)
    np.testing.assert_allclose(decompose_channelspace(state.h_hat) * ph, H, atol=1e-10)


def test_structured_gram_symmetric_with_same_diagonal(rng):
    X, Y, _, ph = _los_batch(rng, n=1, nt=2, nr=3)
    sysm = System.build(X, Y, ph)
    A = rng.gaussian((1, 4, 6))
    B = rng.gaussian((1, 4, 6))
    assert np.sum(A * sysm.gram(B)) == pytest.approx(np.sum(sysm.gram(A) * B), rel=1e-12)
    for i in range(4):
        for j in range(6):
            E = np.zeros((1, 4, 6))
            E[0, i, j] = 1
            assert sysm.gram(E)[0, i, j] == pytest.approx(sysm.G[0, i, i], rel=1e-12)


def test_structured_loss_matches_channel_error(rng):
    X, Y, H, ph = _los_batch(rng)
    net = _net(2, 2, 6, mode="structured")
    beta_hat, h_hat = sisdnn_forward(net, X, Y + rng.complex_gaussian(Y.shape, 0.1), ph)
    beta = H * ph.conj()
    assert np.sum(np.abs(beta - beta_hat) ** 2) == pytest.approx(np.sum(np.abs(H - h_hat) ** 2), rel=1e-10)


def test_errors(rng):
    X, Y, _ = _batch(rng)
    with pytest.raises(DimensionError):
        forward(_net(1, 2, 4), X, Y)
    with pytest.raises(ConfigError):
        sisdnn_forward(_net(mode="structured"), X, Y, None)
    with pytest.raises(ConfigError):
        System.build(X, Y, np.full((4, 2, 3), 2.0 + 0j))
    bad = Y.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        forward(_net(), X, bad)
    net = _net(2)
    net.layers[1].alpha1[...] = 1e308
    net.layers[1].w2[:] = 1e308
    with pytest.raises(NumericError, match="layer 1"):
        forward(net, X, Y)


def test_per_sample_e1_is_seeded(rng):
    X, Y, _ = _batch(rng)
    net = _net(2, e1_mode="per-sample")
    a = estimate(net, X, Y, rng=SeededRng(3, 1))
    b = estimate(net, X, Y, rng=SeededRng(3, 1))
    c = estimate(net, X, Y, rng=SeededRng(3, 2))
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    res = run(net, System.build(X, Y), rng=SeededRng(3, 1))
    assert res.e1.shape == (4, 4, 6)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), nt=st.integers(1, 3), extra=st.integers(0, 2), nr=st.integers(1, 4))
def test_network_deterministic_and_finite(seed, nt, extra, nr):
    r = SeededRng(seed)
    X = np.stack([gen_pilots(nt + extra, nt, r) for _ in range(2)])
    Y = r.complex_gaussian((2, nt + extra, nr))
    net = init_network(2, nt, nr, SeededRng(seed, 5))
    a = forward(net, X, Y)[0]
    assert np.all(np.isfinite(a))
    assert np.array_equal(a, forward(net, X, Y)[0])


def test_reference_table_values():
    # Tanh memory path, 2Nr x 2Nr maps, alpha1 ~ U[0,1), alpha2 = 0.5, E1 ~ U[0,1)
    net = init_network(5, 8, 64, SeededRng(1))
    assert net.psi == "tanh"
    assert all(p.w1.shape == (128, 128) and p.w2.shape == (128, 128) for p in net.layers)
    assert all(p.alpha2 == 0.5 and 0 <= p.alpha1 < 1 for p in net.layers)
    assert 0 <= net.e1.min() and net.e1.max() < 1
    assert parameter_count(1, 1) == 14


def test_gated_memory_single_layer_is_jacobi(rng):
    X, Y, _ = _batch(rng)
    net = _net(1)
    net.layers[0].alpha1[...] = 0.0
    net.layers[0].alpha2[...] = 0.0
    net.layers[0].b2[:] = rng.gaussian(6)
    sysm = System.build(X, Y)
    h1 = sysm.d_inv * sysm.q
    np.testing.assert_allclose(forward(net, X, Y)[0], h1 + sysm.d_inv * (sysm.q - sysm.G @ h1), atol=1e-12)


def test_identical_samples_identical_outputs(rng):
    X, Y, _ = _batch(rng, n=1)
    out = forward(_net(2), np.repeat(X, 4, axis=0), np.repeat(Y, 4, axis=0))[0]
    assert all(np.array_equal(out[0], out[b]) for b in range(4))
