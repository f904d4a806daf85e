import itertools

import numpy as np
import pytest
from scipy.stats import chi2

from mgcn import autodiff as ad
from mgcn.errors import ConfigError, DataError, DivergenceError
from mgcn.graph import SimpleGraph
from mgcn.hypergraph import build_neighborhood_hypergraph
from mgcn.model import (ConvStructures, ModelConfig, calibrate_x0,
                        estimate_gains, forward_tensors, init_params)
from mgcn.training import (SGD, Adam, LossValue, NegativeSampler, TrainConfig,
                           embedding_loss, gradients, sample_negatives,
                           save_loss_trace, train_embeddings)

from helpers import random_graph, relative_error

from test_hypergraph import random_hypergraph


def small_instance(seed=31, n=10, d=4, activation="tanh", n_edges=3):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, 0.4)
    h = random_hypergraph(rng, n, n_edges)
    config = ModelConfig(layers=2, dim=d, activation=activation)
    params = init_params(n, config, seed=seed + 1)
    structs = ConvStructures(g, h)
    edges = g.edges()[:6]
    negs = rng.integers(0, n, size=(len(edges), 4))
    return structs, params, config, edges, negs


def test_sampler_law_small_support():
    # degrees (1, 2, 4): masses 1, 2^.75, 4^.75
    sampler = NegativeSampler(np.array([1.0, 2.0, 4.0]), m=5, seed=0)
    mass = np.array([1.0, 2.0 ** 0.75, 4.0 ** 0.75])
    want = mass / mass.sum()
    assert np.max(np.abs(sampler.probabilities - want)) <= 1e-12
    draws = sampler.sample(1_000_000)
    freq = np.bincount(draws, minlength=3) / 1_000_000
    assert np.max(np.abs(freq - want)) <= 0.01


def test_sampler_chi_square_on_100_nodes():
    rng = np.random.default_rng(301)
    degrees = rng.integers(0, 50, size=100).astype(float)
    degrees[degrees == 0] = 0.0
    sampler = NegativeSampler(degrees, m=5, seed=7)
    p = sampler.probabilities
    assert p[degrees == 0.0].sum() == 0.0
    n_draws = 1_000_000
    draws = sampler.sample(n_draws)
    counts = np.bincount(draws, minlength=100)
    support = p > 0
    expected = p[support] * n_draws
    stat = (((counts[support] - expected) ** 2) / expected).sum()
    dof = support.sum() - 1
    assert stat <= chi2.ppf(0.99, dof)


def test_sampler_degenerate_and_errors():
    sampler = NegativeSampler(np.array([0.0, 3.0, 0.0]), m=4, seed=0)
    assert set(sampler.sample(100).tolist()) == {1}
    assert sample_negatives(sampler, (0, 1)).shape == (8,)
    empty = NegativeSampler(np.array([1.0, 1.0]), m=0, seed=0)
    assert sample_negatives(empty, (0, 1)).shape == (0,)
    with pytest.raises(DataError, match="isolated"):
        NegativeSampler(np.zeros(5), m=5)
    with pytest.raises(ConfigError):
        NegativeSampler(np.ones(5), m=-1)


def test_sampler_never_draws_isolated():
    degrees = np.array([0.0, 1.0, 5.0, 0.0, 2.0])
    sampler = NegativeSampler(degrees, seed=3)
    draws = sampler.sample(20_000)
    assert not np.isin(draws, [0, 3]).any()


def test_embedding_loss_zero_vectors():
    x = ad.Tensor(np.zeros((4, 3)))
    lv = embedding_loss(x, np.array([[0, 1]]), np.zeros((1, 0)))
    assert lv.value == pytest.approx(np.log(0.5))
    assert lv.positive == pytest.approx(np.log(0.5))
    assert lv.negative_left == 0.0 and lv.negative_right == 0.0


def test_embedding_loss_single_positive_closed_form():
    rng = np.random.default_rng(307)
    a, b = rng.normal(size=3), rng.normal(size=3)
    x = ad.Tensor(np.stack([a, b]))
    lv = embedding_loss(x, np.array([[0, 1]]), np.zeros((1, 0)))
    z = float(a @ b)
    assert lv.value == pytest.approx(-np.log1p(np.exp(-z)), rel=1e-12)


def test_embedding_loss_matches_high_precision_oracle():
    rng = np.random.default_rng(311)
    n, d, m = 12, 4, 3
    xv = rng.normal(size=(n, d))
    edges = rng.integers(0, n, size=(10, 2))
    negs = rng.integers(0, n, size=(10, 2 * m))
    lv = embedding_loss(ad.Tensor(xv), edges, negs)

    hp = np.longdouble(0.0)
    xh = xv.astype(np.longdouble)

    def log_sig(z):
        return -np.log1p(np.exp(-z))

    for (i, j), row in zip(edges, negs):
        hp += log_sig(xh[i] @ xh[j])
        for k in row[:m]:
            hp += log_sig(-(xh[i] @ xh[k]))
        for k in row[m:]:
            hp += log_sig(-(xh[j] @ xh[k]))
    assert lv.value == pytest.approx(float(hp), rel=1e-12)
    assert lv.positive <= 0.0
    assert lv.negative_left <= 0.0 and lv.negative_right <= 0.0
    assert lv.loss == -lv.value


def test_stable_log_sigmoid_matches_naive_in_range():
    z = np.linspace(-30.0, 30.0, 2001)
    stable = ad.logsigmoid(ad.Tensor(z)).value
    naive = np.log(1.0 / (1.0 + np.exp(-z)))
    assert np.max(np.abs(stable - naive)) <= 1e-10


def fd_check_param(structs, params, config, edges, negs, tensor, mode="mgcn",
                   step=1e-5, tol=1e-5):
    lv, grads = gradients(structs, params, config, edges, negs, mode)
    trainable = params.trainable(mode)
    analytic = grads[trainable.index(tensor)]

    flat = tensor.value.ravel()
    fd = np.zeros_like(flat)
    for i in range(len(flat)):
        orig = flat[i]
        flat[i] = orig + step
        xp = forward_tensors(structs, params, config, mode)
        up = -embedding_loss(xp, edges, negs).value
        flat[i] = orig - step
        xm = forward_tensors(structs, params, config, mode)
        um = -embedding_loss(xm, edges, negs).value
        flat[i] = orig
        fd[i] = (up - um) / (2.0 * step)
    assert relative_error(analytic, fd.reshape(tensor.value.shape)) <= tol


def test_gradients_match_finite_differences_all_classes():
    structs, params, config, edges, negs = small_instance(seed=31)
    for tensor in [params.simple_w[0], params.simple_w[1], params.agg_w[0],
                   params.agg_b[1], params.hyper_w[0], params.hyper_w[1],
                   params.x0]:
        fd_check_param(structs, params, config, edges, negs, tensor)


def test_gradients_match_fd_gcn_mode():
    structs, params, config, edges, negs = small_instance(seed=37)
    for tensor in [params.simple_w[0], params.x0]:
        fd_check_param(structs, params, config, edges, negs, tensor,
                       mode="gcn")


def test_dead_rectifier_units_have_zero_gradient():
    structs, params, config, edges, negs = small_instance(seed=41,
                                                          activation="relu")
    params.x0.value[:] = 0.0  # every simple-layer pre-activation is 0
    _, grads = gradients(structs, params, config, edges, negs)
    trainable = params.trainable("mgcn")
    g_w1 = grads[trainable.index(params.simple_w[0])]
    assert np.all(g_w1 == 0.0)


def test_gradient_additivity_over_disjoint_batches():
    structs, params, config, edges, negs = small_instance(seed=43)
    _, g_all = gradients(structs, params, config, edges, negs)
    _, g_a = gradients(structs, params, config, edges[:3], negs[:3])
    _, g_b = gradients(structs, params, config, edges[3:], negs[3:])
    for ga, gb, gall in zip(g_a, g_b, g_all):
        assert np.max(np.abs(ga + gb - gall)) <= 1e-12


def two_clique_graph(size=20):
    edges = list(itertools.combinations(range(size), 2)) \
        + list(itertools.combinations(range(size, 2 * size), 2)) \
        + [(0, size)]
    return SimpleGraph.from_edges(2 * size, edges)


def test_train_zero_epochs_returns_init():
    g = two_clique_graph(5)
    h = build_neighborhood_hypergraph(g, 1)
    mc = ModelConfig(layers=2, dim=4)
    tc = TrainConfig(epochs=0, seed=1)
    res = train_embeddings(g, h, mc, tc)
    assert res.trace == [] and res.epochs_run == 0
    structs = ConvStructures(g, h)
    fresh = init_params(g.node_count, mc,
                        np.random.SeedSequence(1).spawn(3)[0],
                        gains=estimate_gains(structs))
    calibrate_x0(structs, fresh, mc)
    assert np.array_equal(res.params.x0.value, fresh.x0.value)
    for a, b in zip(res.params.trainable(), fresh.trainable()):
        assert np.array_equal(a.value, b.value)


def test_train_separates_two_cliques():
    # tanh here: the two balls are exactly interchangeable, so with a
    # rectifier the value-optimal all-zero output is reachable and sticky;
    # any smooth activation keeps the direction structure learnable
    g = two_clique_graph(20)
    h = build_neighborhood_hypergraph(g, 1)
    mc = ModelConfig(layers=2, dim=8, activation="tanh")
    tc = TrainConfig(learning_rate=0.01, epochs=120, seed=5)
    res = train_embeddings(g, h, mc, tc)
    x = res.embeddings
    norm = x / np.linalg.norm(x, axis=1, keepdims=True)
    cos = norm @ norm.T
    same = np.zeros((40, 40), dtype=bool)
    same[:20, :20] = True
    same[20:, 20:] = True
    np.fill_diagonal(same, False)
    intra = cos[same].mean()
    inter = cos[~same & ~np.eye(40, dtype=bool)].mean()
    assert intra - inter > 0.2


def test_train_deterministic_trace():
    g = two_clique_graph(8)
    h = build_neighborhood_hypergraph(g, 1)
    mc = ModelConfig(layers=2, dim=4)
    tc = TrainConfig(epochs=5, seed=11)
    a = train_embeddings(g, h, mc, tc)
    b = train_embeddings(g, h, mc, tc)
    assert a.trace == b.trace
    assert np.array_equal(a.embeddings, b.embeddings)


def test_train_divergence_raises():
    g = two_clique_graph(6)
    h = build_neighborhood_hypergraph(g, 1)
    mc = ModelConfig(layers=2, dim=4)
    tc = TrainConfig(learning_rate=1e18, epochs=50, optimizer="sgd", seed=3)
    with pytest.raises(DivergenceError):
        train_embeddings(g, h, mc, tc)


def test_full_batch_small_step_loss_non_increasing():
    # fixed negatives, full batch, plain small-step descent
    rng = np.random.default_rng(401)
    g = two_clique_graph(6)
    h = build_neighborhood_hypergraph(g, 1)
    config = ModelConfig(layers=2, dim=4, activation="tanh")
    structs = ConvStructures(g, h)
    params = init_params(g.node_count, config, seed=2,
                         gains=estimate_gains(structs))
    edges = g.edges()
    negs = rng.integers(0, g.node_count, size=(len(edges), 4))
    opt = SGD(params.trainable("mgcn"), lr=1e-4)
    losses = []
    for _ in range(10):
        lv, _ = gradients(structs, params, config, edges, negs)
        losses.append(lv.loss)
        opt.step()
    assert np.all(np.diff(losses) <= 1e-12)


def test_early_stop_triggers():
    g = two_clique_graph(6)
    h = build_neighborhood_hypergraph(g, 1)
    mc = ModelConfig(layers=2, dim=4)
    tc = TrainConfig(learning_rate=1e-6, epochs=200, seed=13,
                     early_stop_rel=0.5, early_stop_window=3)
    res = train_embeddings(g, h, mc, tc)
    assert res.epochs_run < 200


def test_adam_and_sgd_reduce_simple_quadratic():
    for cls in (Adam, SGD):
        p = ad.Tensor(np.array([5.0, -3.0]))
        opt = cls([p], lr=0.1)
        for _ in range(200):
            ad.zero_grads([p])
            loss = ad.tsum(ad.mul(p, p))
            ad.backward(loss)
            opt.step()
        assert np.abs(p.value).max() < 0.05


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="lion")
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_loss_trace_csv(tmp_path):
    path = tmp_path / "trace.csv"
    save_loss_trace(path, [(0, 1.5, -1.0, -0.5), (1, 1.25, -0.8, -0.45)])
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "epoch,loss,pos_term,neg_term"
    assert lines[1].startswith("0,1.5,")
    assert len(lines) == 3
