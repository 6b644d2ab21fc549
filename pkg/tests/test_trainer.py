import numpy as np
import pytest
from scipy.stats import chisquare

import mvembed.trainer as trainer
from mvembed.attention import AttentionParams, LabeledSet, train_attention, weights_for_all
from mvembed.embedding import EmbeddingStore, NonFiniteError, TrainConfig, alias_draws
from mvembed.evaluate import evaluate_features, one_hot
from mvembed.graph import AliasTable, MultiViewGraph
from mvembed.synth import SynthSpec, ViewSpec, generate, split_nodes
from mvembed.trainer import init_state, run_iteration, train


@pytest.fixture(scope="module")
def small():
    spec = SynthSpec(num_nodes=120, communities=3,
                     views=[ViewSpec("sbm", 0.3, 0.02), ViewSpec.noise("noise", 0.06)])
    sg = generate(spec)
    train_nodes, test_nodes = split_nodes(120, 0.2, 0)
    labeled = LabeledSet("classification", nodes=train_nodes,
                         labels=one_hot(sg.labels[train_nodes], 3))
    return sg, labeled, train_nodes, test_nodes


def cfg(**kw):
    base = dict(dim=8, negatives=3, samples_per_iter=20_000, iterations=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def check_invariants(result):
    assert result.store.is_finite()
    assert np.isfinite(result.attention.z).all()
    np.testing.assert_allclose(result.weights.sum(axis=1), 1.0, atol=1e-6)
    assert (result.weights >= 0).all()


def test_zero_budget_leaves_embeddings_untouched(small):
    sg, labeled, _, _ = small
    state = init_state(cfg(samples_per_iter=0), sg.graph, labeled)
    views0, ctx0 = state.store.views.copy(), state.store.context.copy()
    run_iteration(state)
    np.testing.assert_array_equal(state.store.views, views0)
    np.testing.assert_array_equal(state.store.context, ctx0)
    assert "attn_loss_after" in state.history[0]
    np.testing.assert_allclose(state.store.robust,
                               np.einsum("vk,kvd->vd", state.weights, state.store.views))


def test_phase_order(small, monkeypatch):
    sg, labeled, _, _ = small
    calls = []
    for name in ("_sgd_phase", "train_attention", "weights_for_all", "vote_robust"):
        orig = getattr(trainer, name)

        def spy(*a, _orig=orig, _name=name, **kw):
            calls.append(_name)
            return _orig(*a, **kw)
        monkeypatch.setattr(trainer, name, spy)
    train(cfg(samples_per_iter=1000), sg.graph, labeled)
    assert calls == ["_sgd_phase", "train_attention", "weights_for_all", "vote_robust"] * 2


def test_no_attention_skips_attention_phase(small, monkeypatch):
    sg, labeled, _, _ = small
    monkeypatch.setattr(trainer, "train_attention", lambda *a, **k: pytest.fail("called"))
    res = train(cfg(no_attention=True), sg.graph, labeled)
    np.testing.assert_allclose(res.weights, 0.5)
    np.testing.assert_allclose(res.store.robust, res.store.views.mean(axis=0))


def test_sample_counter_and_schedule(small):
    sg, labeled, _, _ = small
    state = init_state(cfg(samples_per_iter=5000, iterations=4), sg.graph, labeled)
    for it in range(1, 4):
        run_iteration(state)
        assert state.samples == it * 5000
        assert state.lr == pytest.approx(0.025 * (1 - it / 4))


def test_uniform_view_choice():
    K = 3
    table = AliasTable(np.ones(K))
    draws = alias_draws(np.random.default_rng(0), table.prob, table.alias, 0, K, 10**6)
    freq = np.bincount(draws, minlength=K) / draws.size
    np.testing.assert_allclose(freq, 1 / K, atol=0.005)


def test_edge_count_view_sampling(small):
    sg, _, _, _ = small
    smp = trainer._Samplers(sg.graph, "edges")
    counts = np.array([v.num_edges for v in sg.graph.views])
    draws = alias_draws(np.random.default_rng(1), smp.view_prob, smp.view_alias, 0, 2, 200_000)
    assert chisquare(np.bincount(draws, minlength=2),
                     counts / counts.sum() * draws.size).pvalue > 0.001


def test_deterministic_outputs(small, tmp_path):
    sg, labeled, _, _ = small
    for sub in ("a", "b"):
        train(cfg(), sg.graph, labeled, out_dir=tmp_path / sub)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert {"vocab.txt", "robust.emb", "view_sbm.emb", "view_noise.emb", "weights.txt",
            "train_log.txt"} <= set(files)
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_different_seeds_differ(small):
    sg, labeled, _, _ = small
    a = train(cfg(seed=1), sg.graph, labeled)
    b = train(cfg(seed=2), sg.graph, labeled)
    assert not np.array_equal(a.store.robust, b.store.robust)


def test_no_collab_has_per_view_contexts(small):
    sg, labeled, _, _ = small
    res = train(cfg(no_collab=True), sg.graph, labeled)
    assert res.store.context.shape[0] == 2
    assert not np.array_equal(res.store.context[0], res.store.context[1])
    np.testing.assert_allclose(res.store.robust,
                               np.einsum("vk,kvd->vd", res.weights, res.store.views))
    check_invariants(res)


def test_unregularized_view_matches_single_view_run(small):
    """With eta=0 and separate contexts, view 1 trains like a standalone run."""
    sg, _, train_nodes, test_nodes = small
    single = MultiViewGraph(sg.graph.vocab, [sg.graph.views[0]])
    y = one_hot(sg.labels, 3)
    multi_f1, single_f1 = [], []
    for seed in range(4):
        # uniform view choice: K=2 runs give each view half the samples
        m = train(cfg(eta=0.0, no_attention=True, no_collab=True, samples_per_iter=100_000,
                      seed=seed, dim=16), sg.graph)
        s = train(cfg(eta=0.0, no_attention=True, samples_per_iter=50_000, seed=seed, dim=16),
                  single)
        multi_f1.append(evaluate_features(m.store.views[0], y, train_nodes, test_nodes)[1])
        single_f1.append(evaluate_features(s.store.views[0], y, train_nodes, test_nodes)[1])
    assert abs(np.mean(multi_f1) - np.mean(single_f1)) < 3.0
    assert np.mean(single_f1) > 80.0


def test_identical_views_give_uniform_weights(small):
    sg, labeled, _, _ = small
    single = MultiViewGraph(sg.graph.vocab, [sg.graph.views[0]])
    base = train(cfg(), single).store
    K = 3
    views = np.repeat(base.views, K, axis=0)
    store = EmbeddingStore(views, base.context, base.views[0].copy())
    params, _, _ = train_attention(labeled, store, AttentionParams.zeros(K, 8, 3))
    np.testing.assert_allclose(weights_for_all(store, params.z), 1 / K, atol=1e-3)


def test_parallel_workers_stay_finite(small):
    sg, labeled, _, _ = small
    res = train(cfg(workers=3), sg.graph, labeled)
    check_invariants(res)


@pytest.mark.parametrize("field, value", [("dim", 0), ("workers", 0), ("samples_per_iter", -1)])
def test_bad_config_fails_before_work(small, monkeypatch, field, value):
    sg, labeled, _, _ = small
    monkeypatch.setattr(trainer, "_Samplers", lambda *a: pytest.fail("work started"))
    with pytest.raises(ValueError):
        train(cfg(**{field: value}), sg.graph, labeled)


def test_labels_outside_graph_rejected(small):
    sg, _, _, _ = small
    with pytest.raises(ValueError):
        train(cfg(), sg.graph, LabeledSet("link", pairs=[[0, 500]]))


def test_divergence_aborts(small):
    sg, labeled, _, _ = small
    with pytest.raises(NonFiniteError, match="lr="):
        train(cfg(lr=1e308, samples_per_iter=1000), sg.graph, labeled)


def test_link_labels_drive_attention(small):
    sg, _, _, _ = small
    v = sg.graph.views[0]
    pairs = np.stack([v.src[:60], v.dst[:60]], axis=1)
    res = train(cfg(), sg.graph, LabeledSet("link", pairs=pairs))
    check_invariants(res)
    assert res.attention.w is None
    assert res.history[-1]["attn_loss_after"] <= res.history[-1]["attn_loss_before"]


def test_smoke_single_iteration_full_budget():
    sg = generate(SynthSpec(seed=0))
    train_nodes, _ = split_nodes(400, 0.1, 0)
    labeled = LabeledSet("classification", nodes=train_nodes,
                         labels=one_hot(sg.labels[train_nodes], 4))
    res = train(TrainConfig(dim=32, samples_per_iter=10**6, iterations=1), sg.graph, labeled)
    check_invariants(res)
    assert len(res.history) == 1


def test_doubling_budget_scales_time(small):
    sg, labeled, _, _ = small
    train(cfg(samples_per_iter=1000, iterations=1), sg.graph)  # warm the compiled kernel

    def embed_time(T):
        best = np.inf
        for _ in range(3):
            res = train(cfg(samples_per_iter=T, iterations=1, no_attention=True), sg.graph)
            best = min(best, res.timings["embedding"])
        return best

    t1 = embed_time(200_000)
    t2 = embed_time(400_000)
    assert t2 / t1 <= 2.5
