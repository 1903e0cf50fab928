import math

import numpy as np
import pytest

from conftest import full_record, rec, signal_config
from pkgsage import numeric as nm
from pkgsage.errors import DegenerateSplit, EmptyEvaluation, InvalidInput
from pkgsage.gnn import (
    SageLayer,
    TrainConfig,
    embed,
    evaluate,
    init_model,
    load_model,
    loss_and_grad,
    batch_loss,
    make_batch,
    predict,
    predict_many,
    sage_forward,
    save_model,
    train,
)
from pkgsage.graph import FacetMask, Node, PatientGraph, build_graph, build_graphs
from pkgsage.schema import default_schema
from pkgsage.synth import bayes_accuracy, generate_cohort


def small_graph(version="V3", label=1):
    r = rec(gender="F", race="WHITE", disease_codes=("428.0", "038.9"))
    return build_graph(r, label, default_schema(version))


def random_model(graphs, seed, d=8, layers=2, readout="patient"):
    cfg = TrainConfig(d_embed=d, d_hidden=d, n_layers=layers, seed=seed, readout=readout)
    model = init_model({t for g in graphs for t in g.tokens}, cfg)
    rng = np.random.default_rng(seed + 1000)
    for p in model.params():
        p.value[...] = rng.normal(scale=0.7, size=p.shape)
    return model


def reference_logit(model, graph):
    """Per-graph path through embed/sage_forward, independent of batching."""
    h = embed(graph, model.embeddings)
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        h = sage_forward(h, graph, layer, "relu" if i < last else "linear")
    read = h[0] if model.config.readout == "patient" else h.mean(axis=0)
    return float(read @ model.head_w.value[:, 0] + model.head_b.value[0, 0])


# ----------------------------------------------------------------- embedding

def test_embed_lookup_unk_and_sharing():
    g = small_graph()
    model = random_model([g], 0)
    table = model.embeddings
    x = embed(g, table)
    assert x.shape == (g.n_nodes, 8)
    for i, tok in enumerate(g.tokens):
        assert np.array_equal(x[i], table.weights.value[table.vocab[tok]])
    unseen = PatientGraph((Node(0, "patient", "patient"), Node(1, "race", "race:MARS"),
                           Node(2, "gender", "gender:F"), Node(3, "gender", "gender:F")),
                          ((0, 1), (0, 2), (0, 3)), False, 0, "X")
    x = embed(unseen, table)
    assert np.array_equal(x[1], table.weights.value[table.unk_row])
    assert np.array_equal(x[2], x[3])


# ---------------------------------------------------------------- sage layer

def test_sage_patient_only():
    g = build_graph(rec(), 0, default_schema("V3"))
    rng = np.random.default_rng(0)
    layer = SageLayer(nm.Param(rng.normal(size=(6, 4))), nm.Param(rng.normal(size=(1, 4))))
    h = rng.normal(size=(1, 3))
    out = sage_forward(h, g, layer, "relu")
    expected = nm.relu(np.concatenate([h, np.zeros((1, 3))], axis=1) @ layer.W.value + layer.bias.value)
    assert np.array_equal(out, expected)


def test_sage_identical_neighbors_mean():
    g = small_graph("V3")
    e = np.array([0.3, -1.2, 2.0])
    h = np.vstack([np.array([9.0, 9.0, 9.0])] + [e] * (g.n_nodes - 1))
    neigh_only = SageLayer(nm.Param(np.vstack([np.zeros((3, 3)), np.eye(3)])), nm.Param(np.zeros((1, 3))))
    out = sage_forward(h, g, neigh_only, "linear")
    assert np.array_equal(out[0], e)


@pytest.mark.parametrize("version", ["V1", "V3"])
def test_sage_self_copy_block(version):
    g = small_graph(version)
    h = np.random.default_rng(4).normal(size=(g.n_nodes, 5))
    copy = SageLayer(nm.Param(np.vstack([np.eye(5), np.zeros((5, 5))])), nm.Param(np.zeros((1, 5))))
    assert np.allclose(sage_forward(h, g, copy, "linear"), h, rtol=0, atol=1e-15)


@pytest.mark.parametrize("version", ["V1", "V3"])
@pytest.mark.parametrize("readout", ["patient", "mean"])
def test_batched_forward_matches_reference(version, readout):
    graphs = [build_graph(full_record(aid=f"A{i}", race=f"R{i % 3}"), i % 2, default_schema(version))
              for i in range(5)] + [build_graph(rec(aid="E"), 0, default_schema(version))]
    model = random_model(graphs, 3, d=6, layers=3, readout=readout)
    ref = np.array([nm.sigmoid(reference_logit(model, g)) for g in graphs])
    assert np.allclose(predict_many(model, graphs), ref, rtol=0, atol=1e-12)


# ------------------------------------------------------------------ gradients

@pytest.mark.parametrize("version", ["V1", "V3"])
@pytest.mark.parametrize("readout", ["patient", "mean"])
def test_full_model_gradients(version, readout):
    graphs = [build_graph(full_record(aid=f"A{i}", race=f"R{i}"), i % 2, default_schema(version))
              for i in range(3)]
    for trial in range(5):
        model = random_model(graphs, trial, d=4, readout=readout)
        batch = make_batch(graphs, model.embeddings, readout)
        weights = np.array([2.0, 1.0, 2.0])
        model.zero_grad()
        loss_and_grad(model, batch, weights)
        for p in model.params():
            err = nm.finite_diff_check(lambda: batch_loss(model, batch, weights), p)
            assert err < 1e-4, (p.name, err)


# ---------------------------------------------------------------- prediction

def test_zero_head_predicts_half():
    g = small_graph()
    model = init_model(g.tokens, TrainConfig(d_embed=4, d_hidden=4))
    assert predict(model, g) == 0.5
    assert predict(model, build_graph(full_record(), 0, default_schema())) == 0.5


def test_probability_in_open_interval():
    g = small_graph()
    model = random_model([g], 1)
    model.head_b.value[...] = 1e4
    assert 0.0 < predict(model, g) < 1.0
    model.head_b.value[...] = -1e4
    assert 0.0 < predict(model, g) < 1.0


@pytest.mark.parametrize("version", ["V1", "V3"])
def test_node_order_invariance(version):
    g = build_graph(full_record(), 1, default_schema(version))
    model = random_model([g], 5)
    rng = np.random.default_rng(0)
    for _ in range(20):
        perm = [0] + list(rng.permutation(np.arange(1, g.n_nodes)))
        nodes = tuple(Node(i, g.nodes[j].node_type, g.nodes[j].token) for i, j in enumerate(perm))
        shuffled = PatientGraph(nodes, tuple((0, i) for i in range(1, g.n_nodes)),
                                g.directed, g.label, g.admission_id)
        assert abs(predict(model, shuffled) - predict(model, g)) <= 1e-12


def test_mask_of_absent_facets_changes_nothing():
    r = full_record(religion=None, household=None, procedure_codes=())
    schema = default_schema("V3")
    model = random_model([build_graph(r, 0, schema)], 2)
    mask = FacetMask({"religion", "household", "procedure"})
    assert predict(model, build_graph(r, 0, schema, mask)) == predict(model, build_graph(r, 0, schema))


def test_evaluate_tie_and_empty():
    g = small_graph(label=0)
    model = init_model(g.tokens, TrainConfig(d_embed=4, d_hidden=4))
    m = evaluate(model, [g, small_graph(label=1)], 0.5)
    assert m.tp == 1 and m.fp == 1
    with pytest.raises(EmptyEvaluation):
        evaluate(model, [], 0.5)


def test_perfect_separator():
    schema = default_schema("V3")
    graphs = [build_graph(rec(aid=f"A{i}", race="S0" if i % 2 else "S1"), i % 2, schema)
              for i in range(10)]
    cfg = TrainConfig(d_embed=1, d_hidden=1, n_layers=1)
    model = init_model(["patient", "race:S0", "race:S1"], cfg)
    table = model.embeddings
    table.weights.value[table.vocab["race:S0"]] = 10.0
    table.weights.value[table.vocab["race:S1"]] = -10.0
    table.weights.value[table.vocab["patient"]] = 0.0
    model.layers[0].W.value[...] = [[0.0], [1.0]]
    model.head_w.value[...] = 1.0
    assert evaluate(model, graphs, 0.5).accuracy == 1.0


# ------------------------------------------------------------------ training

def cohort_graphs(cfg, version="V3"):
    return build_graphs(generate_cohort(cfg).labeled_pairs(), default_schema(version))


def test_train_separable_cohort():
    cfg = signal_config(n=600, seed=3, bayes_target_weight=8.0)
    assert bayes_accuracy(cfg) > 0.999
    result = train(cohort_graphs(cfg), TrainConfig(seed=0, epochs=15, lr=5e-3))
    assert result.test_metrics.accuracy > 0.9
    assert len(result.history) == 15


def test_zero_epochs_predicts_majority():
    cfg = signal_config(n=400, seed=5, bias=-1.0, bayes_target_weight=0.5)
    graphs = cohort_graphs(cfg)
    result = train(graphs, TrainConfig(seed=2, epochs=0))
    labels = np.array([graphs[i].label for i in result.split["test"]])
    majority = max(labels.mean(), 1 - labels.mean())
    assert result.test_metrics.accuracy == pytest.approx(majority, abs=1e-12)
    assert result.history == []


def test_training_is_deterministic():
    graphs = cohort_graphs(signal_config(n=200, seed=9))
    cfg = TrainConfig(seed=4, epochs=3, d_embed=8, d_hidden=8)
    a, b = train(graphs, cfg), train(graphs, cfg)
    assert [h.to_dict() for h in a.history] == [h.to_dict() for h in b.history]
    assert a.test_metrics == b.test_metrics
    assert all(np.array_equal(p.value, q.value) for p, q in zip(a.model.params(), b.model.params()))


def test_split_is_stratified_and_disjoint():
    graphs = cohort_graphs(signal_config(n=300, seed=2))
    result = train(graphs, TrainConfig(seed=1, epochs=0))
    parts = [set(v.tolist()) for v in result.split.values()]
    assert sum(map(len, parts)) == 300 and set.union(*parts) == set(range(300))
    labels = np.array([g.label for g in graphs])
    rate = labels.mean()
    assert abs(labels[result.split["train"]].mean() - rate) < 0.01


def test_class_weighting_and_early_stopping_run():
    graphs = cohort_graphs(signal_config(n=300, seed=4, bias=-1.5))
    cfg = TrainConfig(seed=0, epochs=40, class_weighting=True, early_stopping=True, patience=2,
                      d_embed=8, d_hidden=8, lr=1e-2)
    result = train(graphs, cfg)
    assert len(result.history) < 40
    assert result.test_metrics.recall > 0


def test_degenerate_split():
    graphs = [build_graph(rec(aid=f"A{i}"), 0, default_schema()) for i in range(12)]
    with pytest.raises(DegenerateSplit):
        train(graphs, TrainConfig(epochs=1))
    with pytest.raises(InvalidInput):
        train(graphs[:5], TrainConfig(epochs=1))


def test_checkpoint_round_trip(tmp_path):
    graphs = cohort_graphs(signal_config(n=150, seed=6), "V1")
    result = train(graphs, TrainConfig(seed=3, epochs=2, d_embed=8, d_hidden=8))
    save_model(result.model, tmp_path / "m.json")
    loaded = load_model(tmp_path / "m.json")
    assert loaded.config == result.model.config
    diff = np.abs(predict_many(loaded, graphs) - predict_many(result.model, graphs)).max()
    assert diff <= 1e-12


@pytest.mark.slow
def test_accuracy_never_exceeds_bayes_bound():
    cfg = signal_config(n=5000, seed=11, bayes_target_weight=math.log(9))
    bound = bayes_accuracy(cfg)
    assert bound == pytest.approx(0.9)
    result = train(cohort_graphs(cfg), TrainConfig(seed=0, epochs=10, lr=3e-3))
    assert result.test_metrics.accuracy <= bound + 0.02
