"""End-to-end smoke test of the python bindings."""

import json
import math
import os
import random
import tempfile

import kgrkit as kk


def test_graph_and_kge():
    g = kk.synthetic_graph(entities=40, seed=5)
    assert g.num_entities >= 40
    assert g.num_relations >= 2
    stats = g.stats()
    assert stats["train"] > 0 and stats["test"] > 0

    kge, losses = kk.train_kge(g, model="transe", dim_entity=12, dim_relation=12,
                               epochs=40, seed=9)
    assert kge.kind == "transe"
    assert len(losses) == 40
    assert losses[-1] < losses[0]

    h, r, t = g.triples("train")[0]
    scores = kge.score_all_tails(h, r)
    assert len(scores) == g.num_entities
    assert abs(scores[t] - kge.score(h, r, t)) < 1e-12

    top = kge.retrieve(h, r, 5)
    assert len(top) == 5
    assert all(top[i][1] >= top[i + 1][1] for i in range(4))
    filtered = kge.retrieve(h, r, 5, filter=[top[0][0]])
    assert top[0][0] not in [e for e, _ in filtered]
    return g, kge


def test_instances_policy_probe(g, kge):
    inst = kk.build_instances(g, kge, k=4, tier=2, seed=13)
    assert len(inst) > 10
    first = inst[0]
    assert len(first.options) == 4
    assert first.prompt and first.target
    assert set(first.answers) <= {lab for lab, _, _, _ in first.options}

    policy = kk.SequencePolicy(g.num_entities, g.num_relations,
                               max_k=4, layers=2, width=24, emb_dim=12, seed=1)
    losses = kk.train_sft(policy, inst, epochs=25, seed=23)
    assert losses[-1] < losses[0]
    assert policy.answer(first).startswith("Answer:")

    before = kk.evaluate_policy(policy, inst)
    errors = kk.build_error_set(policy, inst)
    if errors:
        kk.grpo_train(policy, errors, iterations=5, group_size=4,
                      batch_instances=4, seed=31)
        after = kk.evaluate_policy(policy, inst)
        assert after["format"] >= 0.0  # structure intact after updates
    assert 0.0 <= before["accuracy"] <= 1.0

    labeled = g.balanced_set("train", seed=3)
    assert {y for _, y in labeled} == {0, 1}
    X, y = kk.extract_representations(policy, kge, labeled, layer=1)
    assert len(X) == len(labeled) and len(X[0]) == policy.width

    probe = kk.ProbeClassifier(len(X[0]), hidden=6, seed=41)
    Xv, yv = kk.extract_representations(
        policy, kge, g.balanced_set("valid", seed=4), layer=1)
    fit = kk.train_probe(probe, X, y, Xv, yv, epochs=30)
    assert 0.0 <= fit["valid_accuracy"] <= 1.0
    assert probe.predict(X[0]) in (0, 1)

    report = kk.link_predict(kge, probe, policy, g, top_n=8, layer=1)
    assert report["task"] == "link_prediction"
    assert 0.0 <= report["mrr"] <= 1.0
    assert report["n"] == len(g.triples("test"))

    tc = kk.triple_classify(probe, policy, kge, g.balanced_set("test", seed=6), 1)
    assert tc["task"] == "triple_classification"
    return policy, probe, X, y


def test_smi(probe, X, y):
    res = kk.task_smi(probe, X, y, k=3)
    assert res["n"] == len(X)
    assert len(res["per_dim_mi"]) == res["d_v"]
    assert all(v >= 0.0 for v in res["per_dim_mi"])
    assert abs(res["i_task"] - sum(res["per_dim_mi"]) / res["d_v"]) < 1e-12

    rand = kk.random_projection_smi(X, y, directions=4, seed=7)
    assert rand["d_v"] == 4

    rng = random.Random(0)
    xs = [rng.gauss(0.0, 1.0) for _ in range(600)]
    ys = [rng.randrange(2) for _ in range(600)]
    assert abs(kk.mixed_ksg_mi(xs, ys)) < 0.05
    split = [rng.gauss(3.0 * b, 0.1) for b in ys]
    assert abs(kk.mixed_ksg_mi(split, ys) - math.log(2)) < 0.08

    za = [rng.gauss(0.0, 1.0) for _ in range(500)]
    zb = [rng.gauss(0.0, 1.0) for _ in range(500)]
    assert abs(kk.continuous_ksg_mi(za, zb)) < 0.1


def test_config_and_pipeline():
    cfg = kk.RunConfig.parse("[run]\nseed = 21\n[kge]\nepochs = 25\n")
    assert cfg.seed == 21
    assert "epochs = 25" in cfg.render()
    assert "[probe]" in kk.config_reference()

    with tempfile.TemporaryDirectory() as tmp:
        cfg = kk.RunConfig.parse(
            "[synth]\nentities = 36\n"
            "[kge]\nepochs = 25\ndim_entity = 8\ndim_relation = 8\n"
            "[instances]\nk = 4\n"
            "[policy]\nlayers = 2\nwidth = 24\nemb_dim = 12\n"
            "[sft]\nepochs = 20\n"
            "[grpo]\niterations = 4\ngroup_size = 4\nbatch_instances = 4\n"
            "[probe]\nhidden = 6\nepochs = 30\nlayer = 1\n"
            "[eval]\ntop_n = 6\n"
            "[inductive]\nrhos = 0.2\n"
            "[sweep]\nk = 3\nn = 5\ntier = 1\n")
        cfg.out = os.path.join(tmp, "out")
        cfg.seed = 11

        pipe = kk.Pipeline(cfg)
        assert "ingest" in kk.Pipeline.stage_names()
        assert kk.Pipeline.stage_dependencies("train-kge") == ["ingest"]

        outcomes = pipe.run_all()
        assert [o["stage"] for o in outcomes] == kk.Pipeline.stage_names()
        assert not any(o["skipped"] for o in outcomes)
        assert all(pipe.stage_current(s) for s in kk.Pipeline.stage_names())
        assert all(o["skipped"] for o in pipe.run_all())

        with open(pipe.artifact_path("metrics_lp.json")) as f:
            lp = json.load(f)
        assert lp["task"] == "link_prediction" and lp["seed"] == 11


def main():
    g, kge = test_graph_and_kge()
    policy, probe, X, y = test_instances_policy_probe(g, kge)
    test_smi(probe, X, y)
    test_config_and_pipeline()
    print("python smoke: ok")


if __name__ == "__main__":
    main()
