"""End-to-end smoke tests for the python bindings."""

import json
import math
import os

import numpy as np
import pytest

import topiclm


def test_version():
    assert topiclm.__version__


def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(0).normal(size=(4, 7))
    y = topiclm.softmax(x, axis=1)
    assert np.allclose(y.sum(axis=1), 1.0, atol=1e-9)
    assert (y > 0).all() and (y < 1).all()
    # shift invariance
    assert np.allclose(topiclm.softmax(x + 13.5, axis=1), y, atol=1e-12)


def test_layer_norm_reference_value():
    y = topiclm.layer_norm(np.array([1.0, 2.0, 3.0]), np.ones(3), np.zeros(3), eps=0.0)
    assert np.allclose(y, [-1.224744871, 0.0, 1.224744871], atol=1e-6)


def test_sigmoid_and_cosine():
    assert topiclm.sigmoid(np.array([0.0]))[0] == pytest.approx(0.5)
    a = np.array([1.0, -2.0, 0.5])
    assert topiclm.cosine_sim(a, 3.0 * a) == pytest.approx(1.0, abs=1e-7)


def test_matmul_matches_numpy():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.allclose(topiclm.matmul(a, b), a @ b, atol=1e-12)


def test_contrastive_uniform_value():
    vecs = np.tile(np.array([0.3, -0.7, 1.1, 0.2]), (6, 1))
    loss = topiclm.contrastive_loss(vecs, [0, 0, 1, 1, 2, 2], tau=0.07)
    assert loss == pytest.approx(math.log(5.0), abs=1e-9)
    # single topic: exactly zero
    assert topiclm.contrastive_loss(vecs, [1, 1, 1, 1, 1, 1]) == 0.0


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    corpus_dir = str(root / "corpus")
    info = topiclm.generate_corpus(corpus_dir, n_entities=10, pages=10,
                                   sentences_per_page=6, seed=9)
    assert info["segments"] == 60

    cfg = topiclm.default_config()
    cfg["paths"] = {"corpus": info["corpus"], "ground_truth_dir": corpus_dir,
                    "out_dir": str(root / "out")}
    cfg["model"].update(num_layers=2, hidden_dim=16, num_heads=4, ffn_dim=32,
                        entity_embed_dim=16, max_positions=32)
    cfg["schedule"].update(total_steps=30, warmup_steps=10, batch_size=4,
                           checkpoint_interval=0)
    cfg["finetune"].update(epochs=1, batch_segments=8)
    cfg["seed"] = 5
    result = topiclm.pretrain(cfg)
    return root, cfg, result


def test_pretrain_smoke(tiny_run):
    _, _, result = tiny_run
    assert os.path.exists(result["checkpoint"])
    assert result["steps"] == 30
    assert math.isfinite(result["final_lplm"])


def test_checkpoint_contents(tiny_run):
    _, cfg, result = tiny_run
    ckpt = topiclm.load_checkpoint(result["checkpoint"])
    tensors = ckpt["tensors"]
    assert "word_emb" in tensors and "entity_emb" in tensors
    assert tensors["entity_emb"].shape[1] == cfg["model"]["entity_embed_dim"]
    meta = topiclm.checkpoint_metadata(result["checkpoint"])
    assert meta["step"] == 30
    assert meta["config"]["seed"] == 5
    assert meta["vocab"]["words"][:5] == ["[CLS]", "[SEP]", "[MASK]", "[UNK]", "[PAD]"]


def test_finetune_and_evaluate(tiny_run):
    root, cfg, result = tiny_run
    cfg = json.loads(json.dumps(cfg))
    cfg["paths"]["out_dir"] = str(root / "ft")
    fine = topiclm.finetune(cfg, result["checkpoint"])
    assert 0.0 <= fine["overall"]["micro_f1"] <= 1.0
    assert fine["overall"]["instances"] > 0
    replay = topiclm.evaluate(fine["checkpoint"])
    assert replay["micro_f1"] == pytest.approx(fine["overall"]["micro_f1"])


def test_gate_report(tiny_run):
    root, cfg, result = tiny_run
    rep = topiclm.gate_report(result["checkpoint"], cfg["paths"]["corpus"],
                              str(root / "gate"), segments=5, top_k=10)
    assert os.path.exists(rep["txt"]) and os.path.exists(rep["html"])
    assert 0.0 < rep["mean_gate_all"] < 1.0


def test_gradient_suite_passes():
    entries = topiclm.gradient_suite(seed=99)
    assert entries and all(e["pass"] for e in entries)


def test_corpus_errors():
    with pytest.raises(topiclm.RunConfigError):
        topiclm.pretrain({"paths": {"corpus": "/nonexistent.jsonl"}})
