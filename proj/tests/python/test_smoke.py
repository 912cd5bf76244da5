# Copyright 2026 The gapprune Authors
# SPDX-License-Identifier: Apache-2.0

import json
import math

import numpy as np
import pytest

import gapprune as gp


def test_pruning_primitives():
    assert gp.retained_count(576, 0.5) == 288
    assert gp.retained_count(10, 0.05) == 1
    assert gp.topk_select([4, 2, 1, 5, 3], 2) == [0, 3]
    assert gp.select_spatial(8, 0.5) == [0, 2, 4, 6]
    assert gp.align_gap([2, 3, 4], 0) == [2, 3, 4]
    assert gp.align_shifted([2, 3, 4], 0) == [0, 1, 2]
    tokens, ids, order = gp.permute_by_score(np.eye(3), [1, 3, 2])
    assert order == [1, 2, 0]
    assert ids == [0, 1, 2]
    assert np.array_equal(tokens, np.eye(3)[[1, 2, 0]])
    with pytest.raises(gp.ConfigError):
        gp.retained_count(10, 1.5)
    with pytest.raises(ValueError):
        gp.topk_select([1.0], 2)


def test_scores_sum():
    rng = np.random.default_rng(0)
    keys = rng.normal(size=(9, 8))
    q = rng.normal(size=8)
    s = gp.score_cls_visual(q.tolist(), keys, 8)
    logits = keys @ q / math.sqrt(8)
    ref = np.exp(logits - logits.max())
    ref /= ref.sum()
    assert np.allclose(s, ref, atol=1e-12, rtol=0)
    t = gp.score_text_visual(rng.normal(size=(3, 8)), keys, 8)
    assert abs(sum(t) - 3.0) < 1e-10


def test_rope():
    x = np.array([[0.3, -1.7]])
    y = gp.apply_rope(x, [1], gp.RopeConfig(head_dim=2))
    c, s = math.cos(1.0), math.sin(1.0)
    assert np.allclose(y, [[0.3 * c + 1.7 * s, 0.3 * s - 1.7 * c]], atol=1e-12)
    q = [0.1 * i for i in range(8)]
    k = [0.2 - 0.05 * i for i in range(8)]
    assert abs(gp.rope_logit(q, k, 5, 2) - gp.rope_logit(q, k, 105, 102)) < 1e-9


def test_dataset_and_flops():
    data = gp.generate_dataset(20, seed=3)
    assert len(data) == 20
    for ex in data:
        assert ex.image[ex.answer_cell] == ex.query_color
        assert ex.image.count(ex.query_color) == 1
    assert [e.answer_cell for e in gp.generate_dataset(20, seed=3)] == [e.answer_cell for e in data]
    cfg = gp.ModelConfig()
    assert gp.estimate_flops(cfg, 18) > gp.estimate_flops(cfg, 10)


def test_cli_round_trip(tmp_path):
    config = {
        "model": {"grid_size": 2, "num_colors": 4, "d_model": 16, "num_heads": 2, "head_dim": 8,
                  "encoder_layers": 1, "decoder_layers": 1, "vocab_size": 10, "max_seq_len": 32},
        "data": {"train_size": 50, "val_size": 20, "min_objects": 1, "max_objects": 3},
        "train": {"encoder_steps": 3, "decoder_steps": 5, "warmup_steps": 1, "batch_size": 4},
        "sweep": {"strategies": ["cls_visual"], "ratios": [0.5, 1.0]},
        "paths": {"output_dir": str(tmp_path), "checkpoint": str(tmp_path / "m.gapw"),
                  "dataset": str(tmp_path / "d.jsonl")},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config))
    code, out, err = gp.run_cli(["sweep", "--config", str(path)])
    assert code == 0, err
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["rows"]) == 4
    assert (tmp_path / "report.csv").read_text().startswith("strategy,ratio,alignment")

    data = gp.generate_dataset(10, gp.ModelConfig(), 1)
    assert len(data) == 10
    cfg = gp.ModelConfig()
    cfg.grid_size, cfg.num_colors, cfg.d_model, cfg.num_heads = 2, 4, 16, 2
    small = gp.generate_dataset(10, cfg, 1, max_objects=3)
    acc = gp.evaluate_checkpoint(str(tmp_path / "m.gapw"), small, gp.Strategy.cls_visual, 0.5, gp.Alignment.gap)
    assert 0.0 <= acc <= 1.0

    code, _, err = gp.run_cli(["sweep", "--nope"])
    assert code == 2
    code, _, err = gp.run_cli(["sweep", "--config", str(tmp_path / "absent.json")])
    assert code != 0 and "absent.json" in err
