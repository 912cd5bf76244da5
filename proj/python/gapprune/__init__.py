# Copyright 2026 The gapprune Authors
# SPDX-License-Identifier: Apache-2.0

"""Visual-token pruning with position-id realignment on a synthetic grounding task."""

from ._core import (
    Alignment,
    ConfigError,
    InputError,
    ModelConfig,
    RecExample,
    RopeConfig,
    ShapeError,
    Strategy,
    align_gap,
    align_shifted,
    apply_rope,
    estimate_flops,
    evaluate_checkpoint,
    generate_dataset,
    permute_by_score,
    retained_count,
    rope_logit,
    run_cli,
    score_cls_visual,
    score_text_visual,
    select_spatial,
    sequential_ids,
    topk_select,
)

__all__ = [
    "Alignment",
    "ConfigError",
    "InputError",
    "ModelConfig",
    "RecExample",
    "RopeConfig",
    "ShapeError",
    "Strategy",
    "align_gap",
    "align_shifted",
    "apply_rope",
    "estimate_flops",
    "evaluate_checkpoint",
    "generate_dataset",
    "permute_by_score",
    "retained_count",
    "rope_logit",
    "run_cli",
    "score_cls_visual",
    "score_text_visual",
    "select_spatial",
    "sequential_ids",
    "topk_select",
]
