"""Counting probes for vision-language models.

Synthetic dataset generation, prompt catalog, answer parsing, attention
proportions, mock-backed runs and report generation, backed by the C++ core.
"""

from ._core import (
    VlmprobeError,
    analyze,
    attention_proportions,
    default_dataset_config,
    dump_proportions,
    generate_dataset,
    instantiate_prompt,
    load_corpus,
    load_trials,
    mock_presets,
    parse_curly_count,
    parse_json_detections,
    prompt_templates,
    render_curly_answer,
    render_detection_answer,
    run_mock,
)

__all__ = [
    "VlmprobeError",
    "analyze",
    "attention_proportions",
    "default_dataset_config",
    "dump_proportions",
    "generate_dataset",
    "instantiate_prompt",
    "load_corpus",
    "load_trials",
    "mock_presets",
    "parse_curly_count",
    "parse_json_detections",
    "prompt_templates",
    "render_curly_answer",
    "render_detection_answer",
    "run_mock",
]
__version__ = "0.1.0"
