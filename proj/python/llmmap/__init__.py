"""Python access to the llmmap core."""

import json

from ._llmmap import (
    LlmmapError,
    age_linear_fit,
    bootstrap_mean,
    fit_curve_params,
    gaussian_smooth,
    knn_graph,
    local_anisotropy,
    parse_score,
    patching_effect,
    percentile_intervals,
    read_tensor,
    rising_window_interval,
    silhouette,
    stage_circularity,
    umap_embed,
    write_tensor,
)
from ._llmmap import load_run_summary as _load_run_summary
from ._llmmap import run_command as _run_command


def load_run(path):
    """Validate a trace bundle and return its manifest as a dict."""
    return json.loads(_load_run_summary(str(path)))


def run(command, config=None, args=()):
    """Run a pipeline command (gen-prompts, analyze, judge, map) and return its summary."""
    return json.loads(_run_command(command, json.dumps(config or {}), [str(a) for a in args]))


__all__ = [
    "LlmmapError",
    "age_linear_fit",
    "bootstrap_mean",
    "fit_curve_params",
    "gaussian_smooth",
    "knn_graph",
    "load_run",
    "local_anisotropy",
    "parse_score",
    "patching_effect",
    "percentile_intervals",
    "read_tensor",
    "rising_window_interval",
    "run",
    "silhouette",
    "stage_circularity",
    "umap_embed",
    "write_tensor",
]
