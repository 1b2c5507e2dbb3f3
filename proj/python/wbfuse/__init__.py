# SPDX-License-Identifier: Apache-2.0
"""White-balance preset fusion.

Images are float64 arrays of shape (H, W, 3) holding sRGB values in [0, 1].
Preset lists follow PRESET_NAMES order.
"""
import json

from ._core import (
    PRESET_NAMES,
    ConfigError,
    Model,
    __version__,
    aggregate,
    analyze_hull,
    build_dataset,
    dataset_hull,
    delta_e_2000,
    delta_e_2000_lab,
    delta_e_2000_map,
    evaluate,
    fit_pixel_weights,
    load_scene,
    mae_angular,
    mse,
    oracle_blend,
    project_to_simplex,
    read_manifest,
    render_scene,
    srgb_to_lab,
)
from ._core import train as _train


def train(dataset, out, steps=5000, seed=0, threads=1, overrides=None):
    """Train a model; returns the run manifest (also written to <out>/run.json)."""
    text = overrides if isinstance(overrides, str) else json.dumps(overrides or {})
    return json.loads(_train(str(dataset), str(out), steps, seed, threads, text if text != "{}" else ""))


__all__ = [name for name in dir() if not name.startswith("_") and name != "json"]
