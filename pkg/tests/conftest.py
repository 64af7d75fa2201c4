"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from mclnn.features import FeatureMatrix
from mclnn.layers import ClnnLayer, LinearActivation, PRelu
from mclnn.model import LayerSpec, ModelSpec, build_model


def random_clnn_layer(rng, l, e, n, mask=None, activation=None):
    return ClnnLayer(
        order=n,
        weights=rng.standard_normal((2 * n + 1, l, e)),
        bias=rng.standard_normal(e),
        mask=mask,
        activation=activation if activation is not None else LinearActivation(),
    )


def small_spec(**overrides) -> ModelSpec:
    """Two masked layers over 8 feature bins; tiny enough for FD checks."""
    kwargs = dict(
        feature_length=8,
        layers=(
            LayerSpec(width=6, order=2, bandwidth=3, overlap=1),
            LayerSpec(width=6, order=2, bandwidth=3, overlap=1),
        ),
        extra_frames=3,
        dense_width=5,
        class_count=4,
    )
    kwargs.update(overrides)
    return ModelSpec(**kwargs)


@pytest.fixture
def small_model():
    return build_model(small_spec(), seed=20240811)


# ---------------------------------------------------------------------------
# synthetic sweep dataset: class 0 ramps an energy band upward across the
# feature bins over time, class 1 ramps it downward
# ---------------------------------------------------------------------------

SWEEP_BINS = 16
SWEEP_FRAMES = 40


def sweep_clip(rng, upward: bool, noise: float = 0.1) -> np.ndarray:
    t = np.arange(SWEEP_FRAMES) / (SWEEP_FRAMES - 1)
    centers = 1.0 + t * (SWEEP_BINS - 3.0)
    if not upward:
        centers = centers[::-1]
    bins = np.arange(SWEEP_BINS)
    bump = np.exp(-0.5 * ((bins[None, :] - centers[:, None]) / 1.5) ** 2)
    return bump + noise * rng.standard_normal((SWEEP_FRAMES, SWEEP_BINS))


def make_sweep_dataset(clips_per_class=200, noise=0.1, seed=99):
    """List of labelled FeatureMatrix clips, half upward and half downward."""
    rng = np.random.default_rng(seed)
    clips = []
    for label, upward in ((0, True), (1, False)):
        for i in range(clips_per_class):
            clips.append(
                FeatureMatrix(
                    frames=sweep_clip(rng, upward, noise),
                    clip_id=f"{'up' if upward else 'down'}{i:03d}",
                    label=label,
                )
            )
    return clips
