"""Synthetic workload generation.

Score rows are a Gaussian background plus an optional heavy-tail spike mix,
which is enough to dial in the three row shapes that matter for selection
behavior: a few dominant entries, larger entries spread evenly, or larger
entries clustered in one region. Profile parameters are config values, not
baked-in claims; presets below are starting points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RowProfile:
    base_std: float = 1.0
    spike_fraction: float = 0.0
    spike_mean: float = 8.0
    spike_std: float = 1.0
    clustered: bool = False  # spikes confined to one contiguous region

    def to_json(self) -> dict:
        return {
            "base_std": self.base_std,
            "spike_fraction": self.spike_fraction,
            "spike_mean": self.spike_mean,
            "spike_std": self.spike_std,
            "clustered": self.clustered,
        }


# flat: pure Gaussian. spread: many moderate spikes everywhere. dominant: few
# strong spikes. clustered: strong spikes packed into one region (the
# adversarial case for segmented selection).
PROFILES = {
    "flat": RowProfile(),
    "spread": RowProfile(spike_fraction=0.2, spike_mean=3.0),
    "dominant": RowProfile(spike_fraction=0.03, spike_mean=10.0),
    "clustered": RowProfile(spike_fraction=0.1, spike_mean=10.0, clustered=True),
}


def resolve_profile(value) -> RowProfile:
    if isinstance(value, RowProfile):
        return value
    if isinstance(value, str):
        if value not in PROFILES:
            raise ValueError(f"unknown profile {value!r}; known: {sorted(PROFILES)}")
        return PROFILES[value]
    return RowProfile(**value)


def sample_score_rows(rng: np.random.Generator, n_rows: int, seq_len: int, profile) -> np.ndarray:
    """Score rows: Gaussian background with the profile's spike mix on top."""
    profile = resolve_profile(profile)
    rows = rng.normal(0.0, profile.base_std, size=(n_rows, seq_len))
    n_spikes = int(round(profile.spike_fraction * seq_len))
    if n_spikes > 0:
        for r in range(n_rows):
            if profile.clustered:
                start = int(rng.integers(0, seq_len - n_spikes + 1))
                where = np.arange(start, start + n_spikes)
            else:
                where = rng.choice(seq_len, size=n_spikes, replace=False)
            rows[r, where] += rng.normal(profile.spike_mean, profile.spike_std, size=n_spikes)
    return rows


def sample_attention_case(
    rng: np.random.Generator, n_queries: int, seq_len: int, head_dim: int
):
    """Random (q, k, v) with ~unit-scale logits after 1/sqrt(d) scaling."""
    q = rng.normal(0.0, 1.0, size=(n_queries, head_dim))
    k = rng.normal(0.0, 1.0, size=(seq_len, head_dim))
    v = rng.normal(0.0, 1.0, size=(seq_len, head_dim))
    return q, k, v


def sample_pipeline_inputs(
    rng: np.random.Generator, seq_len: int, hidden: int, head_dim: int, n_queries: int
):
    """Inputs for the end-to-end run: token embeddings, key weights, queries, values."""
    x = rng.normal(0.0, 1.0, size=(seq_len, hidden))
    w_key = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, head_dim))
    q = rng.normal(0.0, 1.0, size=(n_queries, head_dim))
    v = rng.normal(0.0, 1.0, size=(seq_len, head_dim))
    return x, w_key, q, v
