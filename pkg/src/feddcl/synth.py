"""Synthetic dataset generator standing in for non-redistributable datasets.

Features are drawn from a low-rank latent factor model with a decaying
spectrum plus isotropic feature noise, so dimensionality-reduction-based
methods retain the signal the way they do on real tabular/image data.
Regression targets pass a linear score through a smooth link; classification
labels come from the argmax of a random linear score with optional
label-flip noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datahub import CLASSIFICATION, REGRESSION, LabeledTable, Task, one_hot
from .errors import ParameterError
from .rng import RngStream


@dataclass(frozen=True)
class SynthSpec:
    n: int
    m: int
    task: Task
    noise: float = 0.0          # regression: target noise sd; classification: flip prob
    seed: int = 0
    latent: int | None = None   # latent factor count, default m (full rank)
    link: str = "tanh"          # "tanh" | "identity"
    feature_noise: float = 0.02
    scale_floor: float = 0.3    # smallest latent scale relative to the largest

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ParameterError(f"need n, m >= 1, got n={self.n}, m={self.m}")
        if self.latent is not None and not 1 <= self.latent <= self.m:
            raise ParameterError(f"latent must lie in [1, m={self.m}], got {self.latent}")
        if self.link not in ("tanh", "identity"):
            raise ParameterError(f"unknown link {self.link!r}")
        if self.noise < 0 or self.feature_noise < 0:
            raise ParameterError("noise levels must be >= 0")
        if self.task.kind == CLASSIFICATION and self.noise > 1:
            raise ParameterError("classification flip probability must lie in [0, 1]")
        if not 0 < self.scale_floor <= 1:
            raise ParameterError("scale_floor must lie in (0, 1]")


def synth_dataset(spec: SynthSpec) -> LabeledTable:
    table, _ = synth_dataset_with_truth(spec)
    return table


def synth_dataset_with_truth(spec: SynthSpec) -> tuple[LabeledTable, dict]:
    """Generate the table plus the generating parameters (for oracle tests)."""
    gen = RngStream(spec.seed).generator()
    p = spec.latent if spec.latent is not None else spec.m

    z = gen.standard_normal((spec.n, p))
    # orthonormal latent-to-feature mixing with a decaying spectrum
    q, _ = np.linalg.qr(gen.standard_normal((spec.m, p)))
    basis = q.T
    scales = np.geomspace(1.0, spec.scale_floor, p) if p > 1 else np.ones(1)
    x = (z * scales) @ basis
    if spec.feature_noise > 0:
        x = x + spec.feature_noise * gen.standard_normal((spec.n, spec.m))

    truth: dict = {"basis": basis, "scales": scales}
    if spec.task.kind == REGRESSION:
        theta = gen.standard_normal((spec.m, 1))
        u = x @ theta
        if spec.link == "identity":
            clean = u
        else:
            sd = float(np.std(u))
            clean = np.tanh(u / sd) if sd > 0 else np.tanh(u)
        y = clean + spec.noise * gen.standard_normal((spec.n, 1)) if spec.noise > 0 else clean
        truth.update(theta=theta, clean=clean)
        return LabeledTable(x=x, y=y, task=spec.task), truth

    k = spec.task.num_classes
    theta = gen.standard_normal((spec.m, k))
    scores = x @ theta
    labels = np.argmax(scores, axis=1)
    truth.update(theta=theta, labels_clean=labels.copy())
    if spec.noise > 0:
        flips = gen.random(spec.n) < spec.noise
        offsets = gen.integers(1, k, size=spec.n)
        labels = np.where(flips, (labels + offsets) % k, labels)
    return LabeledTable(x=x, y=one_hot(labels, k), task=spec.task), truth
