"""Class anchor construction, stochastic sampling, and cosine scoring.

An :class:`AnchorSet` holds, per emotion class, the instance embedding
vectors plus their arithmetic-mean center. During training one anchor per
class is drawn each step: the center with probability ``1 - q``, a uniformly
random instance with probability ``q`` (``q`` is the probability of the
RANDOM anchor; ``q = 0`` always picks centers, ``q = 1`` always picks
instances). Anchors never receive gradients and play no part at evaluation
time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataio import AnchorFile
from .errors import EmoAnchorError


@dataclass(frozen=True)
class SamplingPolicy:
    """q is the probability of drawing a random instance anchor."""

    q: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must be in [0, 1], got {self.q}")


class AnchorSet:
    """Immutable per-class anchor instances plus derived centers."""

    def __init__(self, classes: list[str], instances: dict[str, np.ndarray]):
        self.classes = list(classes)
        self.instances = {c: np.asarray(instances[c], dtype=np.float32) for c in self.classes}
        dims = {v.shape[1] for v in self.instances.values()}
        if len(dims) != 1:
            raise EmoAnchorError(f"anchor dimension differs across classes: {sorted(dims)}")
        self.dim = dims.pop()
        self.centers = build_centers(self.instances, self.classes)

    @classmethod
    def from_file(cls, anchors: AnchorFile) -> "AnchorSet":
        return cls(anchors.classes, anchors.vectors)

    def center_matrix(self) -> np.ndarray:
        return np.stack([self.centers[c] for c in self.classes])

    def sample_step(self, policy: SamplingPolicy, rng: np.random.Generator) -> np.ndarray:
        """One anchor per class for a training step, stacked (num_classes, dim)."""
        return np.stack([sample_anchor(self, c, policy, rng) for c in self.classes])


def build_centers(instances: dict[str, np.ndarray], classes: list[str] | None = None) -> dict[str, np.ndarray]:
    """Componentwise arithmetic mean of each class's instance vectors."""
    classes = list(instances.keys()) if classes is None else classes
    centers = {}
    for c in classes:
        vecs = np.asarray(instances[c])
        if vecs.ndim != 2 or vecs.shape[0] < 1:
            raise EmoAnchorError(f"class {c!r} has no anchor instances")
        centers[c] = vecs.mean(axis=0, dtype=np.float64).astype(np.float32)
    return centers


def sample_anchor(
    anchor_set: AnchorSet, class_name: str, policy: SamplingPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Center anchor with probability 1-q, else a uniform random instance.

    Consumes exactly one uniform draw, plus one index draw on the random
    branch, so sampling sequences are reproducible per seed.
    """
    if class_name not in anchor_set.instances:
        raise EmoAnchorError(f"unknown anchor class {class_name!r}")
    take_random = rng.random() < policy.q
    if take_random:
        vecs = anchor_set.instances[class_name]
        j = int(rng.integers(vecs.shape[0]))
        return vecs[j]
    return anchor_set.centers[class_name]


def anchor_scores(x: T.Tensor, anchor_matrix: T.Tensor) -> T.Tensor:
    """Cosine similarity of each row of x against each class anchor."""
    return T.cosine_rows(x, anchor_matrix)


def anchor_distribution(scores: T.Tensor) -> T.Tensor:
    """Softmax over classes of the cosine scores."""
    return T.softmax(scores, axis=-1)
