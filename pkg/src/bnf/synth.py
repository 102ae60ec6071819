"""Synthetic scenes with known labels, boundaries and planted boundary features.

A scene is a background with random rectangles and ellipses painted on top.
Unaries are the one-hot truth, box-blurred and corrupted with Gaussian noise
so they look like blobby, poorly localized network outputs. The feature stack
holds smooth random fields plus one channel carrying the true boundary in
logit units, so a single-channel readout reproduces the boundary exactly.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .boundary import BoundaryWeights
from .core import BoundaryMap, LabelMap, Tensor3, UnaryField

BOUNDARY_LOGIT = float(np.log(999.0))  # sigmoid -> 0.999 on boundaries, 0.001 elsewhere
MAX_REDRAWS = 100


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    K: int = 3
    shapes: int = 4
    noise_sigma: float = 0.25
    blur_radius: int = 3
    channels: int = 16
    seed: int = 0
    boundary_channel: int = -1  # stack slot carrying the planted boundary; same in every scene

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("need at least 2 classes")
        if self.shapes < 1:
            raise ValueError("need at least one shape")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.channels < 1:
            raise ValueError("need at least one feature channel")
        if not -self.channels <= self.boundary_channel < self.channels:
            raise ValueError(f"boundary_channel {self.boundary_channel} out of range")
        if self.height < 2 or self.width < 2:
            raise ValueError("scene must be at least 2x2")


@dataclass(frozen=True, eq=False)
class Scene:
    truth: LabelMap
    boundary: BoundaryMap
    unary: UnaryField
    stack: Tensor3
    planted_weights: BoundaryWeights


def _shape_mask(rng, h, w):
    hh = rng.integers(max(2, h // 8), max(3, h // 2) + 1)
    ww = rng.integers(max(2, w // 8), max(3, w // 2) + 1)
    top = rng.integers(-hh // 4, h - hh + hh // 4 + 1)
    left = rng.integers(-ww // 4, w - ww + ww // 4 + 1)
    rr, cc = np.mgrid[0:h, 0:w]
    if rng.random() < 0.5:
        return (rr >= top) & (rr < top + hh) & (cc >= left) & (cc < left + ww)
    cy, cx = top + (hh - 1) / 2.0, left + (ww - 1) / 2.0
    return ((rr - cy) / (hh / 2.0)) ** 2 + ((cc - cx) / (ww / 2.0)) ** 2 <= 1.0


def label_transitions(labels):
    """Pixels whose label differs from at least one 4-neighbour (both sides marked)."""
    lab = np.asarray(labels)
    edge = np.zeros(lab.shape, dtype=bool)
    dv = lab[1:, :] != lab[:-1, :]
    dh = lab[:, 1:] != lab[:, :-1]
    edge[1:, :] |= dv
    edge[:-1, :] |= dv
    edge[:, 1:] |= dh
    edge[:, :-1] |= dh
    return edge


def corrupt_unary(truth, k, blur_radius, noise_sigma, rng):
    onehot = (truth[None] == np.arange(k)[:, None, None]).astype(np.float64)
    if blur_radius > 0:
        onehot = ndimage.uniform_filter(onehot, size=(1, 2 * blur_radius + 1, 2 * blur_radius + 1), mode="nearest")
    if noise_sigma > 0:
        onehot = onehot + rng.normal(0.0, noise_sigma, size=onehot.shape)
    return UnaryField.from_scores(np.maximum(onehot, 0.0))


def smooth_field(rng, h, w, scale=3.0):
    f = ndimage.gaussian_filter(rng.normal(size=(h, w)), scale, mode="reflect")
    sd = f.std()
    return (f - f.mean()) / (sd if sd > 0 else 1.0)


def generate_scene(spec):
    rng = np.random.default_rng(spec.seed)
    h, w, k = spec.height, spec.width, spec.K
    truth = np.zeros((h, w), dtype=np.int64)
    for _ in range(spec.shapes):
        for _attempt in range(MAX_REDRAWS):
            mask = _shape_mask(rng, h, w)
            if mask.any():
                break
        else:
            raise RuntimeError(f"could not draw a non-empty shape in {MAX_REDRAWS} tries")
        truth[mask] = rng.integers(1, k)

    edge = label_transitions(truth)
    boundary = BoundaryMap(edge.astype(np.float64))
    unary = corrupt_unary(truth, k, spec.blur_radius, spec.noise_sigma, rng)

    slot = spec.boundary_channel % spec.channels
    stack = np.empty((spec.channels, h, w))
    for c in range(spec.channels):
        stack[c] = smooth_field(rng, h, w)
    stack[slot] = BOUNDARY_LOGIT * (2.0 * edge - 1.0)
    planted = np.zeros(spec.channels)
    planted[slot] = 1.0
    return Scene(
        truth=LabelMap(truth, k),
        boundary=boundary,
        unary=unary,
        stack=Tensor3(stack),
        planted_weights=BoundaryWeights(planted, 0.0),
    )


def planted_probability(boundary):
    """What the planted readout should output for a 0/1 boundary map."""
    return expit(BOUNDARY_LOGIT * (2.0 * np.asarray(boundary) - 1.0))
