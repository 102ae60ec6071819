"""Boundary readout: sigmoid of a linear combination of resized feature maps.

The head has one weight per feature channel plus an optional bias. It is fit
with mini-batch SGD on soft targets (fraction of annotators marking a pixel
as boundary) drawn evenly from the four quartiles of the target range, and
its output can be thinned with non-maximum suppression.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .core import BoundaryMap, Tensor3

log = logging.getLogger(__name__)

QUARTILE_EDGES = (0.0, 0.25, 0.5, 0.75)
# expit saturates to exactly 0/1 in float64; keep outputs inside the open interval.
_PROB_EPS = 1e-15


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch}: loss = {loss}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True, eq=False)
class BoundaryWeights:
    weights: np.ndarray
    bias: float = 0.0
    loss_history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ValueError("boundary weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def channel_count(self):
        return self.weights.size

    @classmethod
    def zeros(cls, channels):
        return cls(np.zeros(channels), 0.0)

    def to_tensor(self):
        """Weights file layout: ``1 x 1 x (C+1)`` with the bias last."""
        return Tensor3(np.append(self.weights, self.bias).reshape(-1, 1, 1))

    @classmethod
    def from_tensor(cls, t):
        flat = t.data.ravel()
        if t.height != 1 or t.width != 1 or flat.size < 2:
            raise ValueError(f"weights tensor must be 1x1x(C+1), got {t.height}x{t.width}x{t.channels}")
        return cls(flat[:-1], flat[-1])


class TrainSample(NamedTuple):
    features: np.ndarray
    target: float


@dataclass
class SampleSet:
    """Training points as a feature matrix and a target vector."""

    features: np.ndarray  # (n, C)
    targets: np.ndarray  # (n,)
    quartile_counts: tuple = (0, 0, 0, 0)
    skipped_quartiles: int = 0

    def __len__(self):
        return len(self.targets)

    def __iter__(self):
        for x, t in zip(self.features, self.targets):
            yield TrainSample(x, float(t))

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        x = np.array([s.features for s in samples], dtype=np.float64)
        t = np.array([s.target for s in samples], dtype=np.float64)
        return cls(x, t)

    def concat(self, other):
        return SampleSet(
            np.vstack([self.features, other.features]),
            np.concatenate([self.targets, other.targets]),
            tuple(a + b for a, b in zip(self.quartile_counts, other.quartile_counts)),
            self.skipped_quartiles + other.skipped_quartiles,
        )


def _interp_matrix(n_in, n_out):
    """Row-stochastic matrix resampling a length-``n_in`` signal to ``n_out``.

    Uses align-corners sampling: output 0 and ``n_out-1`` land exactly on input
    0 and ``n_in-1``.
    """
    r = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        r[:, 0] = 1.0
        return r
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    r[rows, lo] = 1.0 - frac
    r[rows, lo + 1] += frac
    return r


def interpolate_stack(stack, out_h, out_w):
    """Bilinearly resize every channel of ``stack`` to ``out_h x out_w``."""
    if stack.channels == 0 or stack.height == 0 or stack.width == 0:
        raise ValueError("cannot interpolate a zero-sized stack")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    if (out_h, out_w) == (stack.height, stack.width):
        return stack
    ry = _interp_matrix(stack.height, out_h)
    rx = _interp_matrix(stack.width, out_w)
    out = np.einsum("ij,cjk,lk->cil", ry, stack.data, rx)
    # Convex combinations, but rounding can step just outside the source range.
    lo = stack.data.min(axis=(1, 2))[:, None, None]
    hi = stack.data.max(axis=(1, 2))[:, None, None]
    return Tensor3(np.clip(out, lo, hi))


def _linear_response(features, weights):
    return features @ weights.weights + weights.bias


def predict_boundary(stack, weights, out_h=None, out_w=None):
    if stack.channels != weights.channel_count:
        raise ValueError(
            f"stack has {stack.channels} channels but weights expect {weights.channel_count}"
        )
    out_h = stack.height if out_h is None else out_h
    out_w = stack.width if out_w is None else out_w
    feats = interpolate_stack(stack, out_h, out_w).data
    score = np.tensordot(weights.weights, feats, axes=(0, 0)) + weights.bias
    prob = np.clip(expit(score), _PROB_EPS, 1.0 - _PROB_EPS)
    return BoundaryMap(prob)


def quartile_index(targets):
    """Quartile of each target value: [0,.25), [.25,.5), [.5,.75), [.75,1]."""
    return np.clip(np.searchsorted(QUARTILE_EDGES, targets, side="right") - 1, 0, 3)


def balanced_sample(truth, stack, n, seed=0):
    """Draw ``n`` pixels spread evenly over the quartiles of the target range.

    ``truth`` is a :class:`BoundaryMap` or a 2-d array of soft targets. The
    stack is resized to the truth's size before features are read. Within a
    quartile, pixels are drawn without replacement unless the quartile holds
    fewer pixels than its share. Empty quartiles are skipped and their share is
    spread over the populated ones; the number skipped is recorded.
    """
    if n < 4:
        raise ValueError(f"need at least 4 samples, got {n}")
    targets = truth.values if isinstance(truth, BoundaryMap) else np.asarray(truth, dtype=np.float64)
    h, w = targets.shape
    feats = interpolate_stack(stack, h, w).data.reshape(stack.channels, -1).T
    flat = targets.ravel()
    quart = quartile_index(flat)
    members = [np.flatnonzero(quart == q) for q in range(4)]
    populated = [q for q in range(4) if members[q].size]
    if not populated:
        raise ValueError("ground truth map is empty")
    skipped = 4 - len(populated)
    if skipped:
        log.warning("%d empty target quartile(s) skipped", skipped)

    base, extra = divmod(n, len(populated))
    rng = np.random.default_rng(seed)
    picks, counts = [], [0, 0, 0, 0]
    for rank, q in enumerate(populated):
        want = base + (1 if rank < extra else 0)
        pool = members[q]
        picks.append(rng.choice(pool, size=want, replace=pool.size < want))
        counts[q] = want
    idx = np.concatenate(picks)
    return SampleSet(feats[idx].copy(), flat[idx].copy(), tuple(counts), skipped)


def cross_entropy(features, targets, weights, bias=0.0):
    """Mean soft-label cross-entropy of ``sigmoid(features @ weights + bias)``."""
    s = features @ weights + bias
    # -[t log p + (1-t) log(1-p)] == softplus(s) - t*s
    return float(np.mean(np.logaddexp(0.0, s) - targets * s))


def cross_entropy_grad(features, targets, weights, bias=0.0):
    """Gradient of :func:`cross_entropy` with respect to (weights, bias)."""
    resid = expit(features @ weights + bias) - targets
    n = len(targets)
    return features.T @ resid / n, float(resid.sum() / n)


def train_boundary(samples, epochs=50, lr=0.05, batch=256, seed=0, fit_bias=True, init=None):
    """Fit boundary weights by mini-batch SGD on soft-label cross-entropy.

    Weights start at zero (or ``init``). After each epoch the full-data loss is
    checked; if it went up, the epoch is undone and the step size halved, so
    the recorded loss never increases.
    """
    if not isinstance(samples, SampleSet):
        samples = SampleSet.from_samples(samples)
    x, t = samples.features, samples.targets
    if len(t) == 0:
        raise ValueError("no training samples")
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if np.any((t < 0) | (t > 1)):
        raise ValueError("targets must lie in [0, 1]")

    init = init or BoundaryWeights.zeros(x.shape[1])
    w, b = init.weights.copy(), init.bias
    rng = np.random.default_rng(seed)
    loss = cross_entropy(x, t, w, b)
    history = [loss]
    n = len(t)
    for epoch in range(1, epochs + 1):
        w_prev, b_prev = w.copy(), b
        order = rng.permutation(n)
        for start in range(0, n, batch):
            sel = order[start:start + batch]
            gw, gb = cross_entropy_grad(x[sel], t[sel], w, b)
            w -= lr * gw
            if fit_bias:
                b -= lr * gb
        new_loss = cross_entropy(x, t, w, b)
        if not np.isfinite(new_loss):
            raise TrainingDivergedError(epoch, new_loss)
        if new_loss > loss:
            w, b = w_prev, b_prev
            lr *= 0.5
            log.debug("epoch %d: loss rose to %.6g, lr -> %.3g", epoch, new_loss, lr)
        else:
            loss = new_loss
        history.append(loss)
    return BoundaryWeights(w, b, loss_history=tuple(history))


def boundary_accuracy(pred, truth, threshold=0.5):
    """Fraction of pixels where ``pred > threshold`` agrees with ``truth > threshold``."""
    p = pred.values if isinstance(pred, BoundaryMap) else np.asarray(pred)
    g = truth.values if isinstance(truth, BoundaryMap) else np.asarray(truth)
    return float(np.mean((p > threshold) == (g > threshold)))


# Neighbour offsets (drow, dcol) across the edge for each quantized gradient angle.
_NMS_STEPS = ((0, 1), (1, 1), (1, 0), (1, -1))


def _suppress(v):
    gy = ndimage.sobel(v, axis=0, mode="nearest")
    gx = ndimage.sobel(v, axis=1, mode="nearest")
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    sector = (np.floor((angle + 22.5) / 45.0).astype(int)) % 4
    flat = np.hypot(gx, gy) <= 1e-12 * max(1.0, float(np.abs(v).max()))

    pad = np.pad(v, 1, mode="edge")
    h, w = v.shape
    strict = np.zeros((4,) + v.shape, dtype=bool)
    for k, (dr, dc) in enumerate(_NMS_STEPS):
        fwd = pad[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        bwd = pad[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        strict[k] = (v > fwd) & (v > bwd)
    along_gradient = np.take_along_axis(strict, sector[None], axis=0)[0]
    # Zero gradient (ridge crests, plateaus): keep only strict maxima along some axis.
    keep = np.where(flat, strict.any(axis=0), along_gradient)
    return np.where(keep, v, 0.0)


def nms_thin(b):
    """Thin a boundary map to one-pixel-wide ridges.

    Gradient direction comes from Sobel filters, quantized to 0/45/90/135
    degrees; a pixel survives only if it is strictly greater than both
    neighbours along that direction. Where the gradient vanishes the pixel must
    be a strict maximum along at least one of the four directions. Ties
    suppress both pixels. Maps already flagged as thinned are returned as-is;
    re-thinning bare thinned values is not a no-op, since open contour ends
    then point along themselves and lose a pixel per pass.
    """
    if b.thinned:
        return b
    return BoundaryMap(_suppress(b.values), thinned=True)
