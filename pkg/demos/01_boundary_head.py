"""
Learning a boundary detector from feature maps
==============================================

A boundary probability is a sigmoid of a linear mix of feature channels,
each bilinearly resized to the output size. Here we plant the boundary in
one channel of a synthetic stack, train the readout from scratch, and thin
the result with non-maximum suppression.
"""

import numpy as np

from bnf.boundary import balanced_sample, boundary_accuracy, nms_thin, predict_boundary, train_boundary
from bnf.synth import SceneSpec, generate_scene

# Two scenes from the same generator: one to train on, one to check.
train = generate_scene(SceneSpec(seed=100))
test = generate_scene(SceneSpec(seed=101))
print("stack:", train.stack.data.shape, "(channels, height, width)")

# Boundary pixels are rare, so samples are spread evenly over the four
# quartiles of the target value. With 0/1 targets only two are populated.
samples = balanced_sample(train.boundary, train.stack, 8000, seed=0)
print("per quartile:", samples.quartile_counts, "skipped:", samples.skipped_quartiles)

weights = train_boundary(samples, epochs=50)
print("loss %.4f -> %.4f" % (weights.loss_history[0], weights.loss_history[-1]))

# The planted channel should dominate the learned weights.
top = int(np.argmax(np.abs(weights.weights)))
print("largest weight on channel", top, "of", len(weights.weights))

b = predict_boundary(test.stack, weights)
print("held-out accuracy at 0.5: %.3f" % boundary_accuracy(b, test.boundary))

# Synthetic ground truth marks both sides of every label change, so the raw
# prediction is two pixels wide. NMS keeps strict local maxima only.
thin = nms_thin(b)
print("pixels above 0.5 before / after thinning:",
      int((b.values > 0.5).sum()), "/", int((thin.values > 0.5).sum()))
