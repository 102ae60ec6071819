"""Boundary neural field inference for semantic segmentation.

Learn a linear boundary readout over feature maps, turn boundaries into
sparse pixel affinities, and minimize a relaxed global energy in closed form
with a preconditioned conjugate-gradient solve per class.
"""

__version__ = "0.1.0"

from .affinity import (
    AffinityConfig,
    AffinityGraph,
    boundary_affinity,
    build_graph,
    combined_affinity,
    max_crossing,
    softmax_affinity,
)
from .boundary import (
    BoundaryWeights,
    SampleSet,
    TrainSample,
    balanced_sample,
    interpolate_stack,
    nms_thin,
    predict_boundary,
    train_boundary,
)
from .core import (
    BoundaryMap,
    LabelMap,
    Tensor3,
    UnaryField,
    export_pgm,
    tensor_read,
    tensor_write,
)
from .metrics import IouReport, evaluate_corpus, iou_single
from .solver import (
    Solution,
    SolveConfig,
    closed_form_solve,
    energy,
    energy_gradient,
    icm_baseline,
)
from .synth import Scene, SceneSpec, generate_scene
