"""ribkit: rib label volume toolkit.

Library layout (one module per concern):

* :mod:`ribkit.volume` -- grid types, resampling, bone-window normalization
* :mod:`ribkit.components` -- 3D connected components and size filtration
* :mod:`ribkit.refine` -- geometric label refinement and the spine cut
* :mod:`ribkit.losses` -- segmentation/labeling loss references + gradients
* :mod:`ribkit.metrics` -- per-rib recall, Label-Accuracy, Label-Dice
* :mod:`ribkit.infer` -- sliding-window inference with pluggable predictors
* :mod:`ribkit.fileio` -- NIfTI-1, centerline CSV, metric reports
* :mod:`ribkit.phantom` -- synthetic ribcage generator and corruptions
* :mod:`ribkit.cli` -- the ``ribkit`` command
"""

from .components import Component, ComponentSet, filter_small, label_components
from .infer import (
    ConstantPredictor,
    DecodeConfig,
    GlobalFieldPredictor,
    OracleLabelPredictor,
    PatchPlan,
    PredictorProtocolError,
    SubprocessPredictor,
    decode,
    plan_patches,
    run_inference,
)
from .fileio import (
    NiftiFormatError,
    read_centerline,
    read_nifti,
    write_centerline,
    write_nifti,
    write_report,
)
from .losses import (
    BinaryField,
    ClassField,
    LossConfig,
    bce_loss,
    ce_loss,
    dice_loss,
    focal_loss,
    gradient_check,
    hierarchical_loss,
    softargmax_loss,
)
from .metrics import (
    MetricsReport,
    RibInstanceScore,
    aggregate_reports,
    evaluate_case,
    label_accuracy,
    label_dice,
    rib_recall,
)
from .phantom import Corruption, PhantomConfig, corrupt, parse_corruption
from .phantom import generate as generate_phantom
from .refine import (
    CapacityError,
    Centerline,
    ComponentAssignment,
    RefineConfig,
    SideMasks,
    choose_sequence,
    component_capacities,
    default_midline_x,
    probable_types,
    refine,
    refine_with_report,
    sort_by_height,
    spine_cut,
    split_sides,
)
from .volume import (
    LabelVolume,
    Spacing,
    Volume,
    WindowConfig,
    normalize_bone_window,
    resample_linear,
    resample_nearest,
)

__version__ = "0.1.0"
