"""slicelearn: entropy-based slice selection and transfer-learning
classification for 3D brain volumes.

The pipeline: ingest volumes (NIfTI-1 or RAWVOL) with a subject manifest,
rank axial slices by histogram entropy and keep the top K, resize and
normalize them into 3-channel tensors, train a small CNN either from
scratch or with a frozen pretrained backbone and a re-initialized head,
and score everything with subject-level k-fold cross-validation.
"""

from .errors import SliceLearnError
from .evaluate import (
    EvalReport,
    FoldLevel,
    FoldPlan,
    Regime,
    accuracy,
    compare_selection,
    cross_validate,
    generate_synthetic_cohort,
    kfold_split,
    write_cohort,
)
from .image_ops import NormalizationSpec, NormMode, resize_bilinear, to_model_input
from .nn import (
    Network,
    build_architecture,
    cross_entropy,
    micro_gap,
    micro_vgg,
    softmax,
)
from .pipeline import Example, SelectionStrategy, build_examples
from .slice_select import (
    Axis,
    EntropyScore,
    Histogram,
    RangeMode,
    SelectionConfig,
    Slice2D,
    build_histogram,
    entropy_bits,
    extract_slices,
    rank_slices,
)
from .training import (
    FreezeMask,
    OptimizerKind,
    TrainConfig,
    TransferMode,
    WeightContainer,
    apply_transfer,
    load_weights,
    predict,
    rmsprop_step,
    save_weights,
    sgd_step,
    train,
)
from .volume_io import (
    Label,
    SubjectRecord,
    Volume,
    label_from_cdr,
    load_volume,
    parse_manifest,
    parse_nifti,
    parse_raw_volume,
    write_manifest,
    write_raw_volume,
)

__version__ = "0.1.0"
