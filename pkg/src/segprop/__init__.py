"""Video label propagation toolkit.

Densifies sparse keyframe annotations across video with flow-chain voting,
per-region homography voting, and iterative neighborhood consensus, plus the
evaluation, synthesis, and annotation-service machinery around the engine.
"""

from .core import (
    CLASS_NAMES,
    NUM_CLASSES,
    UNLABELED,
    FlowDirection,
    FlowField,
    LabelMap,
    ManifestError,
    SegpropError,
    SequenceManifest,
    VoteGrid,
    class_color,
    class_id,
    class_name,
    load_manifest,
    save_manifest,
)
from .flow import (
    ArrayFlowSource,
    CorrespondenceMap,
    DirectoryFlowSource,
    EstimatingFlowSource,
    FlowFormatError,
    FlowSource,
    MissingFlowError,
    chain_correspondence,
    estimate_flow,
    read_flow_file,
    write_flow_file,
)
from .geometry import (
    ConnectedRegion,
    FitFailedError,
    connected_components,
    fit_homography_ransac,
    warp_region,
)
from .propagation import (
    ExternalVoteProvider,
    NullVoteProvider,
    PropagationConfig,
    Propagator,
    VoteProvider,
    cast_flow_votes,
    cast_homography_votes,
    propagate_pair,
    resolve_majority,
    segprop_iterate,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
