"""cellvox: synthetic 3D cell volumes, multi-view box fusion, per-box
segmentation, and instance-segmentation evaluation."""

from .boxes import (
    Box2D,
    Box3D,
    View,
    box2d_iou,
    box3d_iou,
    box3d_overlap,
    load_boxes3d,
    save_boxes3d,
)
from .detect import (
    DetectionSet,
    blob_detections,
    detect_blobs,
    load_detections,
    oracle_boxes_2d,
    oracle_boxes_3d,
    otsu_threshold,
    save_detections,
    slice_view,
)
from .fusion import (
    FusionConfig,
    ProposalCluster,
    cluster_proposals,
    filter_confidence,
    fuse,
    median_box,
    nms_2d,
    nms_3d,
    pair_proposals,
    stack_tracks,
)
from .boxseg import (
    CUBE_SIDE,
    BoxPipelineRecord,
    ClassicalSegBackend,
    ExternalSegBackend,
    OracleSegBackend,
    assemble,
    crop_box,
    pad_to_cube,
    resize_cube,
    restore_mask,
    save_external_masks,
    segment_primary,
    segment_volume,
)
from .metrics import (
    DEFAULT_GRID,
    MatchResult,
    MetricsReport,
    ScoreCurve,
    curves,
    match_instances,
    mean_scores,
    prj_at,
    save_curve_csv,
    save_report,
)
from .pipeline import (
    AblationSpec,
    DetectorConfig,
    MetricsConfig,
    PipelineConfig,
    SegmenterConfig,
    load_config,
    run_ablation,
    run_pipeline,
)
from .synth import GenConfig, gen_dataset, generate_volume
from .volume import (
    IntensityVolume,
    LabelVolume,
    SoftMask,
    mask_iou,
    volume_read,
    volume_write,
)

__version__ = "0.1.0"
