"""World-consistent view synthesis toolkit.

Depth-based forward warps between trajectory viewpoints, rotation warps
between perspectives of one viewpoint, panoramic outpainting traversal,
and an orchestration pipeline with pluggable generation backends.
"""

from .geometry import (
    Convention,
    DepthMap,
    ImageBuffer,
    Intrinsics,
    PixelCoord,
    Pose,
    RelativePose,
    apply_relative,
    camera_to_world,
    intrinsics_from_fov,
    pixel_to_sphere,
    pitch_matrix,
    project,
    rotate_direction,
    unproject,
    yaw_matrix,
)
from .trajwarp import GuidanceImage, forward_warp, overlap_fraction, rasterize_splats
from .viewwarp import BlurredMask, binarize_mask, blur_mask, merge_guidance, rotation_warp
from .panorama import (
    DEFAULT_GRID,
    NeighborSet,
    TraversalQueue,
    ViewGrid,
    assemble_equirect,
    grid_rotation,
    neighbor_set,
    seam_error,
    trajectory_consistency,
    traversal_queue,
)
from .pipeline import (
    GeneratedTrajectory,
    PipelineConfig,
    Trajectory,
    Viewpoint,
    run_trajectory,
    select_reference_index,
)

__version__ = "0.1.0"
