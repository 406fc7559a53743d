"""binpick: probabilistic 6-DoF parallel-jaw grasp modeling for bin picking.

A numpy/scipy library covering the full pipeline around a pluggable grasp
predictor: depth -> TSDF -> normal grid encoding, power-spherical grasp
orientation distributions, dense antipodal grasp labels with collision
scoring, differentiable training losses with verified gradients, and a
clearing-episode benchmark reporting success and clearing rates.
"""

__version__ = "0.1.0"

from .geometry import (
    APPROACH_REF,
    ContactGrasp,
    GraspConfiguration,
    GripperModel,
    Pose,
    approach_set,
    contact_pair,
    gram_schmidt_perp,
    grasp_pose,
    normalize,
)
from .power_spherical import (
    ApproachMixture,
    PowerSpherical,
    approach_mixture_log_pdf,
    approach_rotations,
    kappa_map,
    ps_log_pdf,
    ps_rotate,
    ps_sample,
)
from .volumetric import (
    CameraIntrinsics,
    GridSpec,
    LabelGrid,
    NormalGrid,
    TsdfGrid,
    build_label_grid,
    fuse_depth,
    load_grid,
    save_grid,
    trilinear,
    tsdf_normals,
)
from .shapes import Box, Cylinder, SceneObject, Sphere, TriMesh, load_obj
from .scene import (
    BinModel,
    Scene,
    SurfaceSample,
    load_scene,
    make_scene,
    save_scene,
    surface_samples,
)
from .oracle import (
    GraspLabel,
    GraspLabelSet,
    OracleParams,
    antipodal_quality,
    collision_check,
    find_opposing_contact,
    generate_labels,
    load_labels,
    save_labels,
)
from .render import add_depth_noise, render_depth, top_down_camera
from .predictor import FilePredictor, GraspPrediction, OraclePredictor, Prediction, Predictor
from .evaluate import (
    EpisodeResult,
    Termination,
    aggregate_metrics,
    compose_collision,
    compose_quality,
    execute_virtual,
    run_episode,
    select_next_grasp,
)
from .losses import (
    LossWeights,
    NeighborSet,
    focal_loss,
    gather_neighbors,
    grad_check,
    loss_check,
    neighbor_mean_baseline,
    nll_approach,
    nll_baseline,
    quality_l1,
    total_loss,
    width_loss,
)
from .config import PRESETS, RunConfig
