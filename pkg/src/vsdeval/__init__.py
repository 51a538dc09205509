"""Pose-error evaluation for 6D object pose estimates (VSD, ADD, ADI)."""

from .errors import *  # noqa: F401,F403
from .geometry import CameraIntrinsics, Mesh, Pose, backproject, mesh_diameter, project, sample_view_sphere
from .maps import DepthMap, DistanceMap, VisibilityMask
from .render import depth_to_distance, render_depth, render_scene, silhouette
from .visibility import VisibilityConfig, visib_mask_est, visib_mask_gt, visible_fraction
from .metrics import ErrorKind, PoseError, VsdConfig, correct_ad, correct_vsd, e_add, e_adi, e_vsd
from .ply import load_model, parse_ply, write_ply
from .dataset import Dataset, EstimateRecord, SceneImage, TestTarget, discover_datasets, load_estimates, load_targets
from .harness import RecallReport, TargetResult, evaluate_dataset, run, score, sweep

__version__ = "0.1.0"
