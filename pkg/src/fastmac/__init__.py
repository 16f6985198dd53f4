"""Spectral sampling of correspondence graphs for maximal-clique point cloud registration."""

__version__ = "0.1.0"

from .clique import Clique, CliqueBudget, CliqueSearch, maximal_cliques, node_guided_selection
from .corr_graph import (
    CompatibilityGraph,
    Correspondence,
    GraphConfig,
    build_graph,
    compatibility_distance,
    edge_weight,
    load_correspondences,
    save_correspondences,
)
from .evaluation import (
    INDOOR,
    OUTDOOR,
    MetricThresholds,
    SweepReport,
    filter_ablation,
    registration_recall,
    rotation_error,
    run_sweep,
    signal_ablation,
    translation_error,
)
from .gsp import GraphFilter, GraphShift, all_pass, decompose, gft, haar_high_pass, haar_low_pass, inverse_gft, laplacian_filter
from .registration import (
    DegenerateClique,
    InsufficientStructure,
    PipelineConfig,
    RegistrationResult,
    RigidTransform,
    estimate_pose_svd,
    fastmac_register,
    hypothesis_score,
)
from .sampling import (
    SampleSelection,
    SamplerConfig,
    SamplingDistribution,
    degree_distribution,
    expected_reconstruction_error,
    fps_sample_6d,
    greedy_deterministic_sample,
    random_sample,
    stochastic_sample,
    xyz_signal_distribution,
)
from .synth import CavemanSpec, Scene, SceneSpec, connected_caveman, generate_scene, nn_match
