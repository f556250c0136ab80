"""Joint manifold diffusion for combining rank predictors across tasks.

A main rank predictor is refined by diffusing it jointly with reference
predictors from related tasks. References may live on different instance
sets; soft correspondences ("bridges") between the sets are diffused along
with the predictors.
"""
from .bridge import (
    FeatureGraph,
    alignment_score,
    bridge_step_explicit,
    bridge_step_implicit,
    build_feature_graph,
    init_bridge,
)
from .errors import (
    DegenerateSpectrumWarning,
    JointDiffError,
    LengthMismatchError,
    ZeroVarianceError,
)
from .fdiffusion import ScoreProblem, diffuse_f_step, score
from .joint import (
    DiffusionConfig,
    DiffusionState,
    ProblemInstance,
    Reference,
    run_joint_diffusion,
    tune_hyperparameters,
)
from .manifold import manifold_metric, project_to_manifold, task_affinity
from .ranking import LinearRanker, ranking_accuracy, train_linear_ranker

__version__ = "0.1.0"

__all__ = [
    "DegenerateSpectrumWarning",
    "DiffusionConfig",
    "DiffusionState",
    "FeatureGraph",
    "JointDiffError",
    "LengthMismatchError",
    "LinearRanker",
    "ProblemInstance",
    "Reference",
    "ScoreProblem",
    "ZeroVarianceError",
    "alignment_score",
    "bridge_step_explicit",
    "bridge_step_implicit",
    "build_feature_graph",
    "diffuse_f_step",
    "init_bridge",
    "manifold_metric",
    "project_to_manifold",
    "ranking_accuracy",
    "run_joint_diffusion",
    "score",
    "task_affinity",
    "train_linear_ranker",
    "tune_hyperparameters",
]
