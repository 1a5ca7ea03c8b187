"""Transductive customized training for sparse generalized linear models.

Training rows are grouped around the test rows they resemble, and a
separate L1-penalized GLM is fit for each group.
"""

__version__ = "0.1.0"

from .cluster import (
    Dendrogram,
    cut_by_count,
    cut_by_height,
    hclust_complete,
    knn_indices,
    pairwise_distances,
)
from .customize import (
    DEFAULT_R,
    CtModel,
    CustomizedPartition,
    FitSettings,
    build_grouped_partition,
    build_joint_partition,
    fit_ct,
    fit_standard,
    predict_ct,
    predict_standard,
    resolve_rejections,
)
from .data import (
    Dataset,
    InputError,
    ParseError,
    Standardizer,
    apply_standardizer,
    encode_labels,
    fit_standardizer,
    load_dataset,
)
from .glm import (
    GlmFamily,
    GlmFit,
    compute_lambda_path,
    fit_glm_path,
    lambda_max,
    predict_glm,
    soft_threshold,
)
from .losses import LossSpec, evaluate_loss, weighted_class_decision
from .selection import (
    DEFAULT_G_GRID,
    CvReport,
    cv_select,
    cv_select_grouped,
    knn_baseline,
    knn_cv_select,
    make_folds,
)
from .simulation import SimConfig, generate_instance, run_study
