"""Model-aware random forest explanations.

Train forests with exact bootstrap bookkeeping, measure instance
similarity the way the model sees it, retrieve case-based counterfactual
examples and hill-climbing trajectories, and render explanations as
signed partition-crossing tallies.
"""

from .counterfactual import (CLASS_FLIP, CLASS_PROBABILITY, STOP_CLASS_FLIP, STOP_CONVERGENCE,
                             CounterfactualResult, EuclideanBackend, GapBackend, Trajectory,
                             UtilitySpec, find_counterfactual, reference_utilities, trajectory,
                             trajectory_from_point, utility_eval)
from .data import Dataset, FeatureSchema, SplitIndices, load_idx_images, load_tabular, split
from .embedding import EmbeddingCoords, mds_embed, write_embedding
from .evaluation import (AttributionSet, FlipCurve, SparsitySummary, export_attributions,
                         import_attributions, perturb_topk, rank_features, run_flip_experiment,
                         sparsity_study, write_flip_curves)
from .forest import (BootstrapRecord, Forest, SplitInfo, Tree, enumerate_splits, fit, leaf_index,
                     load_forest, oob_predict_proba, oob_predict_proba_all, predict,
                     predict_proba, save_forest)
from .proximity import (DistanceMatrix, ProximityEngine, ProximityMatrix, euclidean_distance,
                        gap_distance, gap_proximity, gap_proximity_oos, write_matrix_text,
                        write_matrix_triplets)
from .tally import (GLOBAL_THRESHOLDS, REGION_RESTRICTED, PartitionTally, SplitGeometry,
                    build_geometry, null_and_mean_tallies, sparsity, tally_records,
                    tally_segment, tally_trajectory, write_tally_grid, write_tally_text)

__version__ = "0.1.0"

__all__ = [
    "AttributionSet", "BootstrapRecord", "CLASS_FLIP", "CLASS_PROBABILITY",
    "CounterfactualResult", "Dataset", "DistanceMatrix", "EmbeddingCoords", "EuclideanBackend",
    "FeatureSchema", "FlipCurve", "Forest", "GLOBAL_THRESHOLDS", "GapBackend",
    "PartitionTally", "ProximityEngine", "ProximityMatrix", "REGION_RESTRICTED",
    "SparsitySummary", "SplitGeometry", "SplitIndices", "SplitInfo", "STOP_CLASS_FLIP",
    "STOP_CONVERGENCE", "Trajectory", "Tree", "UtilitySpec", "build_geometry",
    "enumerate_splits", "euclidean_distance", "export_attributions", "find_counterfactual",
    "fit", "gap_distance", "gap_proximity", "gap_proximity_oos", "import_attributions",
    "leaf_index", "load_forest", "load_idx_images", "load_tabular", "mds_embed",
    "null_and_mean_tallies", "oob_predict_proba", "oob_predict_proba_all", "perturb_topk",
    "predict", "predict_proba", "rank_features", "reference_utilities", "run_flip_experiment",
    "save_forest", "sparsity", "sparsity_study", "split", "tally_records", "tally_segment",
    "tally_trajectory", "trajectory", "trajectory_from_point", "utility_eval",
    "write_embedding", "write_flip_curves", "write_matrix_text", "write_matrix_triplets",
    "write_tally_grid", "write_tally_text",
]
