"""Supervised clustering: connectivity-constrained Ward trees cut for prediction."""

from .cut import (CutTrace, cut_weight_map, expected_fit_count, fit_with_cut, predict_with_cut,
                  supervised_cut, unsupervised_cut_select)
from .errors import (AgdError, DegenerateError, FoldError, IncomparableRunsError, InvalidInputError,
                     NoChildrenError, NotSplittableError, ParseError)
from .estimators import (AnovaCV, BayesianRidge, BrrConfig, BrrFit, ElasticNet, ElasticNetCV, LinearModel,
                         LinearSVC, LinearSVCCV, anova_select, brr_fit, brr_posterior, brr_predict, enet_fit,
                         make_estimator, svc_fit)
from .evaluation import (FoldScheme, accuracy, comparison_table, cross_val_score, explained_variance,
                         paired_t_test)
from .grid import (ConnectivityGraph, Dataset, VoxelGrid, WeightMap, build_connectivity, load_dataset,
                   save_dataset)
from .parcellation import Parcellation, backproject_weights, main_branches_cut, parcel_averages, refine
from .searchlight import SearchlightSpec, searchlight_map, sphere_neighbors
from .simulation import Sim1dSpec, Sim3dSpec, gaussian_smooth, simulate_1d, simulate_3d, true_weights_1d
from .ward import Dendrogram, children, ward_build

__version__ = "0.1.0"
