"""Hybrid censored quantile regression forests.

Heterogeneous quantile coefficients ``beta_tau(x)`` of right-censored
survival outcomes, estimated by a forest-weighted censored quantile
regression.
"""

__version__ = "0.1.0"

from .censoring import (  # noqa: E402
    CdfConfig, CdfModel, RedistributionWeights, evaluate_cdf, fit_conditional_cdf,
    redistribution_weights,
)
from .cqr import (  # noqa: E402
    QuantileFit, RankScoreResult, WeightedQrProblem, augment_pseudo_observations,
    censored_rank_scores, pinball_loss, rank_score_statistic, weighted_qr_fit,
)
from .data import (  # noqa: E402
    ScenarioSpec, SurvivalDataset, TruthTable, load_dataset, simulate_scenario, true_beta,
)
from .errors import (  # noqa: E402
    DataError, DegenerateDesignError, HcqrfError, InsufficientSampleError, NoOOBTreesError,
    NumericalError, ParseError,
)
from .evaluation import (  # noqa: E402
    KmCurve, MetricTable, calibration_tau_hat, km_estimate, mse_mae,
)
from .forest import (  # noqa: E402
    Forest, ForestConfig, estimate_beta, forest_weights, grow_forest, load_forest,
    predict_quantile, save_forest,
)
from .importance import (  # noqa: E402
    ImportanceReport, decomposed_importance, oob_beta, permutation_importance,
)
