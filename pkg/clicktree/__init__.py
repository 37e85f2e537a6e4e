from .analytic import g_closed, p0_all, p0_single, p0_subset, pclick_nfold, subset_probabilities, theta_closed  # noqa: F401
from .config import RunConfig, load_config  # noqa: F401
from .distributions import expectation_sigma, mixed_distribution, sps_distribution  # noqa: F401
from .estimator import Classification, Estimate, EstimateReport, aggregate_and_classify, analyze, g_k, theta_k  # noqa: F401
from .models import (  # noqa: F401
    CountSummary,
    DetectorTree,
    EmitterEnsemble,
    NoiseModel,
    OutcomeDistribution,
    PhotonNumberDistribution,
    ProbabilityTable,
)
from .oracle import check_equivalence, enumerate_outcomes, q_all_noclick, q_kfold_click, q_single_noclick  # noqa: F401
from .simulator import SimulationConfig, simulate, simulate_stream  # noqa: F401
from .timetags import TimeTagStream, WindowingPolicy, ingest, parse_stream  # noqa: F401
