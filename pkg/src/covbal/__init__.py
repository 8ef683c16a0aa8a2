"""Covariate-adaptive randomization: designs, recurrence checks, and balance simulations."""

from covbal.core import (
    Arm,
    CovariateStructure,
    ImbalanceState,
    WeightConfig,
    apply_assignment,
    delta,
    imbalance_pair,
    marginal_imbalance,
    overall_imbalance,
    stratum_index,
    stratum_profile,
    stratum_weight,
)
from covbal.designs import (
    CompleteRandomizationDesign,
    DesignSpec,
    HuHuDesign,
    PocockSimonDesign,
    StratifiedPermutedBlockDesign,
)
from covbal.simulate import CovariateDistribution, replicate, run_trial, sample_profile
from covbal.theory import c_of_wo, check_all, check_condition_b, drift_delta_v, u_star

__version__ = "0.1.0"
