"""Reduced-rank multilinear models for multiway data."""

from .arrays import (
    FactorSet,
    MultiwayArray,
    ShapeError,
    as_multiway,
    compose,
    fibers,
    hadamard,
    khatri_rao_skip,
    refold,
    sq_norm,
)
from .linalg import Spd, SpdError
from .rng import (
    RngStream,
    invgamma_sample,
    invwishart_sample,
    matnorm_sample,
    mvn_sample,
    trunc_norm_sample,
    wishart_sample,
)
from .als import AlsConfig, AlsResult, als_fit, als_single, rank_r_approx

__version__ = "0.1.0"

from .gibbs import (
    ChainConfig,
    ChainOutput,
    HierPrior,
    dic,
    ess,
    gibbs_sweep_flat,
    gibbs_sweep_hier,
    posterior_theta,
    run_chain,
)
from .means import CrossTabData, MeansConfig, means_fit, means_gibbs_sweep
from .probit import (
    OrdinalPanel,
    ProbitConfig,
    probit_fit,
    probit_gibbs_sweep,
    symmetric_compose,
)
from .simulate import SimSpec, simulate_theta
from .studies import (
    ExperimentReport,
    StudySchedule,
    run_known_rank_study,
    run_misspec_study,
    run_rank_selection,
)
from .estimators import (
    CPDecomposition,
    CrossClassifiedMeans,
    MultilinearBayes,
    OrdinalNetworkProbit,
)
