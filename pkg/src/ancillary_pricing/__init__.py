"""Online focal/ancillary pricing with learned bundling decisions.

A seller faces a stream of customers described by feature vectors.  Each
customer values a focal product and an ancillary add-on linearly in the
features plus a log-concave shock.  The package provides the optimal-price
oracle, a constrained maximum-likelihood estimator with confidence
ellipsoids, three learning policies and a reproducible simulation harness.
"""

from .config import ExperimentConfig, ShockSpec, load_config, parse_config, save_config
from .errors import (BracketError, ConsistencyError, ConvergenceError, DegenerateError, DomainError,
                     EpisodeError, ParseError, PricingError, UnsupportedError, ValidationError)
from .market import (FixedSequence, IIDGaussianNormalized, IIDUnitBall, MarketInstance, PointMass,
                     EpisodeResult, realize_demand, run_episode)
from .policies import LearningPolicy, OracleMode, PolicyDecision, PolicyKind
from .pricing import PriceBox, PricingModel, ShockTriple, Strategy
from .shocks import Logistic, Normal, Uniform, compute_constants, convolve, make_shock

__version__ = "0.1.0"

__all__ = [
    "BracketError", "ConsistencyError", "ConvergenceError", "DegenerateError", "DomainError",
    "EpisodeError", "EpisodeResult", "ExperimentConfig", "FixedSequence", "IIDGaussianNormalized",
    "IIDUnitBall", "LearningPolicy", "Logistic", "MarketInstance", "Normal", "OracleMode",
    "ParseError", "PointMass", "PolicyDecision", "PolicyKind", "PriceBox", "PricingError",
    "PricingModel", "ShockSpec", "ShockTriple", "Strategy", "Uniform", "UnsupportedError",
    "ValidationError", "compute_constants", "convolve", "load_config", "make_shock", "parse_config",
    "realize_demand", "run_episode", "save_config",
]
