"""Relational Bayesian sets: rank linked pairs by analogy to a query set of pairs."""

from .glm import (
    GaussianBelief,
    build_empirical_prior,
    fit_mle_weighted,
    logistic,
    mc_predictive_oracle,
    predictive_probability,
    variational_fit,
)
from .ranking import QuerySet, RankedResult, rbsets_score, run_query
from .relational import (
    LinkMatrix,
    ObjectTable,
    PairFeaturizer,
    RelationalDatabase,
    pair_features,
)

__version__ = "0.1.0"
