"""Relational Bayesian sets scoring, baseline scorers and query execution."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_expit

from .glm import (
    DEFAULT_L2,
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    GaussianBelief,
    fit_mle_weighted,
    log_predictive_probability,
    variational_fit,
)
from .relational import (
    DataError,
    LinkMatrix,
    ObjectTable,
    Pair,
    PairFeaturizer,
    RelationalDatabase,
    neighborhood_filter,
)

SCORER_NAMES = ("rbsets", "cos", "nns", "mls", "sbsets")


@dataclass(frozen=True, eq=False)
class QuerySet:
    """Linked pairs chosen by the user plus their pair feature rows."""

    pairs: tuple[Pair, ...]
    features: np.ndarray

    def __post_init__(self):
        pairs = tuple((str(a), str(b)) for a, b in self.pairs)
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2:
            feats = feats.reshape(len(pairs), -1)
        if feats.shape[0] != len(pairs):
            raise ValueError(f"{len(pairs)} query pairs but {feats.shape[0]} feature rows")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "features", feats)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Pair], links: LinkMatrix, featurizer: PairFeaturizer) -> QuerySet:
        pairs = [links.canonical(p) for p in pairs]
        for p in pairs:
            if p not in links:
                raise DataError(f"query pair {p[0]}\t{p[1]} is not a linked pair")
        feats = featurizer(pairs) if pairs else np.zeros((0, featurizer.dimension))
        return cls(tuple(pairs), feats)

    @property
    def link_indicators(self) -> np.ndarray:
        return np.ones(len(self.pairs))

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class RankedResult:
    entries: tuple[tuple[Pair, float], ...]
    scorer_name: str
    query_id: str = ""
    warning: str | None = None
    info: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_scores(cls, pairs, scores, scorer_name, query_id="", warning=None, info=None):
        scores = np.asarray(scores, dtype=float)
        order = sorted(range(len(pairs)), key=lambda i: (-scores[i], pairs[i]))
        entries = tuple((tuple(pairs[i]), float(scores[i])) for i in order)
        return cls(entries, scorer_name, query_id, warning, info or {})

    @property
    def pairs(self) -> list[Pair]:
        return [p for p, _ in self.entries]

    @property
    def scores(self) -> np.ndarray:
        return np.array([s for _, s in self.entries])

    def __len__(self) -> int:
        return len(self.entries)


# ---------------------------------------------------------------------------
# score functions
# ---------------------------------------------------------------------------


def rbsets_score(prior: GaussianBelief, posterior: GaussianBelief, x):
    """Log Bayes factor of a candidate link under the query posterior vs the prior."""
    return log_predictive_probability(posterior, x) - log_predictive_probability(prior, x)


def cosine_score(query_features, x, aggregate: str = "mean"):
    q = np.atleast_2d(np.asarray(query_features, dtype=float))
    if q.shape[0] == 0:
        raise ValueError("cosine score needs a nonempty query")
    x = np.asarray(x, dtype=float)
    qn = np.linalg.norm(q, axis=1)
    qn = np.where(qn > 0, qn, 1.0)
    xn = np.linalg.norm(x, axis=-1)
    sims = (x @ (q / qn[:, None]).T) / np.where(xn > 0, xn, 1.0)[..., None]
    sims = np.where((xn > 0)[..., None], sims, 0.0)
    if aggregate == "mean":
        return sims.mean(axis=-1)
    if aggregate == "max":
        return sims.max(axis=-1)
    raise ValueError(f"unknown cosine aggregate {aggregate!r}")


def nns_score(query_features, x):
    """Negated distance from ``x`` to the nearest query feature row."""
    q = np.atleast_2d(np.asarray(query_features, dtype=float))
    if q.shape[0] == 0:
        raise ValueError("nearest-neighbour score needs a nonempty query")
    x = np.asarray(x, dtype=float)
    dist = np.linalg.norm(x[..., None, :] - q, axis=-1)
    return -dist.min(axis=-1)


def fit_query_mle(query_features, negatives, negative_weights=None, l2=DEFAULT_L2):
    q = np.atleast_2d(np.asarray(query_features, dtype=float))
    neg = np.atleast_2d(np.asarray(negatives, dtype=float))
    if neg.shape[0] == 0:
        raise ValueError("MLS needs a nonempty negative pool")
    x = np.vstack([q, neg])
    y = np.concatenate([np.ones(q.shape[0]), np.zeros(neg.shape[0])])
    w = None
    if negative_weights is not None:
        w = np.concatenate([np.ones(q.shape[0]), np.asarray(negative_weights, dtype=float)])
    return fit_mle_weighted(x, y, w, l2=l2)


def mls_from_thetas(theta_query, theta_global, x):
    x = np.asarray(x, dtype=float)
    return log_expit(x @ theta_query) - log_expit(x @ theta_global)


def mls_score(query_features, negatives, theta_global, x, negative_weights=None, l2=DEFAULT_L2):
    """Plug-in analogue of the RBSets score with query and global MLE weights."""
    theta_q = fit_query_mle(query_features, negatives, negative_weights, l2)
    return mls_from_thetas(theta_q, theta_global, x)


@dataclass(frozen=True, eq=False)
class BernoulliSetsModel:
    """Independent Beta-Bernoulli hyperparameters over binary pair columns."""

    alpha: np.ndarray
    beta: np.ndarray
    kappa: float = 2.0

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        if a.shape != b.shape or np.any(a <= 0) or np.any(b <= 0):
            raise ValueError("alpha and beta must be positive and of equal shape")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @classmethod
    def from_rows(cls, rows, kappa: float = 2.0, floor: float = 1e-3) -> BernoulliSetsModel:
        means = np.asarray(rows, dtype=float).mean(axis=0)
        return cls(np.maximum(kappa * means, floor), np.maximum(kappa * (1.0 - means), floor), kappa)


def sbsets_score(model: BernoulliSetsModel, query_rows, x_rows):
    """Bayesian sets log score ``log p(x, S) - log p(x) p(S)`` for binary rows."""
    q = np.asarray(query_rows, dtype=float).reshape(-1, model.alpha.size)
    n = q.shape[0]
    a, b = model.alpha, model.beta
    sums = q.sum(axis=0)
    a_t, b_t = a + sums, b + n - sums
    const = np.sum(np.log(a + b) - np.log(a + b + n))
    w1 = np.log(a_t) - np.log(a)
    w0 = np.log(b_t) - np.log(b)
    x = np.asarray(x_rows, dtype=float)
    return const + x @ w1 + (1.0 - x) @ w0


@dataclass(frozen=True)
class PairBinarizer:
    """Binary merged rows ``[a, b, (a*b)]`` for the flattened Bayesian sets baseline.

    Each merged continuous column is thresholded at its mean over the linked
    rows; ``products`` appends the elementwise product of the two binary blocks.
    """

    table_a: ObjectTable
    table_b: ObjectTable
    thresholds: np.ndarray
    products: bool = True

    @classmethod
    def fit(cls, table_a, table_b, linked_pairs, products=True) -> PairBinarizer:
        merged = np.hstack(
            [table_a.rows([p[0] for p in linked_pairs]), table_b.rows([p[1] for p in linked_pairs])]
        )
        return cls(table_a, table_b, merged.mean(axis=0), products)

    def __call__(self, pairs: Sequence[Pair]) -> np.ndarray:
        v = self.table_a.n_features
        if len(pairs) == 0:
            return np.zeros((0, 3 * v if self.products else 2 * v))
        merged = np.hstack(
            [self.table_a.rows([p[0] for p in pairs]), self.table_b.rows([p[1] for p in pairs])]
        )
        bits = (merged > self.thresholds).astype(float)
        if self.products:
            bits = np.hstack([bits, bits[:, :v] * bits[:, v:]])
        return bits


# ---------------------------------------------------------------------------
# scorer objects: fit(query) -> FittedScorer
# ---------------------------------------------------------------------------

ScoreFn = Callable[[Sequence[Pair], np.ndarray], np.ndarray]


@dataclass
class FittedScorer:
    score: ScoreFn
    info: dict = field(default_factory=dict)


class RBSetsScorer:
    name = "rbsets"
    allows_empty_query = True

    def __init__(self, prior: GaussianBelief, max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL):
        self.prior = prior
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, query: QuerySet) -> FittedScorer:
        state = variational_fit(self.prior, query.features, max_iter=self.max_iter, tol=self.tol)
        post = state.belief
        return FittedScorer(
            lambda pairs, x: rbsets_score(self.prior, post, x),
            {"posterior_iterations": state.iterations, "bound": state.bound},
        )


class CosineScorer:
    name = "cos"
    allows_empty_query = False

    def __init__(self, aggregate="mean"):
        self.aggregate = aggregate

    def fit(self, query):
        q = query.features
        return FittedScorer(lambda pairs, x: cosine_score(q, x, self.aggregate))


class NNSScorer:
    name = "nns"
    allows_empty_query = False

    def fit(self, query):
        q = query.features
        return FittedScorer(lambda pairs, x: nns_score(q, x))


class MLSScorer:
    name = "mls"
    allows_empty_query = False

    def __init__(self, negatives, theta_global, negative_weights=None, l2=DEFAULT_L2):
        self.negatives = np.asarray(negatives, dtype=float)
        self.negative_weights = negative_weights
        self.theta_global = np.asarray(theta_global, dtype=float)
        self.l2 = l2

    def fit(self, query):
        theta_q = fit_query_mle(query.features, self.negatives, self.negative_weights, self.l2)
        return FittedScorer(lambda pairs, x: mls_from_thetas(theta_q, self.theta_global, x))


class SBSetsScorer:
    name = "sbsets"
    allows_empty_query = True

    def __init__(self, binarizer: PairBinarizer, model: BernoulliSetsModel):
        self.binarizer = binarizer
        self.model = model

    @classmethod
    def from_database(cls, db: RelationalDatabase, products=True, kappa=2.0) -> SBSetsScorer:
        pairs = list(db.links.edges)
        binarizer = PairBinarizer.fit(db.table_a, db.table_b, pairs, products)
        return cls(binarizer, BernoulliSetsModel.from_rows(binarizer(pairs), kappa))

    def fit(self, query):
        rows = self.binarizer(list(query.pairs))
        return FittedScorer(lambda pairs, x: sbsets_score(self.model, rows, self.binarizer(pairs)))


# ---------------------------------------------------------------------------
# query execution
# ---------------------------------------------------------------------------


def default_radius(links: LinkMatrix, n_objects: int) -> int:
    """2 for sparse networks, 1 when the mean degree exceeds 10."""
    mean_degree = 2.0 * len(links) / max(n_objects, 1)
    return 1 if mean_degree > 10 else 2


def candidate_pairs(links: LinkMatrix, query_pairs, radius: int) -> list[Pair]:
    query = {links.canonical(p) for p in query_pairs}
    # an empty query gives the filter no anchor, so every link is a candidate
    if radius == 0 or not query:
        cands = [p for p in links.edges if p not in query]
    else:
        cands = neighborhood_filter(links, query, radius)
    return sorted(cands)


# fixed block size: BLAS rounding can depend on block shape, so blocks must
# not vary with the thread count
SCORE_CHUNK = 1024


def _chunks(n, size=SCORE_CHUNK):
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def run_query(
    links: LinkMatrix,
    featurizer: PairFeaturizer,
    scorer,
    query: QuerySet,
    filter_radius: int = 0,
    query_id: str = "",
    threads: int = 1,
    candidates: Sequence[Pair] | None = None,
) -> RankedResult:
    """Filter candidates, score them against ``query`` and sort descending.

    Ties are broken by the lexicographic order of ``(id_a, id_b)``.
    """
    if filter_radius not in (0, 1, 2):
        raise ValueError(f"filter radius must be 0, 1 or 2, got {filter_radius}")
    if len(query) == 0 and not getattr(scorer, "allows_empty_query", False):
        raise ValueError(f"scorer {scorer.name!r} needs a nonempty query")
    if candidates is None:
        candidates = candidate_pairs(links, query.pairs, filter_radius)
    else:
        qset = set(query.pairs)
        candidates = sorted({links.canonical(p) for p in candidates} - qset)
    info = {"n_candidates": len(candidates), "filter_radius": filter_radius}
    if not candidates:
        return RankedResult((), scorer.name, query_id, "no candidate pairs to rank", info)
    t0 = time.perf_counter()
    fitted = scorer.fit(query)
    t1 = time.perf_counter()
    x = featurizer(candidates)
    parts = _chunks(len(candidates))

    def score(lh):
        return np.asarray(fitted.score(candidates[lh[0]:lh[1]], x[lh[0]:lh[1]]), dtype=float).reshape(-1)

    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = np.concatenate(list(pool.map(score, parts)))
    else:
        scores = np.concatenate([score(lh) for lh in parts])
    t2 = time.perf_counter()
    info.update(fitted.info)
    info["fit_seconds"] = t1 - t0
    info["score_seconds"] = t2 - t1
    warning = None
    if len(query) == 0:
        warning = "empty query: every score is relative to the prior alone"
    return RankedResult.from_scores(candidates, scores, scorer.name, query_id, warning, info)
