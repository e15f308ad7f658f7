"""Synthetic benchmark runs and timing probes for the scoring pipeline."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .glm import GaussianBelief, build_empirical_prior, variational_fit
from .ranking import rbsets_score


@dataclass(frozen=True)
class BenchConfig:
    n_objects: int = 300
    V: int = 10
    n_classes: int = 2
    links_per_class: int = 150
    noise: float = 0.05
    queries: int = 20
    query_size: int = 15
    scorers: tuple[str, ...] = ("rbsets", "cos", "nns", "mls")

    @classmethod
    def quick(cls) -> BenchConfig:
        return cls(n_objects=120, links_per_class=40, queries=6, query_size=10)

    @property
    def replications(self) -> int:
        return max(1, self.queries // self.n_classes)


def _random_belief(k: int, rng) -> GaussianBelief:
    a = rng.normal(size=(k, k)) / np.sqrt(k)
    return GaussianBelief.from_precision(rng.normal(size=k), a @ a.T + np.eye(k))


def scoring_seconds_per_candidate(k: int, n_candidates: int = 20_000, repeats: int = 5, seed: int = 0) -> float:
    """Best-of-``repeats`` wall time of one rbsets score, per candidate, at dimension ``k``."""
    rng = np.random.default_rng(seed)
    prior, post = _random_belief(k, rng), _random_belief(k, rng)
    x = rng.normal(size=(n_candidates, k))
    rbsets_score(prior, post, x)  # warm up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        rbsets_score(prior, post, x)
        best = min(best, time.perf_counter() - t0)
    return best / n_candidates


def posterior_fit_seconds(k: int, n_query: int = 15, repeats: int = 3, seed: int = 0) -> float:
    """Best-of-``repeats`` wall time of one variational posterior fit at dimension ``k``."""
    rng = np.random.default_rng(seed)
    pos = rng.normal(size=(10 * k, k))
    prior = build_empirical_prior(rng.normal(size=k) * 0.1, pos)
    query = pos[:n_query]
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        variational_fit(prior, query)
        best = min(best, time.perf_counter() - t0)
    return best


def scaling_exponent(ks, seconds) -> float:
    """Least-squares slope of log time against log dimension."""
    return float(np.polyfit(np.log(ks), np.log(seconds), 1)[0])


def complexity_probe(k: int, seed: int = 0) -> dict:
    t1 = scoring_seconds_per_candidate(k, seed=seed)
    t2 = scoring_seconds_per_candidate(2 * k, seed=seed)
    return {"k": k, "per_candidate_seconds_k": t1, "per_candidate_seconds_2k": t2, "ratio": t2 / t1}

