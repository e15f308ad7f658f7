"""End-to-end model fitting, bundle persistence and evaluation protocols."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .evaluation import (
    EvaluationReport,
    QueryRecord,
    RelevanceRule,
    label_relevance,
    precision_recall_curve,
    auc_interpolated,
    top_k_score,
)
from .glm import DEFAULT_L2, GaussianBelief, build_empirical_prior, fit_mle_weighted
from .ranking import (
    CosineScorer,
    MLSScorer,
    NNSScorer,
    QuerySet,
    RBSetsScorer,
    SBSetsScorer,
    SCORER_NAMES,
    candidate_pairs,
    default_radius,
    run_query,
)
from .relational import (
    ASYMMETRIC,
    DataError,
    ObjectTable,
    PairFeaturizer,
    RelationalDatabase,
    WeightedPairSample,
    impute_missing,
    sample_negative_pairs,
    truncated_svd,
)

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1
MLS_POOL_MAX = 10_000


@dataclass
class FitOptions:
    mode: str = ASYMMETRIC
    svd_k: int | None = None
    c: float | str = "auto"
    neg_ratio: int = 10
    neg_weight: float | None = None
    l2: float = DEFAULT_L2
    ridge: float | None = None
    seed: int = 0
    normalize: bool = True


def preprocess(db: RelationalDatabase, svd_k: int | None = None) -> RelationalDatabase:
    """Impute missing values, then optionally project onto ``svd_k`` singular directions.

    Two distinct object tables are reduced jointly so both share one basis.
    """
    table_a = impute_missing(db.table_a)
    table_b = table_a if db.same_space else impute_missing(db.table_b)
    if table_a.n_features != table_b.n_features:
        raise DataError(
            f"object spaces have {table_a.n_features} and {table_b.n_features} features; "
            "pair features need equal lengths"
        )
    if svd_k:
        stacked = table_a.features if db.same_space else np.vstack([table_a.features, table_b.features])
        scores, _, _ = truncated_svd(stacked, svd_k)
        cols = [f"svd{j}" for j in range(svd_k)]
        table_a = table_a.with_features(scores[: len(table_a)], cols)
        table_b = table_a if db.same_space else table_b.with_features(scores[len(table_a):], cols)
    return RelationalDatabase(table_a, table_b, db.links, db.categories)


@dataclass
class ModelBundle:
    db: RelationalDatabase
    options: FitOptions
    theta_hat: np.ndarray
    prior: GaussianBelief
    negatives: list[WeightedPairSample]
    n_pos: int
    extra: dict = field(default_factory=dict)

    @property
    def featurizer(self) -> PairFeaturizer:
        return PairFeaturizer(self.db.table_a, self.db.table_b, self.options.mode, self.options.normalize)

    def manifest(self) -> dict:
        return {
            "version": BUNDLE_VERSION,
            "options": asdict(self.options),
            "n_pos": self.n_pos,
            "n_negatives": len(self.negatives),
            "negative_weight": self.negatives[0].weight if self.negatives else None,
            "dimension": int(self.theta_hat.size),
            "theta_hat": self.theta_hat.tolist(),
            "directed": self.db.links.directed,
            "same_space": self.db.same_space,
            **self.extra,
        }


def auto_negative_weight(db: RelationalDatabase, n_negatives: int) -> float:
    """Each sampled negative stands for this many unlinked pairs of the full table."""
    unlinked = len(db.table_a) * len(db.table_b) - len(db.links)
    return max(unlinked, 1) / n_negatives


def fit_model(db: RelationalDatabase, options: FitOptions) -> ModelBundle:
    processed = preprocess(db, options.svd_k)
    featurizer = PairFeaturizer(processed.table_a, processed.table_b, options.mode, options.normalize)
    positives = list(processed.links.edges)
    n_pos = len(positives)
    if n_pos == 0:
        raise DataError("the link table is empty")
    n_neg = options.neg_ratio * n_pos
    weight = options.neg_weight or auto_negative_weight(processed, n_neg)
    negatives = sample_negative_pairs(processed, n_neg, weight, options.seed)
    x_pos = featurizer(positives)
    x_neg = featurizer([s.pair for s in negatives])
    x = np.vstack([x_pos, x_neg])
    y = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
    w = np.concatenate([np.ones(n_pos), np.full(n_neg, weight)])
    theta_hat = fit_mle_weighted(x, y, w, l2=options.l2)
    c = None if options.c in (None, "auto") else float(options.c)
    prior = build_empirical_prior(theta_hat, x_pos, c=c, ridge=options.ridge)
    return ModelBundle(processed, options, theta_hat, prior, negatives, n_pos)


# ---------------------------------------------------------------------------
# bundle persistence
# ---------------------------------------------------------------------------


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def input_digests(paths: dict) -> dict:
    return {k: _sha256(v) for k, v in sorted(paths.items()) if v}


def save_bundle(bundle: ModelBundle, out_dir) -> Path:
    out = io.ensure_dir(out_dir)
    io.write_json(out / "prior.json", bundle.prior.to_dict())
    io.write_json(out / "manifest.json", bundle.manifest())
    io.write_object_table(out / "objects_a.tsv", bundle.db.table_a)
    io.write_pairs(out / "links.tsv", bundle.db.links.edges)
    if bundle.db.categories is not None:
        io.write_categories(out / "categories.tsv", bundle.db.categories)
    if not bundle.db.same_space:
        io.write_object_table(out / "objects_b.tsv", bundle.db.table_b)
    with open(out / "negatives.tsv", "w") as fh:
        fh.write("id_a\tid_b\tweight\n")
        for s in bundle.negatives:
            fh.write(f"{s.pair[0]}\t{s.pair[1]}\t{s.weight!r}\n")
    return out


def load_bundle(model_dir, links_path=None, categories_path=None) -> ModelBundle:
    """Rebuild a fitted model from its bundle.

    The bundle keeps copies of the link and category tables; other files may
    be passed instead.
    """
    d = Path(model_dir)
    if not (d / "manifest.json").exists():
        raise FileNotFoundError(f"no model bundle at {d}")
    links_path = links_path or d / "links.tsv"
    if categories_path is None and (d / "categories.tsv").exists():
        categories_path = d / "categories.tsv"
    manifest = io.read_json(d / "manifest.json")
    options = FitOptions(**manifest["options"])
    table_a = io.read_object_table(d / "objects_a.tsv", "A")
    table_b = io.read_object_table(d / "objects_b.tsv", "B") if not manifest["same_space"] else table_a
    links = io.read_links(links_path, table_a, table_b, manifest["directed"])
    cats = None
    if categories_path:
        cats = io.read_categories(categories_path, set(table_a.object_ids) | set(table_b.object_ids))
    db = RelationalDatabase(table_a, table_b, links, cats)
    prior = GaussianBelief.from_dict(io.read_json(d / "prior.json"))
    negatives = []
    for _, row in io._rows(d / "negatives.tsv"):
        if row[0] == "id_a":
            continue
        negatives.append(WeightedPairSample((row[0], row[1]), 0, float(row[2])))
    return ModelBundle(
        db, options, np.asarray(manifest["theta_hat"]), prior, negatives, manifest["n_pos"]
    )


# ---------------------------------------------------------------------------
# scorers
# ---------------------------------------------------------------------------


def make_scorer(name: str, bundle: ModelBundle, cosine_aggregate="mean", sbsets_products=True):
    if name == "rbsets":
        return RBSetsScorer(bundle.prior)
    if name == "cos":
        return CosineScorer(cosine_aggregate)
    if name == "nns":
        return NNSScorer()
    if name == "mls":
        pool = bundle.negatives[:MLS_POOL_MAX]
        x_neg = bundle.featurizer([s.pair for s in pool])
        return MLSScorer(x_neg, bundle.theta_hat, l2=bundle.options.l2)
    if name == "sbsets":
        return SBSetsScorer.from_database(bundle.db, products=sbsets_products)
    raise ValueError(f"unknown scorer {name!r}; valid scorers: {', '.join(SCORER_NAMES)}")


# ---------------------------------------------------------------------------
# evaluation protocol
# ---------------------------------------------------------------------------


@dataclass
class Protocol:
    min_support: int = 50
    replications: int = 5
    query_size: int = 15
    scorers: tuple[str, ...] = ("rbsets", "cos", "nns", "mls")
    filter_radius: int | None = None
    symmetric: bool | None = None
    category_pairs: list | None = None
    partial_credit: dict | None = None
    top_k: int = 10
    seed: int = 0
    emit_curves: bool = False

    @classmethod
    def from_dict(cls, payload: dict) -> Protocol:
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown protocol keys: {', '.join(sorted(unknown))}")
        payload = dict(payload)
        if "scorers" in payload:
            payload["scorers"] = tuple(payload["scorers"])
        return cls(**payload)


def category_support(db: RelationalDatabase, symmetric: bool) -> dict[tuple[str, str], int]:
    """Number of linked pairs matching each (label_a, label_b) pattern."""
    cats = db.categories
    counts: dict[tuple[str, str], int] = {}
    for a, b in db.links.edges:
        seen = set()
        for la in cats.labels(a):
            for lb in cats.labels(b):
                key = tuple(sorted((la, lb))) if symmetric else (la, lb)
                seen.add(key)
        for key in seen:
            counts[key] = counts.get(key, 0) + 1
    return counts


def select_category_pairs(db, protocol: Protocol, symmetric: bool) -> list[tuple[str, str]]:
    support = category_support(db, symmetric)
    if protocol.category_pairs:
        wanted = [tuple(p) for p in protocol.category_pairs]
        if symmetric:
            wanted = [tuple(sorted(p)) for p in wanted]
    else:
        wanted = sorted(support)
    return [p for p in wanted if support.get(p, 0) >= protocol.min_support]


def evaluate_protocol(bundle: ModelBundle, protocol: Protocol, threads: int = 1, curves_out=None):
    db = bundle.db
    if db.categories is None:
        raise DataError("evaluation needs category annotations")
    symmetric = (not db.links.directed) if protocol.symmetric is None else protocol.symmetric
    groups = select_category_pairs(db, protocol, symmetric)
    if not groups:
        raise EmptyProtocolError(
            f"no category pair has at least {protocol.min_support} linked pairs"
        )
    radius = protocol.filter_radius
    if radius is None:
        radius = default_radius(db.links, len(set(db.table_a.object_ids) | set(db.table_b.object_ids)))
    featurizer = bundle.featurizer
    scorers = [make_scorer(name, bundle) for name in protocol.scorers]
    rng = np.random.default_rng(protocol.seed)
    report = EvaluationReport(top_k=protocol.top_k)
    all_links = list(db.links.edges)
    timings: dict[str, float] = {s.name: 0.0 for s in scorers}
    for m1, m2 in groups:
        partial = {}
        for key, w in (protocol.partial_credit or {}).items():
            pa, pb = key.split("|")
            partial[(pa, pb)] = w
        rule = RelevanceRule(m1, m2, symmetric, partial)
        link_weights = label_relevance(all_links, db.categories, rule)
        matching = [p for p, w in zip(all_links, link_weights) if w == 1.0]
        link_weight = dict(zip(all_links, link_weights))
        group = f"{m1}|{m2}"
        if len(matching) < protocol.query_size:
            raise DataError(f"group {group}: {len(matching)} matching links < query size {protocol.query_size}")
        for rep in range(protocol.replications):
            idx = np.sort(rng.choice(len(matching), size=protocol.query_size, replace=False))
            qpairs = [matching[i] for i in idx]
            query = QuerySet.from_pairs(qpairs, db.links, featurizer)
            cands = candidate_pairs(db.links, qpairs, radius)
            qset = set(qpairs)
            universe_mass = sum(w for p, w in link_weight.items() if p not in qset)
            for scorer in scorers:
                t0 = time.perf_counter()
                ranking = run_query(
                    db.links, featurizer, scorer, query, radius, f"{group}#{rep}", threads, cands
                )
                timings[scorer.name] += time.perf_counter() - t0
                weights = [link_weight[p] for p in ranking.pairs]
                mass = float(sum(weights))
                auc = auc_interpolated(precision_recall_curve(weights)) if mass > 0 else 0.0
                report.records.append(
                    QueryRecord(
                        group=group,
                        replication=rep,
                        scorer=scorer.name,
                        auc=auc,
                        top10=top_k_score(weights, protocol.top_k),
                        n_relevant=mass,
                        n_candidates=len(ranking),
                        coverage=mass / universe_mass if universe_mass > 0 else 0.0,
                        query_pairs=[list(p) for p in qpairs],
                    )
                )
                if curves_out is not None and mass > 0:
                    _write_curve(curves_out, group, rep, scorer.name, precision_recall_curve(weights))
    return report, {"radius": radius, "symmetric": symmetric, "scorer_seconds": timings}


def _write_curve(out_dir, group, rep, scorer, curve) -> None:
    out = io.ensure_dir(out_dir)
    name = f"{group.replace('|', '__')}_{rep}_{scorer}.tsv"
    with open(out / name, "w") as fh:
        fh.write("rank\trecall\tprecision\n")
        for i, (r, p) in enumerate(curve, start=1):
            fh.write(f"{i}\t{r!r}\t{p!r}\n")


class EmptyProtocolError(DataError):
    pass
