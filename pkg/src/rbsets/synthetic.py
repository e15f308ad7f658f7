"""Planted-relation synthetic databases for benchmarking the scorers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from .relational import (
    ASYMMETRIC,
    CategoryAnnotation,
    DataError,
    LinkMatrix,
    ObjectTable,
    Pair,
    RelationalDatabase,
    normalize_rows,
    pair_features,
)


@dataclass(frozen=True, eq=False)
class SyntheticDatabase:
    db: RelationalDatabase
    thetas: np.ndarray
    link_class: dict[Pair, int]
    mode: str
    threshold: float

    def class_pairs(self, c: int) -> tuple[str, str]:
        return (f"cat{2 * c}", f"cat{2 * c + 1}")


def generate_synthetic_db(
    n_objects: int,
    V: int,
    n_classes: int,
    links_per_class: int,
    noise: float,
    seed: int,
    *,
    threshold: float = 0.5,
    class_separation: float = 0.05,
    spectrum: float = 50.0,
    signal_power: float = 2.0,
    link_fraction: float = 0.3,
    mode: str = ASYMMETRIC,
) -> SyntheticDatabase:
    """Objects in ``2 * n_classes`` categories; relation class ``c`` links category
    ``2c`` to ``2c + 1``.

    Category means differ by ``class_separation`` per coordinate, far below
    the within-category spread, so object features barely reveal categories.
    Feature standard deviations are spread geometrically over
    ``[1 / spectrum, 1]``.

    Each class draws its own weight vector ``theta_c`` over normalized pair
    features.  Coordinate ``j`` of the informative block is drawn with scale
    ``sd_j ** -signal_power``, where ``sd_j`` is the spread of that coordinate
    over all pairs, so the relations are decided by subtle, low-variance
    directions while high-variance directions carry no signal.  The intercept
    puts a ``link_fraction`` share of the class's candidate pairs above
    ``threshold`` and ``links_per_class`` of those are linked at random.  A
    ``noise`` fraction of the links is then swapped for random candidate pairs
    that violate the predicate.
    """
    if min(n_objects, V, n_classes, links_per_class) < 1:
        raise ValueError("sizes must be positive")
    if not 0 <= noise < 1:
        raise ValueError("noise must lie in [0, 1)")
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if not 0 < link_fraction <= 1:
        raise ValueError("link_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    n_cat = 2 * n_classes
    if n_objects < n_cat:
        raise DataError(f"{n_objects} objects cannot fill {n_cat} categories")
    ids = tuple(f"o{i:0{len(str(n_objects - 1))}d}" for i in range(n_objects))
    cat = np.arange(n_objects) % n_cat
    scales = spectrum ** (-np.linspace(0.0, 1.0, V))
    scales = scales[rng.permutation(V)]
    means = rng.normal(0.0, class_separation, size=(n_cat, V))
    feats = means[cat] + rng.normal(size=(n_objects, V)) * scales
    table = ObjectTable(ids, feats)

    # spread of every informative pair-feature coordinate over all pairs
    ia_all, ib_all = np.meshgrid(np.arange(n_objects), np.arange(n_objects), indexing="ij")
    phi_all = normalize_rows(pair_features(feats[ia_all.ravel()], feats[ib_all.ravel()], mode), intercept_column=0)
    sd = phi_all[:, 1:].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    del phi_all

    k = sd.size + 1
    cutoff = float(logit(threshold))
    thetas = np.zeros((n_classes, k))
    edges: list[Pair] = []
    link_class: dict[Pair, int] = {}
    for c in range(n_classes):
        rows_a = np.flatnonzero(cat == 2 * c)
        rows_b = np.flatnonzero(cat == 2 * c + 1)
        ia, ib = np.meshgrid(rows_a, rows_b, indexing="ij")
        ia, ib = ia.ravel(), ib.ravel()
        n_exceed = max(links_per_class, int(round(link_fraction * ia.size)))
        if n_exceed > ia.size:
            raise DataError(
                f"class {c}: {links_per_class} links need {n_exceed} candidate pairs, "
                f"only {ia.size} exist"
            )
        phi = normalize_rows(pair_features(feats[ia], feats[ib], mode), intercept_column=0)
        direction = rng.normal(size=k - 1) * sd ** -signal_power
        direction /= np.linalg.norm(direction)
        raw = phi[:, 1:] @ direction
        order = np.argsort(-raw, kind="stable")
        if n_exceed < raw.size:
            mid = 0.5 * (raw[order[n_exceed - 1]] + raw[order[n_exceed]])
        else:
            mid = raw[order[-1]] - 1.0
        thetas[c, 0] = cutoff - mid
        thetas[c, 1:] = direction
        exceed, below = order[:n_exceed], order[n_exceed:]
        chosen = rng.choice(exceed, size=links_per_class, replace=False)
        n_flip = int(round(noise * links_per_class))
        if n_flip:
            if n_flip > below.size:
                raise DataError(f"class {c}: cannot place {n_flip} noise links")
            drop = rng.choice(links_per_class, size=n_flip, replace=False)
            chosen = np.delete(chosen, drop)
            chosen = np.concatenate([chosen, rng.choice(below, size=n_flip, replace=False)])
        for j in np.sort(chosen):
            pair = (ids[ia[j]], ids[ib[j]])
            edges.append(pair)
            link_class[pair] = c

    links = LinkMatrix(tuple(edges), directed=True, same_space=True)
    cats = CategoryAnnotation({oid: {f"cat{cat[i]}"} for i, oid in enumerate(ids)})
    db = RelationalDatabase(table, table, links, cats)
    return SyntheticDatabase(db, thetas, link_class, mode, threshold)
