"""Relational database containers, feature preprocessing and candidate filtering."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

Pair = tuple[str, str]

ASYMMETRIC = "asymmetric"
SYMMETRIC = "symmetric"
FEATURE_MODES = (ASYMMETRIC, SYMMETRIC)


class DataError(ValueError):
    """Inconsistent or malformed relational data."""


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ObjectTable:
    """Objects of one space, one feature row per object.

    Missing entries are tracked by ``missing`` (True where absent); the
    corresponding cells of ``features`` hold 0 and carry no meaning.
    """

    object_ids: tuple[str, ...]
    features: np.ndarray
    missing: np.ndarray | None = None
    columns: tuple[str, ...] | None = None
    space_tag: str = "A"
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        ids = tuple(str(i) for i in self.object_ids)
        feats = np.atleast_2d(np.asarray(self.features, dtype=float))
        if feats.shape[0] != len(ids):
            raise DataError(f"{len(ids)} object ids but {feats.shape[0]} feature rows")
        index = {}
        for row, oid in enumerate(ids):
            if oid in index:
                raise DataError(f"duplicate object id {oid!r}")
            index[oid] = row
        missing = None
        if self.missing is not None:
            missing = np.asarray(self.missing, dtype=bool)
            if missing.shape != feats.shape:
                raise DataError("missing-value mask does not match feature matrix shape")
            feats = np.where(missing, 0.0, feats)
            if missing.any():
                missing = missing.copy()
                missing.setflags(write=False)
            else:
                missing = None
        columns = self.columns
        if columns is None:
            columns = tuple(f"f{j}" for j in range(feats.shape[1]))
        elif len(columns) != feats.shape[1]:
            raise DataError(f"{len(columns)} column names for {feats.shape[1]} feature columns")
        object.__setattr__(self, "object_ids", ids)
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "missing", missing)
        object.__setattr__(self, "columns", tuple(columns))
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.object_ids)

    def __contains__(self, object_id: str) -> bool:
        return object_id in self._index

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def has_missing(self) -> bool:
        return self.missing is not None

    def row(self, object_id: str) -> np.ndarray:
        return self.features[self._index[object_id]]

    def rows(self, object_ids: Sequence[str]) -> np.ndarray:
        return self.features[[self._index[i] for i in object_ids]]

    def with_features(self, features: np.ndarray, columns: Sequence[str] | None = None) -> ObjectTable:
        return ObjectTable(self.object_ids, features, None, tuple(columns) if columns else None, self.space_tag)


@dataclass(frozen=True, eq=False)
class LinkMatrix:
    """Sparse binary link table stored as a sorted, duplicate-free edge tuple.

    Undirected edges within one object space are stored with the
    lexicographically smaller id first.
    ``same_space`` tells graph routines whether both endpoints live in one
    object table (ids shared) or in two disjoint spaces.
    """

    edges: tuple[Pair, ...]
    directed: bool = True
    same_space: bool = True
    _edge_set: frozenset = field(init=False, repr=False)

    def __post_init__(self):
        canon = {self._canonical(a, b) for a, b in ((str(a), str(b)) for a, b in self.edges)}
        edges = tuple(sorted(canon))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_edge_set", frozenset(edges))

    def _canonical(self, a: str, b: str) -> Pair:
        if not self.directed and self.same_space and b < a:
            return (b, a)
        return (a, b)

    def canonical(self, pair: Pair) -> Pair:
        return self._canonical(str(pair[0]), str(pair[1]))

    def __contains__(self, pair) -> bool:
        return self.canonical(pair) in self._edge_set

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)


@dataclass(frozen=True, eq=False)
class CategoryAnnotation:
    """Evaluation-only category labels; an object may carry several."""

    assignments: dict[str, frozenset[str]]

    def __post_init__(self):
        object.__setattr__(
            self, "assignments", {str(k): frozenset(v) for k, v in self.assignments.items()}
        )

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str]]) -> CategoryAnnotation:
        out: dict[str, set[str]] = {}
        for oid, label in rows:
            out.setdefault(oid, set()).add(label)
        return cls(out)

    def labels(self, object_id: str) -> frozenset[str]:
        return self.assignments.get(object_id, frozenset())

    def __contains__(self, object_id: str) -> bool:
        return object_id in self.assignments

    @property
    def all_labels(self) -> list[str]:
        return sorted(set().union(*self.assignments.values())) if self.assignments else []


@dataclass(frozen=True, eq=False)
class RelationalDatabase:
    table_a: ObjectTable
    table_b: ObjectTable
    links: LinkMatrix
    categories: CategoryAnnotation | None = None

    def __post_init__(self):
        for a, b in self.links.edges:
            if a not in self.table_a:
                raise DataError(f"link endpoint {a!r} not found among A objects")
            if b not in self.table_b:
                raise DataError(f"link endpoint {b!r} not found among B objects")
        if self.categories is not None:
            for oid in self.categories.assignments:
                if oid not in self.table_a and oid not in self.table_b:
                    raise DataError(f"annotated object {oid!r} not found in any object table")

    @property
    def same_space(self) -> bool:
        return self.table_a is self.table_b

    def with_tables(self, table_a: ObjectTable, table_b: ObjectTable | None = None) -> RelationalDatabase:
        if table_b is None:
            table_b = table_a if self.same_space else self.table_b
        return RelationalDatabase(table_a, table_b, self.links, self.categories)


class WeightedPairSample(NamedTuple):
    pair: Pair
    label: int
    weight: float


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def impute_missing(table: ObjectTable) -> ObjectTable:
    """Replace each missing cell by the mean of the observed cells in its column."""
    if not table.has_missing:
        return table
    observed = ~table.missing
    counts = observed.sum(axis=0)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DataError(f"column {table.columns[empty[0]]!r} has no observed values")
    means = (table.features * observed).sum(axis=0) / counts
    filled = np.where(table.missing, means, table.features)
    return ObjectTable(table.object_ids, filled, None, table.columns, table.space_tag)


def truncated_svd(matrix: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank-``k`` SVD ``(scores, singular_values, components)`` with fixed signs.

    ``scores = matrix @ components.T``.  Each component's largest-magnitude
    entry is made positive.
    """
    matrix = np.asarray(matrix, dtype=float)
    if not 1 <= k <= min(matrix.shape):
        raise DataError(f"k={k} outside [1, {min(matrix.shape)}] for a {matrix.shape} matrix")
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    u, s, vt = u[:, :k], s[:k], vt[:k]
    pivot = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(k), pivot])
    signs[signs == 0] = 1.0
    vt = vt * signs[:, None]
    u = u * signs[None, :]
    return u * s, s, vt


def reduce_dimensions(table: ObjectTable, k: int) -> ObjectTable:
    if table.has_missing:
        raise DataError("impute missing values before reducing dimensions")
    scores, _, _ = truncated_svd(table.features, k)
    return table.with_features(scores, [f"svd{j}" for j in range(k)])


def normalize_rows(matrix: np.ndarray, intercept_column: int | None = None) -> np.ndarray:
    """Divide each row by its Euclidean norm; zero rows stay zero.

    When ``intercept_column`` is given, that column is left out of the norm
    and set to exactly 1 afterwards.
    """
    matrix = np.array(matrix, dtype=float, copy=True)
    squeeze = matrix.ndim == 1
    matrix = np.atleast_2d(matrix)
    keep = np.ones(matrix.shape[1], dtype=bool)
    if intercept_column is not None:
        keep[intercept_column] = False
    block = matrix[:, keep]
    # rescale first so tiny or huge rows do not under- or overflow the norm
    scale = np.abs(block).max(axis=1, initial=0.0)
    scale = np.where(scale > 0, scale, 1.0)
    block = block / scale[:, None]
    norms = np.linalg.norm(block, axis=1)
    matrix[:, keep] = block / np.where(norms > 0, norms, 1.0)[:, None]
    if intercept_column is not None:
        matrix[:, intercept_column] = 1.0
    return matrix[0] if squeeze else matrix


def _unit(v: np.ndarray) -> np.ndarray:
    scale = np.abs(v).max(axis=-1, keepdims=True, initial=0.0)
    v = v / np.where(scale > 0, scale, 1.0)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def _cosine_block(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # a zero vector gives a zero unit vector, hence a zero block
    return _unit(a) * _unit(b)


def pair_features(a: np.ndarray, b: np.ndarray, mode: str = ASYMMETRIC) -> np.ndarray:
    """Feature image of one pair (or of row-aligned batches of pairs).

    asymmetric: ``[1, a, b, Z]`` with ``K = 3V + 1``
    symmetric:  ``[1, |a - b|, Z]`` with ``K = 2V + 1``

    where ``Z_v = a_v b_v / (|a| |b|)`` (all zeros if either norm vanishes).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"object feature lengths differ: {a.shape[-1]} vs {b.shape[-1]}")
    z = _cosine_block(a, b)
    ones = np.ones(a.shape[:-1] + (1,))
    if mode == ASYMMETRIC:
        return np.concatenate([ones, a, b, z], axis=-1)
    if mode == SYMMETRIC:
        return np.concatenate([ones, np.abs(a - b), z], axis=-1)
    raise ValueError(f"unknown feature mode {mode!r}; expected one of {FEATURE_MODES}")


def feature_dimension(n_object_features: int, mode: str) -> int:
    return (3 if mode == ASYMMETRIC else 2) * n_object_features + 1


@dataclass(frozen=True)
class PairFeaturizer:
    """Maps pairs of ids to normalized pair feature rows for one database."""

    table_a: ObjectTable
    table_b: ObjectTable
    mode: str = ASYMMETRIC
    normalize: bool = True

    @property
    def dimension(self) -> int:
        return feature_dimension(self.table_a.n_features, self.mode)

    def __call__(self, pairs: Sequence[Pair]) -> np.ndarray:
        if len(pairs) == 0:
            return np.zeros((0, self.dimension))
        a = self.table_a.rows([p[0] for p in pairs])
        b = self.table_b.rows([p[1] for p in pairs])
        x = pair_features(a, b, self.mode)
        return normalize_rows(x, intercept_column=0) if self.normalize else x


# ---------------------------------------------------------------------------
# sampling and filtering
# ---------------------------------------------------------------------------


def sample_negative_pairs(
    db: RelationalDatabase, n_negatives: int, weight: float, seed: int
) -> list[WeightedPairSample]:
    """Draw unlinked pairs by picking one object uniformly from each table.

    Linked pairs are rejected; more than ``1000 * n_negatives`` draws raises.
    """
    if n_negatives < 1:
        raise ValueError("n_negatives must be at least 1")
    if not weight > 0:
        raise ValueError("negative weight must be positive")
    rng = np.random.default_rng(seed)
    ids_a, ids_b = db.table_a.object_ids, db.table_b.object_ids
    links = db.links
    out: list[WeightedPairSample] = []
    budget = 1000 * n_negatives
    draws = 0
    while len(out) < n_negatives:
        if draws >= budget:
            raise DataError(
                f"drew {draws} pairs but found only {len(out)} of {n_negatives} unlinked pairs; "
                "the link matrix is too dense for negative sampling"
            )
        draws += 1
        pair = (ids_a[rng.integers(len(ids_a))], ids_b[rng.integers(len(ids_b))])
        if pair not in links:
            out.append(WeightedPairSample(pair, 0, float(weight)))
    return out


def _node(space: str, oid: str, same_space: bool):
    return oid if same_space else (space, oid)


def graph_distances(links: LinkMatrix, sources: Iterable, radius: int) -> dict:
    """Undirected BFS distances (capped at ``radius``) from a set of source nodes."""
    adjacency: dict = {}
    for a, b in links.edges:
        na, nb = _node("A", a, links.same_space), _node("B", b, links.same_space)
        adjacency.setdefault(na, []).append(nb)
        adjacency.setdefault(nb, []).append(na)
    dist = {s: 0 for s in sources}
    frontier = deque(dist)
    while frontier:
        node = frontier.popleft()
        if dist[node] == radius:
            continue
        for nxt in adjacency.get(node, ()):
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                frontier.append(nxt)
    return dist


def neighborhood_filter(links: LinkMatrix, query_pairs: Iterable[Pair], radius: int) -> set[Pair]:
    """Linked pairs with both endpoints within ``radius`` undirected steps of a query object."""
    if radius not in (1, 2):
        raise ValueError(f"radius must be 1 or 2, got {radius}")
    query = {links.canonical(p) for p in query_pairs}
    sources = set()
    for a, b in query:
        sources.add(_node("A", a, links.same_space))
        sources.add(_node("B", b, links.same_space))
    dist = graph_distances(links, sources, radius)
    same = links.same_space
    return {
        (a, b)
        for a, b in links.edges
        if (a, b) not in query and _node("A", a, same) in dist and _node("B", b, same) in dist
    }
