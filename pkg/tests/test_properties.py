"""Property-based checks of the stated invariants."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rbsets.evaluation import auc_interpolated, compare_methods, precision_recall_curve, top_k_score
from rbsets.glm import GaussianBelief, predictive_probability
from rbsets.ranking import nns_score, rbsets_score
from rbsets.relational import ASYMMETRIC, SYMMETRIC, normalize_rows, pair_features

finite = st.floats(-50, 50, allow_nan=False)
weights = st.lists(st.sampled_from([0.0, 0.5, 1.0]), min_size=1, max_size=30)


@given(arrays(float, (2, 5), elements=finite), st.sampled_from([ASYMMETRIC, SYMMETRIC]))
def test_pair_features_shape_and_z_symmetry(ab, mode):
    a, b = ab
    phi = pair_features(a, b, mode)
    assert phi[0] == 1.0 and np.all(np.isfinite(phi))
    assert phi.size == (16 if mode == ASYMMETRIC else 11)
    np.testing.assert_allclose(phi[-5:], pair_features(b, a, mode)[-5:], atol=1e-12)


@given(arrays(float, (6, 4), elements=finite))
def test_normalize_rows_unit_or_zero(m):
    out = normalize_rows(m)
    norms = np.linalg.norm(out, axis=1)
    zero = np.all(m == 0, axis=1)
    np.testing.assert_allclose(norms[~zero], 1.0, atol=1e-12)
    assert np.all(out[zero] == 0)


@given(arrays(float, (4, 3), elements=finite), arrays(float, 3, elements=finite))
def test_nns_nonpositive(q, x):
    assert nns_score(q, x) <= 0
    assert nns_score(q, q[2]) == 0


@given(arrays(float, 3, elements=st.floats(-5, 5)), arrays(float, (10, 3), elements=finite))
def test_empty_query_identity(mean, x):
    prior = GaussianBelief(mean, np.diag([1.0, 2.0, 0.5]))
    assert np.all(rbsets_score(prior, prior, x) == 0.0)


@given(st.floats(0.01, 10), st.lists(st.floats(-10, 10), min_size=2, max_size=10, unique=True))
def test_predictive_monotone_in_mean(s2, means):
    x = np.array([1.0])
    vals = [predictive_probability(GaussianBelief(np.array([m]), np.array([[s2]])), x) for m in sorted(means)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


@given(weights)
def test_metrics_bounded(w):
    assert 0 <= top_k_score(w, 10) <= 1
    if sum(w) > 0:
        curve = precision_recall_curve(w)
        assert 0 <= auc_interpolated(curve) <= 1
        assert curve[0][1] in (0.0, w[0])


@given(weights, st.integers(0, 29))
def test_promotion_monotone(w, i):
    if sum(w) == 0 or i == 0 or i >= len(w) or w[i] <= w[i - 1]:
        return
    up = list(w)
    up[i - 1], up[i] = up[i], up[i - 1]
    assert auc_interpolated(precision_recall_curve(up)) >= auc_interpolated(precision_recall_curve(w)) - 1e-12
    assert top_k_score(up, 10) >= top_k_score(w, 10)


@given(weights, st.integers(1, 10))
def test_trailing_zeros_leave_auc(w, n):
    if sum(w) == 0:
        return
    assert auc_interpolated(precision_recall_curve(w + [0.0] * n)) == auc_interpolated(precision_recall_curve(w))


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 4), st.randoms(use_true_random=False))
def test_win_counts_bounded(n_groups, reps, n_methods, rnd):
    methods = [f"m{i}" for i in range(n_methods)]
    res = {f"g{g}": [{m: rnd.choice([0.1, 0.2]) for m in methods} for _ in range(reps)] for g in range(n_groups)}
    out = compare_methods(res)
    for wins, smooth in out.values():
        assert wins <= n_groups and smooth <= n_groups
    if n_methods == 1:
        assert out["m0"] == (n_groups, n_groups)
