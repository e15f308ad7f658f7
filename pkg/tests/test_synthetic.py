import numpy as np
import pytest
from scipy.special import expit

from rbsets import io
from rbsets.pipeline import FitOptions, Protocol, evaluate_protocol, fit_model
from rbsets.relational import DataError, normalize_rows, pair_features
from rbsets.synthetic import generate_synthetic_db


def _phi(s, pair):
    t = s.db.table_a
    return normalize_rows(pair_features(t.row(pair[0])[None], t.row(pair[1])[None], s.mode), 0)[0]


class TestGenerator:
    def test_noiseless_links_satisfy_predicate(self):
        s = generate_synthetic_db(120, 6, 2, 40, 0.0, seed=0)
        assert len(s.db.links) == 80
        for pair in s.db.links.edges:
            c = s.link_class[pair]
            assert s.thetas[c] @ _phi(s, pair) > 0
            assert expit(s.thetas[c] @ _phi(s, pair)) > s.threshold

    def test_noise_links_violate_predicate(self):
        s = generate_synthetic_db(120, 6, 2, 40, 0.1, seed=1)
        bad = [p for p in s.db.links.edges if s.thetas[s.link_class[p]] @ _phi(s, p) <= 0]
        assert len(bad) == 2 * round(0.1 * 40)

    def test_exhaustive_threshold_share(self):
        # the intercept splits each class's candidate pairs at the requested share
        s = generate_synthetic_db(80, 4, 1, 10, 0.0, seed=2, link_fraction=0.25)
        ids = s.db.table_a.object_ids
        cand = [(ids[i], ids[j]) for i in range(0, 80, 2) for j in range(1, 80, 2)]
        above = sum(s.thetas[0] @ _phi(s, p) > 0 for p in cand)
        assert above == round(0.25 * len(cand))

    def test_same_seed_identical_files(self, tmp_path):
        for run in ("a", "b"):
            s = generate_synthetic_db(60, 4, 2, 15, 0.05, seed=9)
            d = io.ensure_dir(tmp_path / run)
            io.write_object_table(d / "f.tsv", s.db.table_a)
            io.write_pairs(d / "l.tsv", s.db.links.edges)
            io.write_categories(d / "c.tsv", s.db.categories)
        for name in ("f.tsv", "l.tsv", "c.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_link_classes_follow_categories(self):
        s = generate_synthetic_db(90, 5, 3, 20, 0.0, seed=3)
        for (a, b), c in s.link_class.items():
            assert s.db.categories.labels(a) == {f"cat{2 * c}"}
            assert s.db.categories.labels(b) == {f"cat{2 * c + 1}"}

    def test_infeasible(self):
        with pytest.raises(DataError):
            generate_synthetic_db(20, 3, 1, 500, 0.0, seed=0)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            generate_synthetic_db(20, 3, 1, 5, 1.0, seed=0)
        with pytest.raises(ValueError):
            generate_synthetic_db(0, 3, 1, 5, 0.0, seed=0)

    def test_single_class_is_trivially_relevant(self):
        s = generate_synthetic_db(80, 4, 1, 60, 0.0, seed=4)
        bundle = fit_model(s.db, FitOptions(seed=0))
        report, _ = evaluate_protocol(
            bundle,
            Protocol(min_support=10, replications=2, scorers=("rbsets", "cos", "nns", "mls", "sbsets"), filter_radius=0),
        )
        assert all(r.auc == 1.0 for r in report.records)
