import numpy as np
import pytest
from scipy.stats import spearmanr

from rbsets import io
from rbsets.pipeline import (
    EmptyProtocolError,
    FitOptions,
    Protocol,
    auto_negative_weight,
    evaluate_protocol,
    fit_model,
    load_bundle,
    make_scorer,
    save_bundle,
)
from rbsets.relational import DataError
from rbsets.synthetic import generate_synthetic_db


@pytest.fixture(scope="module")
def synth():
    return generate_synthetic_db(120, 5, 2, 50, 0.05, seed=0)


class TestReaders:
    def test_na_becomes_mask(self, tmp_path):
        p = tmp_path / "f.tsv"
        p.write_text("id\tx\ty\na\t1\tNA\nb\t2\t3\n")
        t = io.read_object_table(p)
        assert t.missing.tolist() == [[False, True], [False, False]]

    def test_bad_number_reports_line(self, tmp_path):
        p = tmp_path / "f.tsv"
        p.write_text("id\tx\na\t1\nb\tfoo\n")
        with pytest.raises(io.InputError, match=r"f\.tsv:3"):
            io.read_object_table(p)

    def test_links_unknown_id(self, tmp_path):
        f = tmp_path / "f.tsv"
        f.write_text("id\tx\na\t1\nb\t2\n")
        l = tmp_path / "l.tsv"
        l.write_text("id_a\tid_b\na\tb\nb\tghost\n")
        with pytest.raises(io.InputError, match=r"l\.tsv:3.*ghost"):
            io.load_database(f, l, directed=True)

    def test_unknown_first_row_is_not_a_header(self, tmp_path):
        f = tmp_path / "f.tsv"
        f.write_text("id\tx\na\t1\nb\t2\n")
        l = tmp_path / "l.tsv"
        l.write_text("p\tq\na\tb\n")
        with pytest.raises(io.InputError, match=r"l\.tsv:1"):
            io.load_database(f, l, directed=True)

    def test_duplicate_links_collapse(self, tmp_path):
        f = tmp_path / "f.tsv"
        f.write_text("id\tx\na\t1\nb\t2\n")
        l = tmp_path / "l.tsv"
        l.write_text("a\tb\nb\ta\na\tb\n")
        db = io.load_database(f, l, directed=False)
        assert db.links.edges == (("a", "b"),)

    def test_table_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        from rbsets.relational import ObjectTable

        t = ObjectTable(("a", "b", "c"), rng.normal(size=(3, 4)))
        io.write_object_table(tmp_path / "t.tsv", t)
        back = io.read_object_table(tmp_path / "t.tsv")
        np.testing.assert_array_equal(back.features, t.features)


class TestFit:
    def test_negative_weight_reflects_population(self, synth):
        b = fit_model(synth.db, FitOptions(seed=0))
        assert len(b.negatives) == 10 * b.n_pos
        unlinked = 120 * 120 - len(synth.db.links)
        assert b.negatives[0].weight == pytest.approx(unlinked / len(b.negatives))
        assert auto_negative_weight(synth.db, 10) == unlinked / 10

    def test_prior_matches_positive_gram(self, synth):
        b = fit_model(synth.db, FitOptions(seed=0))
        x = b.featurizer(list(synth.db.links.edges))
        gram = x.T @ x
        diff = b.prior.precision - gram
        np.testing.assert_allclose(diff - np.diag(np.diag(diff)), 0.0, atol=1e-9)

    def test_recovers_planted_direction(self):
        # a sharp predicate: every pair above threshold is linked
        s = generate_synthetic_db(300, 10, 1, 1500, 0.0, seed=0, signal_power=1.0, spectrum=4.0, link_fraction=1500 / 22500)
        b = fit_model(s.db, FitOptions(seed=0))
        assert spearmanr(b.theta_hat, s.thetas[0]).statistic > 0.7

    def test_bundle_roundtrip(self, synth, tmp_path):
        b = fit_model(synth.db, FitOptions(seed=1, svd_k=4))
        save_bundle(b, tmp_path / "m")
        back = load_bundle(tmp_path / "m")
        np.testing.assert_array_equal(back.prior.mean, b.prior.mean)
        np.testing.assert_array_equal(back.prior.covariance, b.prior.covariance)
        assert back.db.links.edges == b.db.links.edges
        assert back.negatives == b.negatives
        np.testing.assert_array_equal(back.db.table_a.features, b.db.table_a.features)

    def test_unknown_scorer(self, synth):
        b = fit_model(synth.db, FitOptions(seed=0))
        with pytest.raises(ValueError, match="rbsets, cos, nns, mls, sbsets"):
            make_scorer("bogus", b)


class TestProtocol:
    def test_record_count(self, synth):
        b = fit_model(synth.db, FitOptions(seed=0))
        p = Protocol(min_support=10, replications=5, category_pairs=[["cat0", "cat1"]])
        report, info = evaluate_protocol(b, p)
        assert len(report.records) == 20
        assert {r.scorer for r in report.records} == {"rbsets", "cos", "nns", "mls"}
        assert all(0 <= r.auc <= 1 and 0 <= r.top10 <= 1 for r in report.records)

    def test_support_too_high(self, synth):
        b = fit_model(synth.db, FitOptions(seed=0))
        with pytest.raises(EmptyProtocolError):
            evaluate_protocol(b, Protocol(min_support=10_000))

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            Protocol.from_dict({"replicationz": 3})

    def test_needs_categories(self, synth):
        from rbsets.relational import RelationalDatabase

        db = RelationalDatabase(synth.db.table_a, synth.db.table_b, synth.db.links)
        b = fit_model(db, FitOptions(seed=0))
        with pytest.raises(DataError):
            evaluate_protocol(b, Protocol(min_support=1))

    def test_deterministic(self, synth):
        b = fit_model(synth.db, FitOptions(seed=0))
        p = Protocol(min_support=10, replications=2, filter_radius=0)
        a, _ = evaluate_protocol(b, p)
        c, _ = evaluate_protocol(b, p, threads=3)
        assert a.to_dict() == c.to_dict()
