import json
import subprocess
import sys
import time

import pytest

from rbsets import io
from rbsets.cli import main
from rbsets.pipeline import load_bundle
from rbsets.ranking import candidate_pairs, default_radius
from rbsets.synthetic import generate_synthetic_db


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and p.name != "timings.json"}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    s = generate_synthetic_db(150, 6, 3, 40, 0.05, seed=2)
    io.write_object_table(d / "features.tsv", s.db.table_a)
    io.write_pairs(d / "links.tsv", s.db.links.edges)
    io.write_categories(d / "categories.tsv", s.db.categories)
    io.write_pairs(d / "query.tsv", [p for p, c in sorted(s.link_class.items()) if c == 0][:15])
    (d / "empty.tsv").write_text("")
    return d


@pytest.fixture(scope="module")
def model(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    code = main([
        "fit", "--features-a", str(data / "features.tsv"), "--links", str(data / "links.tsv"),
        "--categories", str(data / "categories.tsv"), "--directed", "--seed", "3", "--out", str(out),
    ])
    assert code == 0
    return out


class TestFit:
    def test_bundle_files(self, model):
        names = {p.name for p in model.iterdir()}
        assert {"prior.json", "manifest.json", "negatives.tsv", "objects_a.tsv", "links.tsv", "timings.json"} <= names
        manifest = json.loads((model / "manifest.json").read_text())
        assert manifest["n_pos"] > 0 and manifest["options"]["seed"] == 3

    def test_rerun_identical(self, data, model, tmp_path):
        main([
            "fit", "--features-a", str(data / "features.tsv"), "--links", str(data / "links.tsv"),
            "--categories", str(data / "categories.tsv"), "--directed", "--seed", "3", "--out", str(tmp_path),
        ])
        assert _tree(model) == _tree(tmp_path)

    def test_unknown_link_id(self, data, tmp_path, capsys):
        bad = tmp_path / "links.tsv"
        bad.write_text((data / "links.tsv").read_text() + "o000\tnobody\n")
        n_lines = len(bad.read_text().splitlines())
        code = main(["fit", "--features-a", str(data / "features.tsv"), "--links", str(bad), "--out", str(tmp_path / "m")])
        err = capsys.readouterr().err
        assert code == 2 and "nobody" in err and f":{n_lines}:" in err

    def test_config_file(self, data, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({
            "features_a": str(data / "features.tsv"), "links": str(data / "links.tsv"),
            "directed": True, "c": 5.0, "svd_k": 4,
        }))
        assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "m")]) == 0
        manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
        assert manifest["options"]["c"] == 5.0 and manifest["dimension"] == 13

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"colour": 1}))
        assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "m")]) == 2


class TestQuery:
    def test_row_count_matches_filter(self, data, model, tmp_path):
        assert main(["query", "--model", str(model), "--query", str(data / "query.tsv"), "--out", str(tmp_path)]) == 0
        rows = (tmp_path / "ranking.tsv").read_text().splitlines()
        bundle = load_bundle(model)
        qpairs = [p for _, p in io.read_pairs(data / "query.tsv")]
        radius = default_radius(bundle.db.links, len(bundle.db.table_a))
        assert len(rows) - 1 == len(candidate_pairs(bundle.db.links, qpairs, radius))
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["scorer"] == "rbsets" and manifest["posterior_iterations"] >= 1
        assert manifest["filter_radius"] == radius

    def test_empty_query_scores_zero(self, data, model, tmp_path, caplog):
        assert main(["query", "--model", str(model), "--query", str(data / "empty.tsv"), "--out", str(tmp_path)]) == 0
        scores = [float(line.split("\t")[3]) for line in (tmp_path / "ranking.tsv").read_text().splitlines()[1:]]
        assert scores and all(s == 0.0 for s in scores)
        assert "empty query" in caplog.text

    def test_unknown_scorer(self, data, model, tmp_path, capsys):
        with pytest.raises(SystemExit) as info:
            main(["query", "--model", str(model), "--query", str(data / "query.tsv"), "--scorer", "magic", "--out", str(tmp_path)])
        assert info.value.code == 2
        err = capsys.readouterr().err
        assert all(name in err for name in ("rbsets", "cos", "nns", "mls", "sbsets"))

    def test_unlinked_pair(self, data, model, tmp_path, capsys):
        bundle = load_bundle(model)
        ids = bundle.db.table_a.object_ids
        pair = next((a, b) for a in ids for b in ids if (a, b) not in bundle.db.links)
        q = tmp_path / "q.tsv"
        q.write_text(f"{pair[0]}\t{pair[1]}\n")
        assert main(["query", "--model", str(model), "--query", str(q), "--out", str(tmp_path / "r")]) == 3
        assert pair[0] in capsys.readouterr().err

    @pytest.mark.parametrize("scorer", ["cos", "nns", "mls", "sbsets"])
    def test_baselines(self, data, model, tmp_path, scorer):
        args = ["query", "--model", str(model), "--query", str(data / "query.tsv"), "--scorer", scorer, "--filter-radius", "0"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b"), "--threads", "3"]) == 0
        assert (tmp_path / "a" / "ranking.tsv").read_bytes() == (tmp_path / "b" / "ranking.tsv").read_bytes()


    def test_sbsets_without_products(self, data, model, tmp_path):
        args = ["query", "--model", str(model), "--query", str(data / "query.tsv"), "--scorer", "sbsets", "--filter-radius", "0"]
        assert main(args + ["--out", str(tmp_path / "p")]) == 0
        assert main(args + ["--no-sbsets-products", "--out", str(tmp_path / "q")]) == 0
        manifest = json.loads((tmp_path / "q" / "manifest.json").read_text())
        assert manifest["sbsets_products"] is False
        assert (tmp_path / "p" / "ranking.tsv").read_bytes() != (tmp_path / "q" / "ranking.tsv").read_bytes()


class TestEvaluate:
    def test_outputs(self, model, tmp_path):
        proto = tmp_path / "p.json"
        proto.write_text(json.dumps({"min_support": 20, "replications": 3, "filter_radius": 0}))
        assert main(["evaluate", "--model", str(model), "--protocol", str(proto), "--out", str(tmp_path / "e"), "--curves"]) == 0
        report = json.loads((tmp_path / "e" / "report.json").read_text())
        assert len(report["records"]) == 3 * 3 * 4
        assert (tmp_path / "e" / "wins.tsv").exists() and any((tmp_path / "e" / "curves").iterdir())

    def test_empty_protocol_exit(self, model, tmp_path):
        proto = tmp_path / "p.json"
        proto.write_text(json.dumps({"min_support": 10_000}))
        assert main(["evaluate", "--model", str(model), "--protocol", str(proto), "--out", str(tmp_path / "e")]) == 4


class TestBench:
    def test_quick_deterministic_and_fast(self, tmp_path):
        t0 = time.perf_counter()
        assert main(["bench", "--quick", "--seed", "5", "--out", str(tmp_path / "a")]) == 0
        elapsed = time.perf_counter() - t0
        assert elapsed < 60
        assert main(["bench", "--quick", "--seed", "5", "--out", str(tmp_path / "b")]) == 0
        assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
        timings = json.loads((tmp_path / "a" / "timings.json").read_text())
        assert timings["scoring_complexity"]["ratio"] <= 5

    def test_console_script(self, tmp_path):
        out = subprocess.run(
            [sys.executable, "-m", "rbsets.cli", "evaluate", "--model", str(tmp_path / "nothing"), "--out", str(tmp_path)],
            capture_output=True, text=True,
        )
        assert out.returncode == 2 and "no model bundle" in out.stderr
