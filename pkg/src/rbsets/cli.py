"""Command-line entry point: fit, query, evaluate and bench.

Exit codes: 0 success, 2 usage or input error, 3 query pair not linked,
4 no category pair meets the evaluation support threshold.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__, io
from .benchmark import BenchConfig, complexity_probe
from .evaluation import format_win_table
from .pipeline import (
    EmptyProtocolError,
    FitOptions,
    Protocol,
    evaluate_protocol,
    fit_model,
    input_digests,
    load_bundle,
    make_scorer,
    save_bundle,
)
from .ranking import SCORER_NAMES, QuerySet, default_radius, run_query
from .relational import ASYMMETRIC, SYMMETRIC, DataError
from .synthetic import generate_synthetic_db

log = logging.getLogger("rbsets")

EXIT_USAGE = 2
EXIT_NOT_LINKED = 3
EXIT_EMPTY_PROTOCOL = 4

# keys a --config file may set; command-line flags take precedence
CONFIG_KEYS = {
    "features_a", "features_b", "links", "categories", "directed", "mode", "svd_k", "c",
    "neg_ratio", "neg_weight", "l2", "ridge", "filter_radius", "scorer", "seed", "out",
    "threads", "model", "query", "protocol", "sbsets_products",
}


class CommandError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of run settings; flags override it")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="scoring threads (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbsets", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the global link model and empirical prior")
    _common(p)
    p.add_argument("--features-a", help="TSV of object features (header row, id first)")
    p.add_argument("--features-b", help="second object table when links join two spaces")
    p.add_argument("--links", help="TSV of linked id pairs")
    p.add_argument("--categories", help="TSV of object_id, category_label rows")
    p.add_argument("--directed", dest="directed", action="store_true", default=None)
    p.add_argument("--undirected", dest="directed", action="store_false")
    p.add_argument("--mode", choices=(ASYMMETRIC, SYMMETRIC), default=None)
    p.add_argument("--svd-k", type=int, default=None)
    p.add_argument("--c", default=None, help='prior smoothing constant or "auto" (= number of links)')
    p.add_argument("--neg-ratio", type=int, default=None)
    p.add_argument("--neg-weight", type=float, default=None)
    p.add_argument("--l2", type=float, default=None)
    p.add_argument("--ridge", type=float, default=None)

    p = sub.add_parser("query", help="rank linked pairs against a query set")
    _common(p)
    p.add_argument("--model", help="model bundle directory written by fit")
    p.add_argument("--query", help="TSV of query pairs (may be empty)")
    p.add_argument("--scorer", choices=SCORER_NAMES, default=None)
    p.add_argument("--filter-radius", type=int, choices=(0, 1, 2), default=None,
                   help="neighbourhood filter; omitted = chosen from link density")
    p.add_argument("--no-sbsets-products", dest="sbsets_products", action="store_false", default=None,
                   help="sbsets scorer without the a*b product bits")

    p = sub.add_parser("evaluate", help="run an evaluation protocol over category pairs")
    _common(p)
    p.add_argument("--model", help="model bundle directory written by fit")
    p.add_argument("--protocol", help="JSON protocol file")
    p.add_argument("--curves", action="store_true", help="write precision/recall curves")

    p = sub.add_parser("bench", help="synthetic benchmark: generate, fit, evaluate, time")
    _common(p)
    p.add_argument("--quick", action="store_true", help="small instance for a fast check")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge --config contents under explicit flags."""
    cfg: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CommandError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise CommandError(f"config {args.config} must hold a JSON object")
        unknown = set(cfg) - CONFIG_KEYS
        if unknown:
            raise CommandError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, value in vars(args).items():
        if key in ("config", "command", "verbose"):
            continue
        if value is not None:
            cfg[key] = value
    cfg.setdefault("seed", 0)
    cfg.setdefault("threads", 1)
    if "scorer" in cfg and cfg["scorer"] not in SCORER_NAMES:
        raise CommandError(f"unknown scorer {cfg['scorer']!r}; valid scorers: {', '.join(SCORER_NAMES)}")
    return cfg


def _need(cfg: dict, *keys) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise CommandError(f"missing required setting(s): {flags}")


def _write_timings(out: Path, timings: dict) -> None:
    # wall-clock figures live apart from the reproducible outputs
    io.write_json(out / "timings.json", timings)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(cfg: dict) -> Path:
    _need(cfg, "features_a", "links", "out")
    t0 = time.perf_counter()
    db = io.load_database(
        cfg["features_a"], cfg["links"], bool(cfg.get("directed", False)),
        cfg.get("features_b"), cfg.get("categories"),
    )
    c = cfg.get("c", "auto")
    if c != "auto":
        try:
            c = float(c)
        except ValueError:
            raise CommandError(f'--c must be a positive number or "auto", got {c!r}') from None
        if c <= 0:
            raise CommandError(f"--c must be positive, got {c}")
    options = FitOptions(
        mode=cfg.get("mode", ASYMMETRIC),
        svd_k=cfg.get("svd_k"),
        c=c,
        neg_ratio=cfg.get("neg_ratio", 10),
        neg_weight=cfg.get("neg_weight"),
        l2=cfg.get("l2", FitOptions.l2),
        ridge=cfg.get("ridge"),
        seed=cfg["seed"],
    )
    bundle = fit_model(db, options)
    paths = {k: cfg.get(k) for k in ("features_a", "features_b", "links", "categories")}
    root = cfg.get("relative_to")
    shown = {k: (str(Path(v).relative_to(root)) if root else v) for k, v in paths.items() if v}
    bundle.extra = {"inputs": shown, "input_sha256": input_digests(paths)}
    out = save_bundle(bundle, cfg["out"])
    _write_timings(out, {"fit_seconds": time.perf_counter() - t0})
    print(f"fitted {bundle.n_pos} links, {len(bundle.negatives)} negatives, K = {bundle.theta_hat.size} -> {out}")
    return out


def cmd_query(cfg: dict) -> Path:
    _need(cfg, "model", "query", "out")
    scorer_name = cfg.get("scorer", "rbsets")
    t0 = time.perf_counter()
    bundle = load_bundle(cfg["model"])
    links = bundle.db.links
    pairs = io.read_pairs(cfg["query"], bundle.db.table_a, bundle.db.table_b)
    for lineno, pair in pairs:
        if links.canonical(pair) not in links:
            raise CommandError(
                f"{cfg['query']}:{lineno}: query pair {pair[0]}\t{pair[1]} is not a linked pair",
                EXIT_NOT_LINKED,
            )
    query = QuerySet.from_pairs([p for _, p in pairs], links, bundle.featurizer)
    if len(query) == 0 and scorer_name != "rbsets":
        raise CommandError(f"scorer {scorer_name!r} needs a nonempty query")
    radius = cfg.get("filter_radius")
    if radius is None:
        radius = default_radius(links, len(set(bundle.db.table_a.object_ids) | set(bundle.db.table_b.object_ids)))
    products = cfg.get("sbsets_products", True)
    scorer = make_scorer(scorer_name, bundle, sbsets_products=products)
    ranking = run_query(links, bundle.featurizer, scorer, query, radius, Path(cfg["query"]).stem, cfg["threads"])
    if ranking.warning:
        log.warning(ranking.warning)
    out = io.ensure_dir(cfg["out"])
    with open(out / "ranking.tsv", "w") as fh:
        fh.write("rank\tid_a\tid_b\tscore\n")
        for i, ((a, b), s) in enumerate(ranking.entries, start=1):
            fh.write(f"{i}\t{a}\t{b}\t{float(s)!r}\n")
    info = dict(ranking.info)
    timings = {k: info.pop(k) for k in ("fit_seconds", "score_seconds") if k in info}
    timings["wall_seconds"] = time.perf_counter() - t0
    io.write_json(out / "manifest.json", {
        "command": "query",
        "model": cfg["model"],
        "query": cfg["query"],
        "query_pairs": [list(p) for p in query.pairs],
        "scorer": scorer_name,
        "filter_radius": radius,
        "sbsets_products": products,
        "seed": cfg["seed"],
        "threads": cfg["threads"],
        "n_ranked": len(ranking),
        "warning": ranking.warning,
        **info,
    })
    _write_timings(out, timings)
    print(f"{scorer_name}: ranked {len(ranking)} pairs -> {out / 'ranking.tsv'}")
    return out


def _protocol(cfg: dict) -> Protocol:
    payload = {}
    if cfg.get("protocol"):
        try:
            payload = io.read_json(cfg["protocol"])
        except (OSError, json.JSONDecodeError) as exc:
            raise CommandError(f"cannot read protocol {cfg['protocol']}: {exc}") from None
    try:
        protocol = Protocol.from_dict(payload)
    except (TypeError, ValueError) as exc:
        raise CommandError(f"bad protocol: {exc}") from None
    bad = [s for s in protocol.scorers if s not in SCORER_NAMES]
    if bad:
        raise CommandError(f"unknown scorer(s) {', '.join(bad)}; valid scorers: {', '.join(SCORER_NAMES)}")
    if cfg.get("seed") is not None and "seed" not in payload:
        protocol.seed = cfg["seed"]
    if cfg.get("curves"):
        protocol.emit_curves = True
    return protocol


def _evaluate(bundle, protocol: Protocol, out: Path, threads: int, extra_manifest: dict):
    t0 = time.perf_counter()
    try:
        report, info = evaluate_protocol(
            bundle, protocol, threads, out / "curves" if protocol.emit_curves else None
        )
    except EmptyProtocolError as exc:
        raise CommandError(str(exc), EXIT_EMPTY_PROTOCOL) from None
    io.write_json(out / "report.json", report.to_dict())
    report.write_tsv(out / "report.tsv")
    table = format_win_table(report.win_table())
    (out / "wins.tsv").write_text(table + "\n")
    io.write_json(out / "manifest.json", {
        "command": "evaluate",
        "protocol": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(protocol).items()},
        "filter_radius": info["radius"],
        "symmetric": info["symmetric"],
        "threads": threads,
        **extra_manifest,
    })
    timings = {"evaluate_seconds": time.perf_counter() - t0, "scorer_seconds": info["scorer_seconds"]}
    return report, table, timings


def cmd_evaluate(cfg: dict) -> Path:
    _need(cfg, "model", "out")
    bundle = load_bundle(cfg["model"])
    protocol = _protocol(cfg)
    out = io.ensure_dir(cfg["out"])
    report, table, timings = _evaluate(bundle, protocol, out, cfg["threads"], {"model": cfg["model"]})
    _write_timings(out, timings)
    means = report.mean_metric("auc")
    print("mean AUC: " + "  ".join(f"{m} {v:.3f}" for m, v in means.items()))
    print(table)
    return out


def cmd_bench(cfg: dict) -> Path:
    _need(cfg, "out")
    bench = BenchConfig.quick() if cfg.get("quick") else BenchConfig()
    seed = cfg["seed"]
    out = io.ensure_dir(cfg["out"])
    t0 = time.perf_counter()
    synth = generate_synthetic_db(
        bench.n_objects, bench.V, bench.n_classes, bench.links_per_class, bench.noise, seed
    )
    data = io.ensure_dir(out / "data")
    io.write_object_table(data / "features.tsv", synth.db.table_a)
    io.write_pairs(data / "links.tsv", synth.db.links.edges)
    io.write_categories(data / "categories.tsv", synth.db.categories)
    t_gen = time.perf_counter()
    cmd_fit({
        "features_a": str(data / "features.tsv"), "links": str(data / "links.tsv"),
        "categories": str(data / "categories.tsv"), "directed": True, "seed": seed,
        "out": str(out / "model"), "relative_to": str(out),
    })
    t_fit = time.perf_counter()
    protocol = Protocol(
        min_support=min(50, bench.links_per_class), replications=bench.replications,
        query_size=bench.query_size, scorers=bench.scorers, filter_radius=0, seed=seed,
    )
    bundle = load_bundle(out / "model")
    eval_dir = io.ensure_dir(out / "eval")
    report, table, eval_timings = _evaluate(bundle, protocol, eval_dir, cfg["threads"], {"model": "model"})
    _write_timings(eval_dir, eval_timings)
    means = report.mean_metric("auc")
    probe = complexity_probe(int(bundle.theta_hat.size), seed=seed)
    summary = {
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(bench).items()},
        "seed": seed,
        "mean_auc": means,
        "mean_top10": report.mean_metric("top10"),
        "wins": report.win_table(),
        "rbsets_minus_nns": means["rbsets"] - means["nns"],
        "rbsets_minus_cos": means["rbsets"] - means["cos"],
    }
    io.write_json(out / "bench.json", summary)
    timings = {
        "generate_seconds": t_gen - t0,
        "fit_seconds": t_fit - t_gen,
        "evaluate_seconds": eval_timings["evaluate_seconds"],
        "scorer_seconds": eval_timings["scorer_seconds"],
        "scoring_complexity": probe,
        "total_seconds": time.perf_counter() - t0,
    }
    _write_timings(out, timings)
    print("mean AUC over %d queries:" % (len(report.records) // len(bench.scorers)))
    for m, v in means.items():
        print(f"  {m:<8}{v:.3f}")
    print(table)
    print(
        f"per-candidate scoring: K={probe['k']} {probe['per_candidate_seconds_k'] * 1e6:.3f} us, "
        f"2K {probe['per_candidate_seconds_2k'] * 1e6:.3f} us, ratio {probe['ratio']:.2f}"
    )
    print(f"total {timings['total_seconds']:.1f} s")
    return out


COMMANDS = {"fit": cmd_fit, "query": cmd_query, "evaluate": cmd_evaluate, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg)
    except CommandError as exc:
        print(f"rbsets {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"rbsets {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
